from .core import AssessmentService

__all__ = ["AssessmentService", "create_app"]


def create_app(service: AssessmentService):
    from .app import create_app as _create

    return _create(service)
