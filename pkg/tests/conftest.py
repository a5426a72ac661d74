import random
from pathlib import Path

import pytest

from hijack_assess.model import Prefix, Route

FIXTURES = Path(__file__).parent / "fixtures"

# names from the worked example
ALICE, CAROL, DAVE = 64500, 64501, 64502
OSCAR, PAUL, MALLORY = 64510, 64511, 64666


@pytest.fixture
def fixtures():
    return FIXTURES


def P(text):
    return Prefix.parse(text)


def R(path, prefix):
    return Route(tuple(path), P(prefix) if isinstance(prefix, str) else prefix)


def random_prefix(rng, base=0x0A000000, min_len=8, max_len=12):
    """Prefixes under one /8 so random ribs actually nest."""
    length = rng.randint(min_len, max_len)
    bits = rng.getrandbits(length - 8) << (32 - length) if length > 8 else 0
    return Prefix(base | bits, length)


def random_routes(rng, n_routes, n_ases=50, max_path=4):
    out = set()
    for _ in range(n_routes):
        p = random_prefix(rng)
        path = [rng.randint(1, n_ases) for _ in range(rng.randint(1, max_path))]
        out.add(Route(tuple(path), p))
    return out


@pytest.fixture
def rng():
    return random.Random(1234)


def mixed20_stores(seed=0, **overrides):
    """Stores for the mixed-20 fixture, loaded the way the CLI does it."""
    from hijack_assess.cli import load_stores
    from hijack_assess.irr import DEFAULT_MAX_DEPTH
    from hijack_assess.rib import DEFAULT_RETENTION
    from hijack_assess.tls import DEFAULT_PARALLELISM

    d = FIXTURES / "mixed20"
    args = dict(
        table_dump=None,
        irr=(d / "ripe.db", d / "radb.db"),
        ground_truth=d / "ground_truth.txt",
        scanner_fixture=d / "scanner.txt",
        seed=seed,
        max_depth=DEFAULT_MAX_DEPTH,
        retention=DEFAULT_RETENTION,
        parallelism=DEFAULT_PARALLELISM,
        strict=True,
    )
    args.update(overrides)
    return load_stores(**args)
