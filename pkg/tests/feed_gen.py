"""Random update feeds with a shadow table, for replay property tests."""

from conftest import P
from hijack_assess.rib import BgpUpdate, UpdateKind, withdraw

POOL = [P(s) for s in ("10.0.0.0/8", "10.0.0.0/9", "10.128.0.0/9", "10.0.0.0/10", "10.64.0.0/10",
                       "10.0.0.0/12", "10.16.0.0/12", "10.0.0.0/16", "10.1.0.0/16", "10.64.0.0/16")]


def random_feed(rng, n, peers=4, ases=8):
    """Random announce/withdraw sequence with a shadow table for valid withdrawals."""
    state = {}
    out = []
    for t in range(n):
        if state and rng.random() < 0.35:
            peer, prefix = rng.choice(sorted(state, key=lambda k: (k[0], k[1])))
            del state[(peer, prefix)]
            out.append(withdraw(t, prefix, peer))
        else:
            peer = rng.randint(1, peers)
            prefix = rng.choice(POOL)
            path = (100 + peer, rng.randint(1, ases))
            state[(peer, prefix)] = path
            out.append(BgpUpdate(t, UpdateKind.ANNOUNCE, prefix, peer, path))
    return out


def shadow_states(feed):
    state = {}
    for u in feed:
        if u.kind is UpdateKind.ANNOUNCE:
            state[(u.peer, u.prefix)] = u.path
        else:
            state.pop((u.peer, u.prefix), None)
        yield dict(state)
