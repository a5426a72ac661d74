"""Random typed IRR graphs for property tests."""

from hijack_assess.irr import IrrEdge, IrrGraph, NodeRef, ObjectKind, Relation
from hijack_assess.model import Prefix

K = ObjectKind


def random_graph(rng, n_nodes, n_ases=None, registries=("RIPE", "RADB")):
    n_ases = n_ases or max(2, n_nodes // 5)
    g = IrrGraph("random")
    refs = {k: [] for k in K}
    for _ in range(n_nodes):
        reg = rng.choice(registries)
        kind = rng.choice(list(K))
        if kind is K.AUT_NUM:
            key = rng.randint(1, n_ases)
        elif kind is K.ROUTE:
            length = rng.randint(16, 24)
            base = 0x0A000000 | (rng.getrandbits(length - 8) << (32 - length))
            key = (Prefix(base, length), rng.randint(1, n_ases))
        elif kind is K.INETNUM:
            length = rng.randint(8, 20)
            base = 0x0A000000 | (rng.getrandbits(length - 8) << (32 - length) if length > 8 else 0)
            key = (base, base + (1 << (32 - length)) - 1)
        else:
            key = f"{kind.value[:3].upper()}-{rng.randint(1, n_nodes)}"
        ref = NodeRef(kind, key, reg)
        if ref not in g.nodes:
            g.add_node(ref)
            refs[kind].append(ref)
    for _ in range(n_nodes * 2):
        add_random_edge(rng, g, refs)
    return g, refs


def add_random_edge(rng, g, refs):
    rel = rng.choice(list(Relation))
    if rel is Relation.MAINTAINED_BY:
        src_pool, dst_pool = [r for rs in refs.values() for r in rs], refs[K.MNTNER]
    elif rel is Relation.ORG:
        src_pool, dst_pool = [r for rs in refs.values() for r in rs], refs[K.ORGANISATION]
    elif rel is Relation.ORIGIN:
        src_pool, dst_pool = refs[K.ROUTE], refs[K.AUT_NUM]
    elif rel is Relation.IMPORT:
        src_pool, dst_pool = refs[K.AUT_NUM], refs[K.AUT_NUM]
    else:
        src_pool, dst_pool = refs[K.ROUTE], refs[K.INETNUM]
    if not src_pool:
        return None
    src = rng.choice(src_pool)
    if rel is Relation.IMPORT and rng.random() < 0.1:
        edge = IrrEdge(src, rel, None, orphaned=True, target_key="AS4200000001")
    elif not dst_pool:
        return None
    else:
        edge = IrrEdge(src, rel, rng.choice(dst_pool))
    g.add_edge(edge)
    return edge


def live_edges(g):
    return [(e.source, e.target) for e in g.edges if not e.orphaned and e.source != e.target]


def copy_graph(g, drop=lambda ref: False):
    """Rebuild ``g`` without the nodes matching ``drop`` (and their edges)."""
    out = IrrGraph(g.tag)
    for ref, obj in g.nodes.items():
        if not drop(ref):
            out.add_node(ref, obj)
    for e in g.edges:
        if drop(e.source) or (e.target is not None and drop(e.target)):
            continue
        out.add_edge(e)
    return out


def grow(rng, g, refs, n_nodes=5, n_edges=10):
    """A supergraph of ``g`` with a few random extra nodes and edges."""
    big = copy_graph(g)
    more, _ = random_graph(rng, n_nodes)
    pools = {k: list(v) for k, v in refs.items()}
    for ref, obj in more.nodes.items():
        if ref not in big.nodes:
            big.add_node(ref, obj)
            pools[ref.kind].append(ref)
    for _ in range(n_edges):
        add_random_edge(rng, big, pools)
    return big


class Event:
    def __init__(self, victim_as, victim_prefix, attacker_as, attacker_subprefix):
        self.victim_as, self.victim_prefix = victim_as, victim_prefix
        self.attacker_as, self.attacker_subprefix = attacker_as, attacker_subprefix


def random_event(rng, refs, n_ases):
    victim = rng.randint(1, n_ases)
    attacker = rng.choice([a for a in range(1, n_ases + 2) if a != victim])
    routes = refs[K.ROUTE]
    if routes and rng.random() < 0.6:
        sub = rng.choice(routes).key[0]
    else:
        length = rng.randint(16, 24)
        sub = Prefix(0x0A000000 | (rng.getrandbits(length - 8) << (32 - length)), length)
    return Event(victim, sub.supernet(sub.length - rng.randint(1, 4)), attacker, sub)


def attacker_owned(asn):
    def owned(ref):
        if ref.kind is K.AUT_NUM:
            return ref.key == asn
        if ref.kind is K.ROUTE:
            return ref.key[1] == asn
        return False

    return owned
