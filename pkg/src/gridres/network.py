"""Immutable network data model, microgrid topology sets, and test networks.

A network is a radial (tree) distribution feeder rooted at the substation,
node 0.  A designated subset of lines are switchable *connecting lines*;
opening all of them splits the feeder into disjoint microgrid subnetworks.
This module is pure data: construction, derived topology sets, validation and
JSON round-tripping.  No optimization logic lives here.

All quantities are per-unit.  Voltages are squared voltage magnitudes.
"""

from __future__ import annotations

import functools
import json
from dataclasses import dataclass, field, replace

GF_UTILITY = "gf_utility"
GF_FACILITY = "gf_facility"
PQ_VAR = "pq_var"
PQ_FIXED = "pq_fixed"
DER_CATEGORIES = (GF_UTILITY, GF_FACILITY, PQ_VAR, PQ_FIXED)

EdgeKey = tuple[int, int]


@dataclass(frozen=True)
class NodeSpec:
    """Per-node data: nominal load/DG and safe operating bounds.

    A node without a load has pc_max == 0; a node without a DG has
    pg_max == 0.  The substation (id 0) carries neither.
    """

    id: int
    pc_max: float = 0.0
    qc_max: float = 0.0
    pg_max: float = 0.0
    qg_max: float = 0.0
    v_load_min: float = 0.9
    v_load_max: float = 1.1
    v_dg_min: float = 0.92
    v_dg_max: float = 1.08
    f_load_min: float = 0.9
    f_load_max: float = 1.1
    f_dg_min: float = 0.92
    f_dg_max: float = 1.08
    lc_min: float = 0.8


@dataclass(frozen=True)
class EdgeSpec:
    """A distribution line.  ``is_connecting`` marks a switchable line."""

    from_node: int
    to_node: int
    r: float = 0.01
    x: float = 0.02
    is_connecting: bool = False

    @property
    def key(self) -> EdgeKey:
        return (self.from_node, self.to_node)


@dataclass(frozen=True)
class DerSpec:
    """A grid-interactive or fixed-setpoint DER.

    Grid-forming units (gf_utility / gf_facility) pair a microsource with a
    storage device and regulate through droop slopes m_p (frequency / active
    power) and m_q (voltage / reactive power).  pq_var units carry only the
    microsource; pq_fixed units behave like nodal DG capacity.
    """

    id: int
    location: int
    category: str
    pn_max: float = 0.0
    qn_max: float = 0.0
    pe_min: float = 0.0
    pe_max: float = 0.0
    qe_min: float = 0.0
    qe_max: float = 0.0
    m_p: float = 0.0
    m_q: float = 0.0
    f_ref: float = 1.0
    v_ref: float = 1.0
    p_ref: float = 0.0
    q_ref: float = 0.0

    @property
    def is_grid_forming(self) -> bool:
        return self.category in (GF_UTILITY, GF_FACILITY)

    @property
    def is_grid_interactive(self) -> bool:
        return self.category in (GF_UTILITY, GF_FACILITY, PQ_VAR)


@dataclass(frozen=True)
class CostCoefficients:
    """Loss-function weights: regulation, load control, shedding, islanding."""

    c_vr: float = 100.0
    c_fr: float = 100.0
    c_load: float = 0.0
    c_shed: float = 0.0
    c_mg: float = 0.0


@dataclass(frozen=True)
class NetworkSpec:
    """Immutable radial network: nodes, edges, DERs and cost coefficients."""

    nodes: tuple[NodeSpec, ...]
    edges: tuple[EdgeSpec, ...]
    ders: tuple[DerSpec, ...] = ()
    costs: CostCoefficients = CostCoefficients()
    v_nom: float = 1.0
    f_nom: float = 1.0

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def node(self, i: int) -> NodeSpec:
        return self.nodes[i]

    @property
    def connecting_edges(self) -> tuple[EdgeSpec, ...]:
        return tuple(e for e in self.edges if e.is_connecting)

    @property
    def gf_ders(self) -> tuple[DerSpec, ...]:
        return tuple(d for d in self.ders if d.is_grid_forming)

    @property
    def grid_interactive_ders(self) -> tuple[DerSpec, ...]:
        return tuple(d for d in self.ders if d.is_grid_interactive)

    @property
    def total_load_p(self) -> float:
        return sum(nd.pc_max for nd in self.nodes)

    def ders_at(self, i: int) -> tuple[DerSpec, ...]:
        return tuple(d for d in self.ders if d.location == i)


@dataclass(frozen=True)
class MicrogridPartition:
    """Derived microgrid topology sets.

    microgrids[i] is the node set of the (i+1)-th microgrid, ordered by the
    smallest contained node id.  isolating_sets[i] is the set of connecting
    lines that must all be open for that microgrid to operate as an isolated
    island (its boundary in the tree).  paths[j] lists the edges on the path
    from node j up to the substation.
    """

    microgrids: tuple[tuple[int, ...], ...]
    isolating_sets: tuple[tuple[EdgeKey, ...], ...]
    paths: tuple[tuple[EdgeKey, ...], ...]

    def microgrid_of(self, node: int) -> int:
        for k, members in enumerate(self.microgrids):
            if node in members:
                return k
        raise KeyError(f"node {node} is not in any microgrid")


@dataclass(frozen=True)
class Tree:
    """Oriented view of the feeder: parents, children and BFS order.

    oriented[e] gives edge e as (parent, child) regardless of the stored
    (from_node, to_node) order.
    """

    parent: tuple[int, ...]
    parent_edge: tuple[int, ...]
    children: tuple[tuple[int, ...], ...]
    child_edges: tuple[tuple[int, ...], ...]
    order: tuple[int, ...]
    oriented: tuple[EdgeKey, ...]


class NetworkError(ValueError):
    """Raised when a network file or spec violates a structural invariant."""


@functools.lru_cache(maxsize=128)
def tree_structure(spec: NetworkSpec) -> Tree:
    """Orients the edge list as a tree rooted at node 0.

    Raises NetworkError naming the offending edge or node when the edge set
    is not a connected tree over nodes 0..n-1.
    """
    n = spec.n_nodes
    if len(spec.edges) != n - 1:
        raise NetworkError(
            f"edges: expected {n - 1} edges for a {n}-node tree, got {len(spec.edges)}"
        )
    adj: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for e_idx, e in enumerate(spec.edges):
        for endpoint in (e.from_node, e.to_node):
            if not 0 <= endpoint < n:
                raise NetworkError(f"edge {e.key}: endpoint {endpoint} is not a node id")
        adj[e.from_node].append((e.to_node, e_idx))
        adj[e.to_node].append((e.from_node, e_idx))

    parent = [-1] * n
    parent_edge = [-1] * n
    seen = [False] * n
    seen[0] = True
    order = [0]
    queue = [0]
    while queue:
        u = queue.pop(0)
        for v, e_idx in adj[u]:
            if seen[v]:
                if v != parent[u]:
                    raise NetworkError(f"edges: not a tree (cycle through edge {spec.edges[e_idx].key})")
                continue
            seen[v] = True
            parent[v] = u
            parent_edge[v] = e_idx
            order.append(v)
            queue.append(v)
    if not all(seen):
        missing = [i for i, s in enumerate(seen) if not s]
        raise NetworkError(f"edges: not a tree (node {missing[0]} unreachable from substation)")

    children: list[list[int]] = [[] for _ in range(n)]
    child_edges: list[list[int]] = [[] for _ in range(n)]
    for v in order[1:]:
        children[parent[v]].append(v)
        child_edges[parent[v]].append(parent_edge[v])
    oriented = []
    for e_idx, e in enumerate(spec.edges):
        if parent[e.to_node] == e.from_node:
            oriented.append((e.from_node, e.to_node))
        else:
            oriented.append((e.to_node, e.from_node))
    return Tree(
        parent=tuple(parent),
        parent_edge=tuple(parent_edge),
        children=tuple(tuple(c) for c in children),
        child_edges=tuple(tuple(c) for c in child_edges),
        order=tuple(order),
        oriented=tuple(oriented),
    )


@functools.lru_cache(maxsize=128)
def derive_partition(spec: NetworkSpec) -> MicrogridPartition:
    """Splits the feeder into microgrids by removing all connecting lines.

    The resulting components (excluding the substation) are the microgrids,
    ordered by smallest contained node id.  Each microgrid's isolating set is
    the set of connecting lines with exactly one endpoint inside it.
    """
    tree = tree_structure(spec)
    n = spec.n_nodes
    connecting = {tree.oriented[i] for i, e in enumerate(spec.edges) if e.is_connecting}
    if not connecting:
        raise NetworkError("edges: no connecting lines defined")

    adj: list[list[int]] = [[] for _ in range(n)]
    for i, e in enumerate(spec.edges):
        if e.is_connecting:
            continue
        u, v = tree.oriented[i]
        adj[u].append(v)
        adj[v].append(u)

    comp = [-1] * n
    comp_count = 0
    for start in range(n):
        if comp[start] >= 0:
            continue
        stack = [start]
        comp[start] = comp_count
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if comp[v] < 0:
                    comp[v] = comp_count
                    stack.append(v)
        comp_count += 1

    substation_comp = comp[0]
    stray = [i for i in range(1, n) if comp[i] == substation_comp]
    if stray:
        raise NetworkError(
            f"node {stray[0]}: connected to the substation without crossing a connecting line"
        )

    groups: dict[int, list[int]] = {}
    for i in range(1, n):
        groups.setdefault(comp[i], []).append(i)
    microgrids = tuple(tuple(sorted(g)) for g in sorted(groups.values(), key=min))

    isolating = []
    for members in microgrids:
        members_set = set(members)
        boundary = tuple(
            key for key in (tree.oriented[i] for i, e in enumerate(spec.edges) if e.is_connecting)
            if (key[0] in members_set) != (key[1] in members_set)
        )
        isolating.append(boundary)

    paths = []
    for i in range(n):
        path = []
        v = i
        while v != 0:
            path.append(tree.oriented[tree.parent_edge[v]])
            v = tree.parent[v]
        paths.append(tuple(reversed(path)))

    return MicrogridPartition(
        microgrids=microgrids,
        isolating_sets=tuple(isolating),
        paths=tuple(paths),
    )


def nodal_dg_capacity(spec: NetworkSpec) -> tuple[list[float], list[float]]:
    """Effective fixed-setpoint DG capacity per node.

    pq_fixed DER entries are folded into the capacity of their node: a
    fixed-setpoint unit is indistinguishable from nodal DG generation that
    trips with the same switch.
    """
    pg = [nd.pg_max for nd in spec.nodes]
    qg = [nd.qg_max for nd in spec.nodes]
    for d in spec.ders:
        if d.category == PQ_FIXED:
            pg[d.location] += d.pn_max
            qg[d.location] += d.qn_max
    return pg, qg


def validate(spec: NetworkSpec) -> list[str]:
    """Checks every structural invariant; returns one message per violation."""
    out: list[str] = []
    n = spec.n_nodes
    for i, nd in enumerate(spec.nodes):
        if nd.id != i:
            out.append(f"node {i}: ids must be contiguous starting at 0 (got {nd.id})")
    sub = spec.nodes[0] if spec.nodes else None
    if sub is not None and (sub.pc_max != 0 or sub.pg_max != 0 or sub.qc_max != 0 or sub.qg_max != 0):
        out.append("node 0: substation must carry zero load and zero DG")
    for nd in spec.nodes:
        tag = f"node {nd.id}"
        if nd.pc_max < 0 or nd.qc_max < 0:
            out.append(f"{tag}: negative load demand")
        if nd.pg_max < 0 or nd.qg_max < 0:
            out.append(f"{tag}: negative DG capacity")
        if not nd.v_load_min < nd.v_load_max:
            out.append(f"{tag}: v_load_min must be < v_load_max")
        if not nd.v_dg_min < nd.v_dg_max:
            out.append(f"{tag}: v_dg_min must be < v_dg_max")
        if not nd.f_load_min < nd.f_load_max:
            out.append(f"{tag}: f_load_min must be < f_load_max")
        if not nd.f_dg_min < nd.f_dg_max:
            out.append(f"{tag}: f_dg_min must be < f_dg_max")
        if not 0.0 <= nd.lc_min <= 1.0:
            out.append(f"{tag}: lc_min must lie in [0, 1]")

    for e in spec.edges:
        if e.r <= 0 or e.x <= 0:
            out.append(f"edge {e.key}: r and x must be positive")
    try:
        tree_structure(spec)
    except NetworkError as exc:
        out.append(str(exc))
    else:
        if not any(e.is_connecting for e in spec.edges):
            out.append("edges: no connecting lines defined")
        else:
            try:
                derive_partition(spec)
            except NetworkError as exc:
                out.append(str(exc))

    seen_ids = set()
    for d in spec.ders:
        tag = f"der {d.id}"
        if d.id in seen_ids:
            out.append(f"{tag}: duplicate id")
        seen_ids.add(d.id)
        if d.category not in DER_CATEGORIES:
            out.append(f"{tag}: unknown category {d.category!r}")
            continue
        if d.location == 0:
            out.append(f"{tag}: located at substation")
        elif not 0 < d.location < n:
            out.append(f"{tag}: location {d.location} is not a node")
        if d.pn_max < 0 or d.qn_max < 0:
            out.append(f"{tag}: negative microsource cap")
        if d.is_grid_forming:
            if d.pe_max <= 0 or d.qe_max <= 0:
                out.append(f"{tag}: grid-forming DER needs positive storage caps")
            if d.m_p <= 0 or d.m_q <= 0:
                out.append(f"{tag}: grid-forming DER needs positive droop slopes")
            if not d.pe_min <= 0 <= d.pe_max:
                out.append(f"{tag}: pe_min <= 0 <= pe_max required")
            if not d.qe_min <= 0 <= d.qe_max:
                out.append(f"{tag}: qe_min <= 0 <= qe_max required")
        else:
            if d.pe_min != 0 or d.pe_max != 0 or d.qe_min != 0 or d.qe_max != 0:
                out.append(f"{tag}: pq DER must have zero storage caps")
            if d.category == PQ_VAR and d.pn_max <= 0:
                out.append(f"{tag}: pq_var DER needs a positive microsource cap")

    c = spec.costs
    if min(c.c_vr, c.c_fr, c.c_load, c.c_shed, c.c_mg) < 0:
        out.append("costs: coefficients must be nonnegative")
    if c.c_shed < c.c_load:
        out.append("costs: c_shed must be >= c_load")
    return out


# ---------------------------------------------------------------------------
# Test networks.  Topology tables transcribed from the three modified IEEE
# feeders: edge lists, connecting lines (switchable), and the nodes hosting
# the utility-owned and facility-level grid-forming DERs.
# ---------------------------------------------------------------------------

def _chain(a: int, b: int) -> list[EdgeKey]:
    return [(i, i + 1) for i in range(a, b)]

_EDGES_24: list[EdgeKey] = (
    _chain(0, 12)
    + [(2, 13)] + _chain(13, 16)
    + [(3, 17)] + _chain(17, 19)
    + [(6, 20)] + _chain(20, 24)
)
_CONNECTING_24 = {(0, 1), (6, 7), (2, 13), (3, 17), (6, 20)}
_UTILITY_24 = (1, 7, 13, 17, 20)
_FACILITY_24 = (3, 9, 15, 19, 22)

_EDGES_36: list[EdgeKey] = [
    (0, 1), (1, 2), (2, 3), (3, 4), (3, 5), (2, 6), (6, 7), (7, 8), (8, 9),
    (7, 10), (10, 11), (11, 12), (10, 13), (13, 14), (13, 15), (2, 16),
    (16, 17), (17, 18), (18, 19), (18, 20), (16, 21), (21, 22), (22, 23),
    (23, 24), (22, 25), (25, 26), (25, 27), (27, 28), (28, 29), (29, 30),
    (29, 31), (28, 32), (32, 33), (33, 34), (34, 35), (34, 36),
]
_CONNECTING_36 = {(0, 1), (2, 6), (7, 10), (2, 16), (16, 21), (25, 27), (28, 32)}
_UTILITY_36 = (1, 6, 10, 16, 21, 27, 32)
_FACILITY_36 = (3, 8, 12, 18, 23, 29, 34)

_LATERALS_118 = (
    (18, 27), (10, 17), (4, 9), (38, 46), (28, 35), (47, 54), (36, 37),
    (55, 62), (96, 99), (0, 1), (89, 95), (63, 69), (70, 77), (78, 80),
    (81, 85), (86, 88), (100, 106), (107, 113), (114, 118),
)
_EXTRA_118 = (
    (1, 2), (2, 3), (2, 4), (4, 28), (30, 36), (80, 81), (100, 114),
    (64, 78), (79, 86), (65, 89), (91, 96),
)
_CONNECTING_118 = {
    (0, 1), (2, 10), (11, 18), (29, 30), (29, 38), (35, 47), (29, 55),
    (1, 63), (65, 89), (69, 70), (79, 80), (106, 107), (1, 100), (100, 101),
}
_UTILITY_118 = (1, 10, 18, 30, 38, 47, 55, 63, 70, 80, 89, 100, 101, 107)
_FACILITY_118 = (3, 12, 20, 32, 40, 49, 57, 65, 72, 82, 91, 115, 103, 109)


def _edges_118() -> list[EdgeKey]:
    keys: list[EdgeKey] = []
    seen: set[EdgeKey] = set()
    for a, b in _LATERALS_118:
        for key in _chain(a, b):
            keys.append(key)
            seen.add(key)
    for key in _EXTRA_118:
        if key not in seen:
            keys.append(key)
            seen.add(key)
    for key in sorted(_CONNECTING_118):
        if key not in seen:
            keys.append(key)
            seen.add(key)
    return keys


_TOPOLOGIES = {
    24: (_EDGES_24, _CONNECTING_24, _UTILITY_24, _FACILITY_24),
    36: (_EDGES_36, _CONNECTING_36, _UTILITY_36, _FACILITY_36),
    118: (None, _CONNECTING_118, _UTILITY_118, _FACILITY_118),
}


def build_test_network(
    n: int,
    load_nodes: tuple[int, ...] | None = None,
    dg_nodes: tuple[int, ...] | None = None,
) -> NetworkSpec:
    """Constructs the n-node test feeder (n in {24, 36, 118}).

    Every line has r=0.01, x=0.02.  With alpha = 6/n, each DG node produces
    alpha and each load node demands 1.25*alpha (reactive = active/3), so the
    feeder's total net active demand is 0.75 pu for every n.  By default the
    odd non-substation nodes carry the loads and the even ones the DGs;
    override with load_nodes / dg_nodes.  Each microgrid hosts one
    utility-owned and one facility-level grid-forming DER.
    """
    if n not in _TOPOLOGIES:
        raise ValueError(f"unsupported test network size {n} (choose 24, 36, or 118)")
    edges_keys, connecting, utility_nodes, facility_nodes = _TOPOLOGIES[n]
    if edges_keys is None:
        edges_keys = _edges_118()

    if load_nodes is None:
        load_nodes = tuple(i for i in range(1, n + 1) if i % 2 == 1)
    if dg_nodes is None:
        dg_nodes = tuple(i for i in range(1, n + 1) if i % 2 == 0)
    load_set, dg_set = set(load_nodes), set(dg_nodes)

    alpha = 6.0 / n
    pc = 1.25 * alpha
    pg = alpha
    nodes = [
        NodeSpec(
            id=i,
            pc_max=pc if i in load_set else 0.0,
            qc_max=pc / 3.0 if i in load_set else 0.0,
            pg_max=pg if i in dg_set else 0.0,
            qg_max=pg / 3.0 if i in dg_set else 0.0,
        )
        for i in range(n + 1)
    ]
    edges = tuple(
        EdgeSpec(from_node=a, to_node=b, r=0.01, x=0.02, is_connecting=(a, b) in connecting)
        for a, b in edges_keys
    )

    total_pc = pc * len(load_set)
    gamma = total_pc / (8.0 * len(connecting))
    ders = []
    for node in sorted(utility_nodes):
        cap = 2.0 * gamma
        ders.append(DerSpec(
            id=len(ders), location=node, category=GF_UTILITY,
            pn_max=cap, qn_max=cap, pe_min=-cap, pe_max=cap, qe_min=-cap, qe_max=cap,
            m_p=0.1, m_q=0.2,
        ))
    for node in sorted(facility_nodes):
        ders.append(DerSpec(
            id=len(ders), location=node, category=GF_FACILITY,
            pn_max=gamma, qn_max=gamma, pe_min=-gamma, pe_max=gamma,
            qe_min=-gamma, qe_max=gamma,
            m_p=0.02, m_q=0.04,
        ))

    costs = CostCoefficients(
        c_vr=100.0, c_fr=100.0,
        c_load=100.0 / pc, c_shed=1000.0 / pc, c_mg=400.0,
    )
    return NetworkSpec(nodes=tuple(nodes), edges=edges, ders=tuple(ders), costs=costs)


# ---------------------------------------------------------------------------
# JSON serialization.  Field names follow docs/network-format.md; "from"/"to"
# and "location" are the on-disk names for EdgeSpec endpoints and DER siting.
# ---------------------------------------------------------------------------

_NODE_FIELDS = (
    "pc_max", "qc_max", "pg_max", "qg_max",
    "v_load_min", "v_load_max", "v_dg_min", "v_dg_max",
    "f_load_min", "f_load_max", "f_dg_min", "f_dg_max", "lc_min",
)
_DER_FIELDS = (
    "pn_max", "qn_max", "pe_min", "pe_max", "qe_min", "qe_max",
    "m_p", "m_q", "f_ref", "v_ref", "p_ref", "q_ref",
)


def to_dict(spec: NetworkSpec) -> dict:
    return {
        "nominals": {"v_nom": spec.v_nom, "f_nom": spec.f_nom},
        "costs": {
            "c_vr": spec.costs.c_vr, "c_fr": spec.costs.c_fr,
            "c_load": spec.costs.c_load, "c_shed": spec.costs.c_shed,
            "c_mg": spec.costs.c_mg,
        },
        "nodes": [
            {"id": nd.id, **{f: getattr(nd, f) for f in _NODE_FIELDS}}
            for nd in spec.nodes
        ],
        "edges": [
            {"from": e.from_node, "to": e.to_node, "r": e.r, "x": e.x,
             "is_connecting": e.is_connecting}
            for e in spec.edges
        ],
        "ders": [
            {"id": d.id, "location": d.location, "category": d.category,
             **{f: getattr(d, f) for f in _DER_FIELDS}}
            for d in spec.ders
        ],
    }


def from_dict(data: dict) -> NetworkSpec:
    nominals = data.get("nominals", {})
    costs = data.get("costs", {})
    nodes = tuple(
        NodeSpec(id=nd["id"], **{f: nd[f] for f in _NODE_FIELDS if f in nd})
        for nd in sorted(data["nodes"], key=lambda nd: nd["id"])
    )
    edges = tuple(
        EdgeSpec(
            from_node=e["from"], to_node=e["to"],
            r=e.get("r", 0.01), x=e.get("x", 0.02),
            is_connecting=e.get("is_connecting", False),
        )
        for e in data["edges"]
    )
    ders = tuple(
        DerSpec(
            id=d["id"], location=d["location"], category=d["category"],
            **{f: d[f] for f in _DER_FIELDS if f in d},
        )
        for d in data.get("ders", ())
    )
    return NetworkSpec(
        nodes=nodes, edges=edges, ders=ders,
        costs=CostCoefficients(**costs) if costs else CostCoefficients(),
        v_nom=nominals.get("v_nom", 1.0), f_nom=nominals.get("f_nom", 1.0),
    )


def save_network(spec: NetworkSpec, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(to_dict(spec), fh, indent=2)
        fh.write("\n")


def load_network(path: str) -> NetworkSpec:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    spec = from_dict(data)
    problems = validate(spec)
    if problems:
        raise NetworkError(f"{path}: " + "; ".join(problems))
    return spec
