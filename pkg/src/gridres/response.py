"""Lower-level operator behavior: optimal emergency response and the
uncontrolled disconnection cascade.

optimal_response solves the single-stage MILP for the chosen capability
(load control and component disconnects only, or additionally microgrid
islanding and DER dispatch).  autonomous_cascade simulates what happens with
no coordinated response at all: protection trips every load and DG whose
nodal voltage or frequency leaves its band, the linear power flow is
re-solved, and the process repeats to a fixed point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .model import (
    CAP_MICROGRID,
    CAP_NO_MICROGRID,
    LossBreakdown,
    MilpModel,
    ModelError,
    ModelOptions,
    STAGE_POST,
    build_model,
    check_hygiene,
    evaluate_loss,
)
from .network import (
    MicrogridPartition,
    NetworkSpec,
    derive_partition,
    nodal_dg_capacity,
    tree_structure,
)
from .solvers import INFEASIBLE, OPTIMAL, SolveParams, SolveResult, solve


@dataclass(frozen=True)
class TnDisturbance:
    """Substation-side sag: squared-voltage and frequency drop (pu)."""

    dv0: float = 0.0
    df0: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.dv0 < 1.0:
            raise ValueError("dv0 must lie in [0, 1)")
        if not 0.0 <= self.df0 < 1.0:
            raise ValueError("df0 must lie in [0, 1)")


NO_DISTURBANCE = TnDisturbance(0.0, 0.0)


@dataclass(frozen=True)
class AttackVector:
    """Binary disruption vectors: DGs per node, optionally loads and lines."""

    dg: tuple[int, ...]
    load: tuple[int, ...] | None = None
    line: tuple[int, ...] | None = None

    @classmethod
    def on_nodes(cls, nodes, n_nodes: int) -> "AttackVector":
        hits = set(nodes)
        bad = [i for i in hits if not 0 <= i < n_nodes]
        if bad:
            raise ValueError(f"attacked node {bad[0]} is not a node id")
        return cls(dg=tuple(1 if i in hits else 0 for i in range(n_nodes)))

    @classmethod
    def none(cls, n_nodes: int) -> "AttackVector":
        return cls(dg=(0,) * n_nodes)

    @property
    def cardinality(self) -> int:
        return sum(self.dg)

    @property
    def nodes(self) -> tuple[int, ...]:
        return tuple(i for i, hit in enumerate(self.dg) if hit)


@dataclass(frozen=True)
class OperatorResponse:
    """Decision part of a solution, aligned with the network ordering:
    kline with spec.connecting_edges, kappa/pr/qr with the grid-interactive
    DER list, the rest with node ids."""

    kline: tuple[int, ...]
    kappa: tuple[int, ...]
    pr: tuple[float, ...]
    qr: tuple[float, ...]
    lc: tuple[float, ...]
    kc: tuple[int, ...]
    kg: tuple[int, ...]


@dataclass(frozen=True)
class NetworkState:
    """Physical part of a solution (per node / edge / grid-forming DER)."""

    pt: tuple[float, ...]
    qt: tuple[float, ...]
    P: tuple[float, ...]
    Q: tuple[float, ...]
    v: tuple[float, ...]
    f: tuple[float, ...]
    pn: tuple[float, ...]
    qn: tuple[float, ...]
    pe: tuple[float, ...]
    qe: tuple[float, ...]


@dataclass(frozen=True)
class ResponseResult:
    response: OperatorResponse
    state: NetworkState
    loss: LossBreakdown
    solve: SolveResult
    model: MilpModel


class HygieneError(RuntimeError):
    """A solved point violates a numerical-hygiene invariant."""


def extract_solution(
    spec: NetworkSpec, assignment: dict[str, float], prefix: str = ""
) -> tuple[OperatorResponse, NetworkState]:
    tree = tree_structure(spec)
    n = spec.n_nodes

    def val(base: str) -> float:
        return assignment[prefix + base]

    def ename(e_idx: int) -> str:
        u, v = tree.oriented[e_idx]
        return f"{u},{v}"

    connecting_idx = [i for i, e in enumerate(spec.edges) if e.is_connecting]
    gi = spec.grid_interactive_ders
    gf = spec.gf_ders
    response = OperatorResponse(
        kline=tuple(int(round(val(f"kline[{ename(i)}]"))) for i in connecting_idx),
        kappa=tuple(int(round(val(f"kappa[{d.id}]"))) for d in gf),
        pr=tuple(val(f"pr[{d.id}]") for d in gi),
        qr=tuple(val(f"qr[{d.id}]") for d in gi),
        lc=tuple(val(f"lc[{i}]") for i in range(n)),
        kc=tuple(int(round(val(f"kc[{i}]"))) for i in range(n)),
        kg=tuple(int(round(val(f"kg[{i}]"))) for i in range(n)),
    )
    state = NetworkState(
        pt=tuple(val(f"pt[{i}]") for i in range(n)),
        qt=tuple(val(f"qt[{i}]") for i in range(n)),
        P=tuple(val(f"P[{ename(i)}]") for i in range(len(spec.edges))),
        Q=tuple(val(f"Q[{ename(i)}]") for i in range(len(spec.edges))),
        v=tuple(val(f"v[{i}]") for i in range(n)),
        f=tuple(val(f"f[{i}]") for i in range(n)),
        pn=tuple(val(f"pn[{d.id}]") for d in gf),
        qn=tuple(val(f"qn[{d.id}]") for d in gf),
        pe=tuple(val(f"pe[{d.id}]") for d in gf),
        qe=tuple(val(f"qe[{d.id}]") for d in gf),
    )
    return response, state


def droop_tightness(spec: NetworkSpec, response: OperatorResponse, state: NetworkState) -> float:
    """Largest droop-equality residual over DERs that are grid-forming now."""
    worst = 0.0
    gi = spec.grid_interactive_ders
    gf_pos = {d.id: k for k, d in enumerate(spec.gf_ders)}
    for pos, d in enumerate(gi):
        if not d.is_grid_forming or not response.kappa[gf_pos[d.id]]:
            continue
        v_gap = abs(state.v[d.location] - (d.v_ref - d.m_q * (response.qr[pos] - d.q_ref)))
        f_gap = abs(state.f[d.location] - (d.f_ref - d.m_p * (response.pr[pos] - d.p_ref)))
        worst = max(worst, v_gap, f_gap)
    return worst


def verify_hygiene(
    spec: NetworkSpec,
    model: MilpModel,
    assignment: dict[str, float],
    response: OperatorResponse,
    state: NetworkState,
) -> None:
    report = check_hygiene(model, assignment)
    problems = report.check()
    droop_gap = droop_tightness(spec, response, state)
    if droop_gap > 1e-6:
        problems.append(f"droop equality gap {droop_gap:.2e}")
    if problems:
        raise HygieneError("; ".join(problems))


def optimal_response(
    spec: NetworkSpec,
    attack: AttackVector | None = None,
    disturbance: TnDisturbance = NO_DISTURBANCE,
    capability: str = CAP_MICROGRID,
    params: SolveParams = SolveParams(),
    backend=None,
    check: bool = True,
    partition: MicrogridPartition | None = None,
) -> ResponseResult:
    """Globally optimal single-stage response for capability c or d.

    Full shedding plus full islanding is always feasible, so an infeasible
    status is an internal error, not an operating condition.
    """
    if attack is None:
        attack = AttackVector.none(spec.n_nodes)
    partition = partition or derive_partition(spec)
    model = build_model(
        spec, partition, attack, disturbance,
        ModelOptions(capability=capability, stage=STAGE_POST),
    )
    result = solve(model, params, backend=backend)
    if result.status == INFEASIBLE or not result.assignment:
        raise ModelError(
            f"inner response problem reported {result.status}; the model admits "
            "full shedding, so this indicates a solver or model defect"
        )
    response, state = extract_solution(spec, result.assignment)
    loss = evaluate_loss(state, response, spec)
    if check:
        verify_hygiene(spec, model, result.assignment, response, state)
        if result.status == OPTIMAL and abs(loss.total - result.objective) > 1e-6 * max(1.0, abs(loss.total)):
            raise HygieneError(
                f"objective {result.objective} disagrees with loss recomputation {loss.total}"
            )
    return ResponseResult(response, state, loss, result, model)


def baseline_loss(
    spec: NetworkSpec,
    capability: str = CAP_MICROGRID,
    params: SolveParams = SolveParams(),
    backend=None,
) -> float:
    """Loss with no attack and no disturbance under the given capability."""
    return optimal_response(
        spec, AttackVector.none(spec.n_nodes), NO_DISTURBANCE, capability,
        params, backend,
    ).loss.total


# ---------------------------------------------------------------------------
# Uncontrolled cascade (autonomous protection-driven disconnections).
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CascadeEvent:
    round: int
    component: str  # "load" | "dg"
    node: int


@dataclass(frozen=True)
class CascadeResult:
    response: OperatorResponse
    state: NetworkState
    loss: LossBreakdown
    trace: tuple[CascadeEvent, ...]
    rounds: int


def _tree_power_flow(spec: NetworkSpec, pt: list[float], qt: list[float], dv0: float):
    """LinDistFlow on the intact tree: flows bottom-up, voltages top-down."""
    tree = tree_structure(spec)
    n = spec.n_nodes
    P = [0.0] * len(spec.edges)
    Q = [0.0] * len(spec.edges)
    for node in reversed(tree.order):
        if node == 0:
            continue
        e = tree.parent_edge[node]
        P[e] = pt[node] + sum(P[ce] for ce in tree.child_edges[node])
        Q[e] = qt[node] + sum(Q[ce] for ce in tree.child_edges[node])
    v = [0.0] * n
    v[0] = spec.v_nom - dv0
    for node in tree.order:
        for ce in tree.child_edges[node]:
            child = tree.oriented[ce][1]
            edge = spec.edges[ce]
            v[child] = v[node] - 2.0 * edge.r * P[ce] - 2.0 * edge.x * Q[ce]
    return P, Q, v


def autonomous_cascade(
    spec: NetworkSpec,
    attack: AttackVector | None = None,
    disturbance: TnDisturbance = NO_DISTURBANCE,
    mode: str = "synchronous",
) -> CascadeResult:
    """Fixed point of protection-driven tripping with no coordinated response.

    No islanding happens (every connecting line stays closed), grid-forming
    DERs remain inactive with zero output, and connected loads draw their full
    demand.  Each round re-solves the linear power flow and trips every
    component whose nodal voltage or frequency violates its band
    (mode="sequential" trips only the lowest-numbered violating component per
    round).  The disconnection set grows monotonically, so the iteration
    terminates within one round per component.
    """
    if mode not in ("synchronous", "sequential"):
        raise ValueError(f"unknown cascade mode {mode!r}")
    if attack is None:
        attack = AttackVector.none(spec.n_nodes)
    n = spec.n_nodes
    pg_eff, qg_eff = nodal_dg_capacity(spec)
    kc = [1 if attack.load and attack.load[i] else 0 for i in range(n)]
    kg = [1 if attack.dg[i] else 0 for i in range(n)]
    if attack.line is not None and any(attack.line):
        raise ModelError("line attacks have no autonomous-cascade semantics")

    f_value = spec.f_nom - disturbance.df0
    trace: list[CascadeEvent] = []
    rounds = 0
    P = Q = None
    v = [spec.v_nom] * n
    for rounds in range(1, 2 * n + 2):
        pt = [(0.0 if kc[i] else spec.nodes[i].pc_max)
              - (0.0 if kg[i] else pg_eff[i]) for i in range(n)]
        qt = [(0.0 if kc[i] else spec.nodes[i].qc_max)
              - (0.0 if kg[i] else qg_eff[i]) for i in range(n)]
        P, Q, v = _tree_power_flow(spec, pt, qt, disturbance.dv0)
        trips: list[tuple[str, int]] = []
        for i in range(n):
            nd = spec.nodes[i]
            if not kc[i] and not (nd.v_load_min <= v[i] <= nd.v_load_max
                                  and nd.f_load_min <= f_value <= nd.f_load_max):
                trips.append(("load", i))
            if not kg[i] and not (nd.v_dg_min <= v[i] <= nd.v_dg_max
                                  and nd.f_dg_min <= f_value <= nd.f_dg_max):
                trips.append(("dg", i))
        if not trips:
            break
        trips.sort(key=lambda t: (t[1], t[0]))
        if mode == "sequential":
            trips = trips[:1]
        for component, node in trips:
            if component == "load":
                kc[node] = 1
                has_component = spec.nodes[node].pc_max > 0
            else:
                kg[node] = 1
                has_component = pg_eff[node] > 0
            if has_component:
                trace.append(CascadeEvent(rounds, component, node))
    else:
        raise RuntimeError("cascade failed to reach a fixed point")

    gi = spec.grid_interactive_ders
    response = OperatorResponse(
        kline=(0,) * len(spec.connecting_edges),
        kappa=(0,) * len(spec.gf_ders),
        pr=(0.0,) * len(gi),
        qr=(0.0,) * len(gi),
        lc=tuple(0.0 if kc[i] else 1.0 for i in range(n)),
        kc=tuple(kc),
        kg=tuple(kg),
    )
    pt = [(0.0 if kc[i] else spec.nodes[i].pc_max)
          - (0.0 if kg[i] else pg_eff[i]) for i in range(n)]
    qt = [(0.0 if kc[i] else spec.nodes[i].qc_max)
          - (0.0 if kg[i] else qg_eff[i]) for i in range(n)]
    n_gf = len(spec.gf_ders)
    state = NetworkState(
        pt=tuple(pt), qt=tuple(qt), P=tuple(P), Q=tuple(Q),
        v=tuple(v), f=(f_value,) * n,
        pn=(0.0,) * n_gf, qn=(0.0,) * n_gf, pe=(0.0,) * n_gf, qe=(0.0,) * n_gf,
    )
    loss = evaluate_loss(state, response, spec)
    return CascadeResult(response, state, loss, tuple(trace), rounds)
