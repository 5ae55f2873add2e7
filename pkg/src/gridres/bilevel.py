"""Upper level of the attacker-operator problem.

Three engines:

* enumerate_maximin -- exact worst-case loss over all attacks within a
  cardinality budget (guard-railed exhaustive search).
* benders_min_cardinality -- master/inner decomposition searching the
  smallest attack whose optimal-response loss reaches a target.  The master
  minimizes attack cardinality over a pool of combinatorial cuts; each failed
  candidate d contributes a monotone no-good cut discarding d together with
  all of its subsets (valid because loss is nondecreasing in the attack set),
  and each candidate that improves on the best loss seen so far additionally
  anchors the search: the top ceil(epsilon*|d|) of its components by
  singleton loss impact are pinned into all later candidates.  epsilon=0
  keeps only the no-good cuts and is exact for min cardinality (at
  enumeration-like cost); larger epsilon pins more aggressively, ramping the
  cardinality in few iterations at the price of possibly passing over
  optimal attacks.
* resilience_curve -- per-budget resilience under the cascade, the
  no-microgrid response and the microgrid response.

Resilience is reported as 100*(1 - loss/l_max), where l_max is the loss with
every component disconnected: full shedding of all loads, every connecting
line opened, and worst deviations pinned at the substation sag.
"""

from __future__ import annotations

import itertools
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

from .model import CAP_MICROGRID, CAP_NO_MICROGRID, MilpModel
from .network import NetworkSpec, nodal_dg_capacity
from .response import (
    AttackVector,
    NO_DISTURBANCE,
    TnDisturbance,
    autonomous_cascade,
    optimal_response,
)
from .solvers import SolveParams, solve

ENGINE_CASCADE = "cascade"
ENGINE_NO_MICROGRID = "no_microgrid"
ENGINE_MICROGRID = "microgrid"

_ENGINE_CAPABILITY = {
    ENGINE_NO_MICROGRID: CAP_NO_MICROGRID,
    ENGINE_MICROGRID: CAP_MICROGRID,
}


@dataclass(frozen=True)
class BendersConfig:
    epsilon: float = 0.5
    max_iterations: int = 500
    loss_target: float | None = None

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass(frozen=True)
class ResilienceReport:
    loss: float
    l_max: float
    resilience_pct: float
    attack: AttackVector
    cardinality: int
    iterations: int
    wall_time_s: float
    engine: str = ENGINE_MICROGRID
    target_reached: bool = True


def compute_l_max(spec: NetworkSpec, disturbance: TnDisturbance = NO_DISTURBANCE) -> float:
    """Normalization constant: loss of the fully disconnected network."""
    shed = spec.costs.c_shed * sum(nd.pc_max for nd in spec.nodes)
    islanding = spec.costs.c_mg * len(spec.connecting_edges)
    deviation = spec.costs.c_vr * disturbance.dv0 + spec.costs.c_fr * disturbance.df0
    total = shed + islanding + deviation
    if total <= 0:
        raise ValueError("l_max is not positive; check cost coefficients")
    return total


def attackable_nodes(spec: NetworkSpec) -> tuple[int, ...]:
    """Nodes whose DG disconnection can change the inner optimum.

    Forcing kg=1 at a node with zero DG capacity alters no constraint that
    binds and no objective term, so attack search is restricted to DG nodes.
    """
    pg_eff, _ = nodal_dg_capacity(spec)
    return tuple(i for i in range(1, spec.n_nodes) if pg_eff[i] > 0)


def attack_loss(
    spec: NetworkSpec,
    attack: AttackVector,
    disturbance: TnDisturbance,
    engine: str,
    params: SolveParams = SolveParams(),
) -> float:
    if engine == ENGINE_CASCADE:
        return autonomous_cascade(spec, attack, disturbance).loss.total
    return optimal_response(
        spec, attack, disturbance, _ENGINE_CAPABILITY[engine], params
    ).loss.total


def _loss_worker(args) -> tuple[tuple[int, ...], float]:
    spec, nodes, disturbance, engine, params = args
    attack = AttackVector.on_nodes(nodes, spec.n_nodes)
    return nodes, attack_loss(spec, attack, disturbance, engine, params)


def _map_losses(
    spec: NetworkSpec,
    candidates: list[tuple[int, ...]],
    disturbance: TnDisturbance,
    engine: str,
    params: SolveParams,
    workers: int | None,
) -> dict[tuple[int, ...], float]:
    jobs = [(spec, nodes, disturbance, engine, params) for nodes in candidates]
    if workers is None:
        workers = os.cpu_count() or 1
    out: dict[tuple[int, ...], float] = {}
    if workers <= 1 or len(jobs) < 4:
        for job in jobs:
            nodes, loss = _loss_worker(job)
            out[nodes] = loss
        return out
    with ProcessPoolExecutor(max_workers=workers) as pool:
        chunk = max(1, len(jobs) // (8 * workers))
        for nodes, loss in pool.map(_loss_worker, jobs, chunksize=chunk):
            out[nodes] = loss
    return out


def _candidate_sets(nodes: tuple[int, ...], k: int, guard: int) -> list[tuple[int, ...]]:
    total = sum(math.comb(len(nodes), c) for c in range(0, k + 1))
    if total > guard:
        raise ValueError(
            f"enumeration over {total} candidate attacks exceeds the {guard} guard"
        )
    out: list[tuple[int, ...]] = []
    for c in range(0, k + 1):
        out.extend(itertools.combinations(nodes, c))
    return out


def enumerate_maximin(
    spec: NetworkSpec,
    k: int,
    disturbance: TnDisturbance = NO_DISTURBANCE,
    engine: str = ENGINE_MICROGRID,
    params: SolveParams = SolveParams(),
    workers: int | None = None,
    guard: int = 10**6,
) -> ResilienceReport:
    """Exact worst-case loss over attacks of cardinality at most k.

    Ties within 1e-9 resolve to the smallest cardinality, then the
    lexicographically smallest attacked-node tuple.
    """
    started = time.perf_counter()
    candidates = _candidate_sets(attackable_nodes(spec), k, guard)
    losses = _map_losses(spec, candidates, disturbance, engine, params, workers)
    best_nodes: tuple[int, ...] = ()
    best_loss = -math.inf
    for nodes in candidates:  # (cardinality, lexicographic) order
        loss = losses[nodes]
        if loss > best_loss + 1e-9:
            best_loss = loss
            best_nodes = nodes
    l_max = compute_l_max(spec, disturbance)
    return ResilienceReport(
        loss=best_loss,
        l_max=l_max,
        resilience_pct=100.0 * (1.0 - best_loss / l_max),
        attack=AttackVector.on_nodes(best_nodes, spec.n_nodes),
        cardinality=len(best_nodes),
        iterations=len(candidates),
        wall_time_s=time.perf_counter() - started,
        engine=engine,
    )


def _solve_master(
    nodes: tuple[int, ...],
    weights: dict[int, float],
    cuts: list[tuple[dict[int, float], float]],
    params: SolveParams,
) -> tuple[int, ...] | None:
    """Minimum-cardinality attack satisfying the cut pool (None: infeasible).

    Ties between equal-cardinality candidates break toward components with
    larger singleton impact, then toward smaller node ids, keeping the
    iteration sequence deterministic.
    """
    master = MilpModel(big_m=1.0)
    scale = max(weights.values(), default=0.0) or 1.0
    for rank, i in enumerate(nodes):
        master.add_var(f"y[{i}]", 0.0, 1.0, kind="binary")
        master.add_objective_term(
            f"y[{i}]", 1.0 - 1e-6 * weights.get(i, 0.0) / scale + 1e-9 * rank
        )
    for c_idx, (coeffs, rhs) in enumerate(cuts):
        master.add_constraint(
            f"cut[{c_idx}]",
            [(f"y[{i}]", coef) for i, coef in coeffs.items()],
            ">=", rhs, "benders_cut",
        )
    result = solve(master, SolveParams(time_limit_s=params.time_limit_s, mip_gap_tolerance=0.0))
    if not result.assignment:
        return None
    return tuple(i for i in nodes if result.assignment[f"y[{i}]"] >= 0.5)


def benders_min_cardinality(
    spec: NetworkSpec,
    loss_target: float,
    disturbance: TnDisturbance = NO_DISTURBANCE,
    config: BendersConfig = BendersConfig(),
    engine: str = ENGINE_MICROGRID,
    params: SolveParams = SolveParams(),
    workers: int | None = None,
) -> ResilienceReport:
    """Smallest attack (w.r.t. the cut pool) whose loss reaches loss_target."""
    started = time.perf_counter()
    l_max = compute_l_max(spec, disturbance)
    if config.loss_target is not None:
        loss_target = config.loss_target
    if loss_target > l_max:
        raise ValueError(f"loss_target {loss_target} exceeds l_max {l_max}")
    nodes = attackable_nodes(spec)

    def report(nodes_hit, loss, iterations, reached):
        return ResilienceReport(
            loss=loss,
            l_max=l_max,
            resilience_pct=100.0 * (1.0 - loss / l_max),
            attack=AttackVector.on_nodes(nodes_hit, spec.n_nodes),
            cardinality=len(nodes_hit),
            iterations=iterations,
            wall_time_s=time.perf_counter() - started,
            engine=engine,
            target_reached=reached,
        )

    base_loss = attack_loss(spec, AttackVector.none(spec.n_nodes), disturbance, engine, params)
    if base_loss >= loss_target - 1e-9:
        return report((), base_loss, 1, True)

    marginal: dict[int, float] = {}
    if config.epsilon > 0:
        singles = _map_losses(
            spec, [(i,) for i in nodes], disturbance, engine, params, workers
        )
        marginal = {i: max(0.0, singles[(i,)] - base_loss) for i in nodes}

    cuts: list[tuple[dict[int, float], float]] = []

    def add_cuts(hit: tuple[int, ...], loss: float) -> None:
        hit_set = set(hit)
        outside = [i for i in nodes if i not in hit_set]
        cuts.append(({i: 1.0 for i in outside}, 1.0))
        if config.epsilon > 0:
            gap = config.epsilon * (loss_target - loss)
            coeffs = {i: marginal[i] for i in outside}
            for i in hit:
                coeffs[i] = -gap
            cuts.append((coeffs, gap - gap * len(hit)))

    add_cuts((), base_loss)
    best_nodes: tuple[int, ...] = ()
    best_loss = base_loss
    for iteration in range(2, config.max_iterations + 1):
        candidate = _solve_master(nodes, cuts, params)
        if candidate is None:
            return report(best_nodes, best_loss, iteration, False)
        loss = attack_loss(
            spec, AttackVector.on_nodes(candidate, spec.n_nodes), disturbance, engine, params
        )
        if loss > best_loss:
            best_loss, best_nodes = loss, candidate
        if loss >= loss_target - 1e-9:
            return report(candidate, loss, iteration, True)
        add_cuts(candidate, loss)
    return report(best_nodes, best_loss, config.max_iterations, False)


def resilience_curve(
    spec: NetworkSpec,
    k_range,
    disturbance: TnDisturbance = NO_DISTURBANCE,
    params: SolveParams = SolveParams(),
    workers: int | None = None,
    guard: int = 10**6,
) -> list[dict]:
    """Per-budget resilience under all three response engines.

    Inner losses are computed once for every attack up to the largest budget;
    the per-k maximin is the running maximum over cardinality classes.
    """
    started = time.perf_counter()
    ks = sorted(set(int(k) for k in k_range))
    if not ks or ks[0] < 0:
        raise ValueError("k_range must contain nonnegative budgets")
    k_max = ks[-1]
    candidates = _candidate_sets(attackable_nodes(spec), k_max, guard)
    l_max = compute_l_max(spec, disturbance)

    worst_by_k: dict[str, dict[int, tuple[float, int]]] = {}
    for engine in (ENGINE_CASCADE, ENGINE_NO_MICROGRID, ENGINE_MICROGRID):
        losses = _map_losses(spec, candidates, disturbance, engine, params, workers)
        by_card: dict[int, float] = {}
        for nodes, loss in losses.items():
            c = len(nodes)
            by_card[c] = max(by_card.get(c, -math.inf), loss)
        worst: dict[int, tuple[float, int]] = {}
        running, running_card = -math.inf, 0
        for k in range(0, k_max + 1):
            if by_card.get(k, -math.inf) > running + 1e-9:
                running, running_card = by_card[k], k
            worst[k] = (running, running_card)
        worst_by_k[engine] = worst

    wall = time.perf_counter() - started
    rows = []
    for k in ks:
        ad, ad_card = worst_by_k[ENGINE_CASCADE][k]
        mm, mm_card = worst_by_k[ENGINE_NO_MICROGRID][k]
        mg, mg_card = worst_by_k[ENGINE_MICROGRID][k]
        rows.append({
            "k": k,
            "R_AD": 100.0 * (1.0 - ad / l_max),
            "R_MM": 100.0 * (1.0 - mm / l_max),
            "R_m": 100.0 * (1.0 - mg / l_max),
            "card_AD": ad_card,
            "card_MM": mm_card,
            "card_m": mg_card,
            "iterations": len(candidates),
            "wall_time_s": wall,
        })
    return rows
