"""Multi-period restoration after a disruption.

Disrupted DGs are reconnected gradually: at most ng_t per period, never
disconnecting anything that was already restored (connecting lines likewise
only move toward closed).  The substation sag persists until the final
period.  Two solvers: a greedy pass that optimizes each period given the
previous one (the per-period subproblems are independent because the state
couples only through the switch vectors), and one monolithic MIP over the
whole horizon.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

from .model import (
    CAP_MICROGRID,
    GE,
    LE,
    LossBreakdown,
    MilpModel,
    ModelOptions,
    build_model,
    check_hygiene,
    compute_big_m,
    emit_stage,
    evaluate_loss,
)
from .network import NetworkSpec, derive_partition, nodal_dg_capacity, tree_structure
from .response import (
    AttackVector,
    NO_DISTURBANCE,
    NetworkState,
    OperatorResponse,
    TnDisturbance,
    droop_tightness,
    extract_solution,
    HygieneError,
    optimal_response,
)
from .solvers import OPTIMAL, SolveParams, SolveResult, solve


@dataclass(frozen=True)
class RestorationConfig:
    """Attack to undo, persisting disturbance, and per-period budgets.

    budgets is the number of DG reconnections allowed per period, either one
    constant or an explicit sequence for periods 1, 2, ...; the horizon ends
    one period after the budgets cover the attack cardinality.
    """

    attack: AttackVector
    disturbance: TnDisturbance = NO_DISTURBANCE
    budgets: int | tuple[int, ...] = 1
    line_budget: int | None = None

    def horizon(self) -> tuple[int, tuple[int, ...]]:
        """(T, ng) with ng[t-1] the budget of period t, len(ng) == T."""
        k = self.attack.cardinality
        if isinstance(self.budgets, int):
            if self.budgets < 1:
                raise ValueError("budgets must be positive")
            t_res = math.ceil(k / self.budgets) if k else 0
            horizon = t_res + 1
            return horizon, (self.budgets,) * horizon
        ng = tuple(self.budgets)
        if not ng or any(b < 1 for b in ng):
            raise ValueError("budgets must be a nonempty sequence of positive counts")
        if k == 0:
            return 1, ng[:1]
        covered = 0
        for t, b in enumerate(ng, start=1):
            covered += b
            if covered >= k:
                return t + 1, ng[: t + 1] + (ng[-1],) * max(0, t + 1 - len(ng))
        raise ValueError(
            f"budgets {ng} cannot cover an attack of cardinality {k}"
        )


@dataclass(frozen=True)
class PeriodRecord:
    t: int
    response: OperatorResponse
    state: NetworkState
    loss: LossBreakdown

    def reconnected_dgs(self, previous: "PeriodRecord", dg_nodes) -> int:
        return sum(
            1 for i in dg_nodes
            if previous.response.kg[i] == 1 and self.response.kg[i] == 0
        )


@dataclass(frozen=True)
class RestorationPlan:
    method: str
    horizon: int
    periods: tuple[PeriodRecord, ...]
    total_loss: float
    gap: float
    wall_time_s: float

    @property
    def losses(self) -> tuple[float, ...]:
        return tuple(p.loss.total for p in self.periods)


def _dg_nodes(spec: NetworkSpec) -> list[int]:
    pg_eff, _ = nodal_dg_capacity(spec)
    return [i for i in range(spec.n_nodes) if pg_eff[i] > 0]


def _period_record(spec: NetworkSpec, assignment, prefix: str, t: int) -> PeriodRecord:
    response, state = extract_solution(spec, assignment, prefix)
    return PeriodRecord(t, response, state, evaluate_loss(state, response, spec))


def served_load_pu(spec: NetworkSpec, response: OperatorResponse) -> float:
    return sum(lc * nd.pc_max for lc, nd in zip(response.lc, spec.nodes))


def greedy_restore(
    spec: NetworkSpec,
    config: RestorationConfig,
    params: SolveParams = SolveParams(),
    backend=None,
    check: bool = True,
) -> RestorationPlan:
    """Per-period restoration: each period minimizes its own loss given the
    previous switch state, the reconnection budget and the monotonicity
    rules.  Period 0 is the plain contingency response."""
    started = time.perf_counter()
    horizon, ng = config.horizon()
    partition = derive_partition(spec)
    first = optimal_response(
        spec, config.attack, config.disturbance, CAP_MICROGRID, params, backend, check,
        partition=partition,
    )
    periods = [PeriodRecord(0, first.response, first.state, first.loss)]
    dg_nodes = _dg_nodes(spec)
    tree = tree_structure(spec)
    connecting_idx = [i for i, e in enumerate(spec.edges) if e.is_connecting]

    prev = first.response
    for t in range(1, horizon + 1):
        active = config.disturbance if t < horizon else NO_DISTURBANCE
        model = build_model(spec, partition, None, active, ModelOptions())
        for i in range(spec.n_nodes):
            if prev.kg[i] == 0:
                model.fix_var(f"kg[{i}]", 0.0)
        for pos, e_idx in enumerate(connecting_idx):
            if prev.kline[pos] == 0:
                u, v = tree.oriented[e_idx]
                model.fix_var(f"kline[{u},{v}]", 0.0)
        model.add_constraint(
            f"dg_budget[{t}]",
            [(f"kg[{i}]", 1.0) for i in dg_nodes],
            GE, sum(prev.kg[i] for i in dg_nodes) - ng[t - 1],
            "restoration_budget",
        )
        if config.line_budget is not None:
            model.add_constraint(
                f"line_budget[{t}]",
                [(f"kline[{tree.oriented[e][0]},{tree.oriented[e][1]}]", 1.0)
                 for e in connecting_idx],
                GE, sum(prev.kline) - config.line_budget,
                "restoration_budget",
            )
        result = solve(model, params, backend=backend)
        if not result.assignment:
            raise RuntimeError(f"restoration period {t}: solver returned {result.status}")
        record = _period_record(spec, result.assignment, "", t)
        if check:
            problems = check_hygiene(model, result.assignment).check()
            gap = droop_tightness(spec, record.response, record.state)
            if gap > 1e-6:
                problems.append(f"droop equality gap {gap:.2e}")
            if problems:
                raise HygieneError(f"period {t}: " + "; ".join(problems))
        periods.append(record)
        prev = record.response

    return RestorationPlan(
        method="greedy",
        horizon=horizon,
        periods=tuple(periods),
        total_loss=sum(p.loss.total for p in periods),
        gap=0.0,
        wall_time_s=time.perf_counter() - started,
    )


def build_restoration_mip(spec: NetworkSpec, config: RestorationConfig) -> tuple[MilpModel, int]:
    """One MILP over periods 0..T with stage-coupling rows."""
    horizon, ng = config.horizon()
    partition = derive_partition(spec)
    model = MilpModel(big_m=compute_big_m(spec, config.disturbance))
    tree = tree_structure(spec)
    connecting_idx = [i for i, e in enumerate(spec.edges) if e.is_connecting]
    dg_nodes = _dg_nodes(spec)

    for t in range(horizon + 1):
        active = config.disturbance if t < horizon else NO_DISTURBANCE
        emit_stage(
            model, spec, partition, active.dv0, active.df0,
            attack=config.attack if t == 0 else None,
            options=ModelOptions(), prefix=f"t{t}_",
        )
    for t in range(1, horizon + 1):
        for i in range(spec.n_nodes):
            model.add_constraint(
                f"mono_kg[{t},{i}]",
                [(f"t{t}_kg[{i}]", 1.0), (f"t{t - 1}_kg[{i}]", -1.0)],
                LE, 0.0, "restoration_monotone",
            )
        for e_idx in connecting_idx:
            u, v = tree.oriented[e_idx]
            model.add_constraint(
                f"mono_kline[{t},{u},{v}]",
                [(f"t{t}_kline[{u},{v}]", 1.0), (f"t{t - 1}_kline[{u},{v}]", -1.0)],
                LE, 0.0, "restoration_monotone",
            )
        terms = [(f"t{t}_kg[{i}]", 1.0) for i in dg_nodes]
        terms += [(f"t{t - 1}_kg[{i}]", -1.0) for i in dg_nodes]
        model.add_constraint(
            f"dg_budget[{t}]", terms, GE, -float(ng[t - 1]), "restoration_budget",
        )
        if config.line_budget is not None:
            terms = [(f"t{t}_kline[{tree.oriented[e][0]},{tree.oriented[e][1]}]", 1.0)
                     for e in connecting_idx]
            terms += [(f"t{t - 1}_kline[{tree.oriented[e][0]},{tree.oriented[e][1]}]", -1.0)
                      for e in connecting_idx]
            model.add_constraint(
                f"line_budget[{t}]", terms, GE, -float(config.line_budget),
                "restoration_budget",
            )
    return model, horizon


def mip_restore(
    spec: NetworkSpec,
    config: RestorationConfig,
    params: SolveParams = SolveParams(),
    backend=None,
    check: bool = True,
) -> RestorationPlan:
    """Jointly optimal plan over the whole horizon (incumbent under a time
    limit, with the reported optimality gap)."""
    started = time.perf_counter()
    model, horizon = build_restoration_mip(spec, config)
    result = solve(model, params, backend=backend)
    if not result.assignment:
        raise RuntimeError(f"restoration MIP returned {result.status}")
    periods = tuple(
        _period_record(spec, result.assignment, f"t{t}_", t) for t in range(horizon + 1)
    )
    if check and result.status == OPTIMAL:
        problems = check_hygiene(model, result.assignment).check()
        if problems:
            raise HygieneError("; ".join(problems))
    return RestorationPlan(
        method="mip",
        horizon=horizon,
        periods=periods,
        total_loss=sum(p.loss.total for p in periods),
        gap=result.gap,
        wall_time_s=time.perf_counter() - started,
    )


def verify_plan(spec: NetworkSpec, plan: RestorationPlan, config: RestorationConfig) -> list[str]:
    """Structural invariants of an emitted plan; empty list when clean."""
    problems = []
    horizon, ng = config.horizon()
    if plan.horizon != horizon or len(plan.periods) != horizon + 1:
        problems.append(f"horizon mismatch: plan {plan.horizon}, config {horizon}")
    dg_nodes = _dg_nodes(spec)
    for t in range(1, len(plan.periods)):
        prev, cur = plan.periods[t - 1], plan.periods[t]
        if any(c > p for c, p in zip(cur.response.kg, prev.response.kg)):
            problems.append(f"period {t}: a DG was disconnected after restoration began")
        if any(c > p for c, p in zip(cur.response.kline, prev.response.kline)):
            problems.append(f"period {t}: a connecting line was reopened")
        reconnections = sum(
            1 for i in dg_nodes
            if prev.response.kg[i] == 1 and cur.response.kg[i] == 0
        )
        if t - 1 < len(ng) and reconnections > ng[t - 1]:
            problems.append(
                f"period {t}: {reconnections} reconnections exceed budget {ng[t - 1]}"
            )
    final = plan.periods[-1]
    stuck = [i for i in dg_nodes if config.attack.dg[i] and final.response.kg[i]]
    if stuck:
        problems.append(f"attacked DGs never reconnected: {stuck}")
    if abs(final.state.v[0] - spec.v_nom) > 1e-9 or abs(final.state.f[0] - spec.f_nom) > 1e-9:
        problems.append("final period substation boundary is not nominal")
    return problems


@dataclass(frozen=True)
class RestorationComparison:
    greedy: RestorationPlan
    mip: RestorationPlan

    @property
    def rows(self) -> list[dict]:
        out = []
        for t in range(max(len(self.greedy.periods), len(self.mip.periods))):
            out.append({
                "t": t,
                "greedy_loss": self.greedy.periods[t].loss.total
                if t < len(self.greedy.periods) else math.nan,
                "mip_loss": self.mip.periods[t].loss.total
                if t < len(self.mip.periods) else math.nan,
            })
        return out


def compare_restoration(
    spec: NetworkSpec,
    config: RestorationConfig,
    params: SolveParams = SolveParams(),
    mip_params: SolveParams | None = None,
    backend=None,
) -> RestorationComparison:
    greedy = greedy_restore(spec, config, params, backend=backend)
    mip = mip_restore(spec, config, mip_params or params, backend=backend)
    return RestorationComparison(greedy=greedy, mip=mip)
