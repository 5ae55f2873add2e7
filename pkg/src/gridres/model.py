"""Solver-agnostic MILP representation of multi-regime microgrid operation.

build_model() translates a network plus a disruption (DG attack vector and a
substation voltage/frequency sag) and the operator's response capability into
a mixed-integer linear program:

* switchable connecting lines gate power flow, voltage drop and frequency
  coupling through big-M pairs;
* LinDistFlow voltage drop and radial flow conservation on the tree;
* nodal frequencies are uniform inside each electrical island;
* grid-forming DERs activate by islanding condition (any-line-open for
  utility-owned units, all-boundary-open for facility units), dispatch a
  microsource plus a quadrant-switched storage device, and regulate through
  voltage/frequency droop equalities;
* loads and DGs trip when their nodal voltage or frequency leaves its band;
* the objective prices worst voltage/frequency deviation, load control, load
  shedding and islanding actions.

The model is a plain in-memory structure (variables, linear rows, objective)
so any MILP engine can consume it; see solvers.py and lpio.py.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .network import (
    GF_FACILITY,
    GF_UTILITY,
    PQ_VAR,
    DerSpec,
    MicrogridPartition,
    NetworkSpec,
    derive_partition,
    nodal_dg_capacity,
    tree_structure,
)

CONTINUOUS = "continuous"
BINARY = "binary"

LE = "<="
GE = ">="
EQ = "="

CAP_NO_MICROGRID = "c_no_microgrid"
CAP_MICROGRID = "d_microgrid"
CAP_AUTONOMOUS = "b_autonomous"

STAGE_PRE = "pre"
STAGE_POST = "post"

INF = math.inf


class ModelError(ValueError):
    """Raised when a model cannot be built from the given inputs."""


@dataclass(frozen=True)
class ModelOptions:
    """Response capability, operating stage, and big-M policy.

    capability c_no_microgrid pins the islanding switches, grid-forming
    activations and every grid-interactive DER output at zero; d_microgrid
    leaves them free.  The autonomous response (b) is an uncontrolled cascade,
    not an optimization, and is simulated in response.py.  big_m=None sizes
    the constant from network data; a number is used verbatim.
    """

    capability: str = CAP_MICROGRID
    stage: str = STAGE_POST
    big_m: float | None = None


@dataclass(frozen=True)
class LossBreakdown:
    vr_cost: float
    fr_cost: float
    load_control_cost: float
    shed_cost: float
    islanding_cost: float

    @property
    def total(self) -> float:
        return (self.vr_cost + self.fr_cost + self.load_control_cost
                + self.shed_cost + self.islanding_cost)


@dataclass
class Variable:
    name: str
    kind: str
    lb: float
    ub: float


@dataclass
class Constraint:
    name: str
    terms: tuple[tuple[int, float], ...]
    sense: str
    rhs: float
    family: str
    # (indicator variable name, value at which the row is deactivated);
    # set only on big-M rows so hygiene checks can verify non-binding slack.
    indicator: tuple[str, int] | None = None


class MilpModel:
    """Variables, linear constraints and a linear objective (minimize)."""

    def __init__(self, big_m: float):
        self.big_m = float(big_m)
        self.variables: list[Variable] = []
        self._index: dict[str, int] = {}
        self.constraints: list[Constraint] = []
        self.objective: dict[int, float] = {}
        self.objective_constant: float = 0.0

    def add_var(self, name: str, lb: float, ub: float, kind: str = CONTINUOUS) -> int:
        if name in self._index:
            raise ModelError(f"duplicate variable {name}")
        if kind == BINARY and not (lb >= 0.0 and ub <= 1.0):
            raise ModelError(f"binary variable {name} must have bounds within [0, 1]")
        if lb > ub:
            raise ModelError(f"variable {name}: infeasible bounds [{lb}, {ub}]")
        self.variables.append(Variable(name, kind, float(lb), float(ub)))
        self._index[name] = len(self.variables) - 1
        return self._index[name]

    def var_index(self, name: str) -> int:
        return self._index[name]

    def has_var(self, name: str) -> bool:
        return name in self._index

    def fix_var(self, name: str, value: float) -> None:
        v = self.variables[self._index[name]]
        v.lb = v.ub = float(value)

    def add_constraint(
        self,
        name: str,
        terms,
        sense: str,
        rhs: float,
        family: str,
        indicator: tuple[str, int] | None = None,
    ) -> None:
        agg: dict[int, float] = {}
        for var_name, coef in terms:
            if coef == 0.0:
                continue
            idx = self._index[var_name]
            agg[idx] = agg.get(idx, 0.0) + float(coef)
        self.constraints.append(
            Constraint(name, tuple(sorted(agg.items())), sense, float(rhs), family, indicator)
        )

    def add_objective_term(self, var_name: str, coef: float) -> None:
        if coef == 0.0:
            return
        idx = self._index[var_name]
        self.objective[idx] = self.objective.get(idx, 0.0) + float(coef)

    @property
    def binary_names(self) -> list[str]:
        return [v.name for v in self.variables if v.kind == BINARY]

    def free_binary_names(self) -> list[str]:
        return [v.name for v in self.variables if v.kind == BINARY and v.lb != v.ub]

    def evaluate_objective(self, assignment: dict[str, float]) -> float:
        total = self.objective_constant
        for idx, coef in self.objective.items():
            total += coef * assignment[self.variables[idx].name]
        return total


# ---------------------------------------------------------------------------
# DER output polytopes (half-space form).
# ---------------------------------------------------------------------------

def microsource_polytope(der: DerSpec) -> list[tuple[float, float, float]]:
    """Half-spaces (a_p, a_q, b) with a_p*p + a_q*q <= b for a microsource.

    Hexagon with vertices (0, +-q), (p/2, +-q), (p, +-q/3) where p=pn_max and
    q=qn_max; active power is nonnegative in every regime.
    """
    p, q = der.pn_max, der.qn_max
    if p <= 0 or q <= 0:
        raise ModelError(f"der {der.id}: microsource caps must be positive")
    return [
        (-1.0, 0.0, 0.0),
        (1.0, 0.0, p),
        (0.0, 1.0, q),
        (0.0, -1.0, q),
        (4.0 * q, 3.0 * p, 5.0 * p * q),
        (4.0 * q, -3.0 * p, 5.0 * p * q),
    ]


def storage_polytope(der: DerSpec) -> list[tuple[float, float, float, float]]:
    """Half-spaces (a_p, a_q, a_k, b) with a_p*p + a_q*q + a_k*kappa <= b.

    The storage charges (p <= 0) while its DER is not grid-forming (kappa=0)
    and discharges (p >= 0) once it is (kappa=1).  The outline mirrors the
    microsource hexagon on both active-power half-planes: corner cuts run
    from the half-cap point on the q-cap edge to the third-cap point on the
    p-cap edge, scaled by pe_max on the right and |pe_min| on the left.
    """
    pmax, pmin = der.pe_max, der.pe_min
    qmax, qmin = der.qe_max, der.qe_min
    if pmax <= 0 or qmax <= 0:
        raise ModelError(f"der {der.id}: storage caps must be positive")
    if pmin > 0 or qmin > 0:
        raise ModelError(f"der {der.id}: storage lower caps must be <= 0")
    return [
        (1.0, 0.0, -pmax, 0.0),          # p <= pmax * kappa
        (-1.0, 0.0, -pmin, -pmin),       # p >= pmin * (1 - kappa)
        (0.0, 1.0, 0.0, qmax),
        (0.0, -1.0, 0.0, -qmin),
        (4.0 * qmax, 3.0 * pmax, 0.0, 5.0 * pmax * qmax),
        (-4.0 * qmin, -3.0 * pmax, 0.0, -5.0 * pmax * qmin),
        (-4.0 * qmax, -3.0 * pmin, 0.0, -5.0 * pmin * qmax),
        (4.0 * qmin, 3.0 * pmin, 0.0, 5.0 * pmin * qmin),
    ]


def _der_output_range(der: DerSpec) -> tuple[float, float, float, float]:
    """(pr_lo, pr_hi, qr_lo, qr_hi) for one grid-interactive DER."""
    if der.is_grid_forming:
        return (der.pe_min, der.pn_max + der.pe_max,
                -der.qn_max + der.qe_min, der.qn_max + der.qe_max)
    return (0.0, der.pn_max, -der.qn_max, der.qn_max)


# ---------------------------------------------------------------------------
# Big-M sizing.
# ---------------------------------------------------------------------------

def _voltage_bounds(spec: NetworkSpec, i: int) -> tuple[float, float]:
    nd = spec.nodes[i]
    return (max(nd.v_load_min, nd.v_dg_min) - 1.0,
            min(nd.v_load_max, nd.v_dg_max) + 1.0)


def _frequency_bounds(spec: NetworkSpec, i: int) -> tuple[float, float]:
    nd = spec.nodes[i]
    return (max(nd.f_load_min, nd.f_dg_min) - 1.0,
            min(nd.f_load_max, nd.f_dg_max) + 1.0)


def _flow_caps(spec: NetworkSpec) -> tuple[float, float]:
    """Worst-case magnitude of any branch flow (active, reactive)."""
    pg_eff, qg_eff = nodal_dg_capacity(spec)
    f_p = sum(nd.pc_max for nd in spec.nodes) + sum(pg_eff)
    f_q = sum(nd.qc_max for nd in spec.nodes) + sum(qg_eff)
    for d in spec.grid_interactive_ders:
        pr_lo, pr_hi, qr_lo, qr_hi = _der_output_range(d)
        f_p += max(abs(pr_lo), abs(pr_hi))
        f_q += max(abs(qr_lo), abs(qr_hi))
    return f_p, f_q


def compute_big_m(spec: NetworkSpec, disturbance=None) -> float:
    """A single constant dominating every big-M constraint family.

    Interval arithmetic over the variable bounds gives the largest possible
    |lhs - rhs| for line capacity, switched voltage drop, frequency
    decoupling and both droop families; the flow family carries a 2x safety
    factor.  The result is guaranteed non-binding at any feasible point.
    """
    f_p, f_q = _flow_caps(spec)
    flow_m = 2.0 * max(f_p, f_q)

    v_lo = min(_voltage_bounds(spec, i)[0] for i in range(spec.n_nodes))
    v_hi = max(_voltage_bounds(spec, i)[1] for i in range(spec.n_nodes))
    f_lo = min(_frequency_bounds(spec, i)[0] for i in range(spec.n_nodes))
    f_hi = max(_frequency_bounds(spec, i)[1] for i in range(spec.n_nodes))
    v_width = v_hi - v_lo
    f_width = f_hi - f_lo

    drop_m = 0.0
    for e in spec.connecting_edges:
        drop_m = max(drop_m, v_width + 2.0 * (e.r * f_p + e.x * f_q))

    droop_v_m = 0.0
    droop_f_m = 0.0
    for d in spec.gf_ders:
        pr_lo, pr_hi, qr_lo, qr_hi = _der_output_range(d)
        hi = v_hi - d.v_ref + d.m_q * (qr_hi - d.q_ref)
        lo = v_lo - d.v_ref + d.m_q * (qr_lo - d.q_ref)
        droop_v_m = max(droop_v_m, abs(hi), abs(lo))
        hi = f_hi - d.f_ref + d.m_p * (pr_hi - d.p_ref)
        lo = f_lo - d.f_ref + d.m_p * (pr_lo - d.p_ref)
        droop_f_m = max(droop_f_m, abs(hi), abs(lo))

    return max(flow_m, drop_m, f_width, droop_v_m, droop_f_m, 1.0)


# ---------------------------------------------------------------------------
# Model construction.
# ---------------------------------------------------------------------------

def _check_band_widths(spec: NetworkSpec) -> None:
    # The trip rows (kc >= v_min - v etc.) encode the disconnect logic
    # without a big-M, which is valid only while every band is narrower
    # than one per-unit.
    for nd in spec.nodes:
        for lo, hi, what in (
            (nd.v_load_min, nd.v_load_max, "load voltage"),
            (nd.v_dg_min, nd.v_dg_max, "DG voltage"),
            (nd.f_load_min, nd.f_load_max, "load frequency"),
            (nd.f_dg_min, nd.f_dg_max, "DG frequency"),
        ):
            if hi - lo >= 1.0:
                raise ModelError(
                    f"node {nd.id}: {what} band width {hi - lo:.3f} >= 1 pu breaks "
                    "the linear disconnect encoding"
                )


def emit_stage(
    model: MilpModel,
    spec: NetworkSpec,
    partition: MicrogridPartition,
    dv0: float,
    df0: float,
    attack=None,
    options: ModelOptions = ModelOptions(),
    prefix: str = "",
) -> None:
    """Adds one operating stage (variables, rows, objective terms) to model.

    Used once by build_model and once per period by the restoration MIP,
    which distinguishes stages through the name prefix.
    """
    tree = tree_structure(spec)
    n = spec.n_nodes
    big_m = model.big_m
    pg_eff, qg_eff = nodal_dg_capacity(spec)
    costs = spec.costs
    cap = options.capability

    connecting_idx = [i for i, e in enumerate(spec.edges) if e.is_connecting]
    connecting_keys = {tree.oriented[i] for i in connecting_idx}

    def nm(base: str) -> str:
        return prefix + base

    def ename(i: int) -> str:
        u, v = tree.oriented[i]
        return f"{u},{v}"

    # --- variables -------------------------------------------------------
    f_p, f_q = _flow_caps(spec)
    for i in range(n):
        v_lo, v_hi = _voltage_bounds(spec, i)
        f_lo, f_hi = _frequency_bounds(spec, i)
        model.add_var(nm(f"v[{i}]"), v_lo, v_hi)
        model.add_var(nm(f"f[{i}]"), f_lo, f_hi)
        pr_lo_sum = sum(_der_output_range(d)[0] for d in spec.ders
                        if d.is_grid_interactive and d.location == i)
        pr_hi_sum = sum(_der_output_range(d)[1] for d in spec.ders
                        if d.is_grid_interactive and d.location == i)
        qr_lo_sum = sum(_der_output_range(d)[2] for d in spec.ders
                        if d.is_grid_interactive and d.location == i)
        qr_hi_sum = sum(_der_output_range(d)[3] for d in spec.ders
                        if d.is_grid_interactive and d.location == i)
        nd = spec.nodes[i]
        model.add_var(nm(f"pt[{i}]"), -pg_eff[i] - pr_hi_sum, nd.pc_max - pr_lo_sum)
        model.add_var(nm(f"qt[{i}]"), -qg_eff[i] - qr_hi_sum, nd.qc_max - qr_lo_sum)
        model.add_var(nm(f"pc[{i}]"), 0.0, nd.pc_max)
        model.add_var(nm(f"qc[{i}]"), 0.0, nd.qc_max)
        model.add_var(nm(f"pg[{i}]"), 0.0, pg_eff[i])
        model.add_var(nm(f"qg[{i}]"), 0.0, qg_eff[i])
        model.add_var(nm(f"lc[{i}]"), 0.0, 1.0)
        model.add_var(nm(f"kc[{i}]"), 0.0, 1.0, BINARY)
        model.add_var(nm(f"kg[{i}]"), 0.0, 1.0, BINARY)

    for e_idx in range(len(spec.edges)):
        model.add_var(nm(f"P[{ename(e_idx)}]"), -f_p, f_p)
        model.add_var(nm(f"Q[{ename(e_idx)}]"), -f_q, f_q)
    for e_idx in connecting_idx:
        model.add_var(nm(f"kline[{ename(e_idx)}]"), 0.0, 1.0, BINARY)

    for d in spec.grid_interactive_ders:
        pr_lo, pr_hi, qr_lo, qr_hi = _der_output_range(d)
        model.add_var(nm(f"pr[{d.id}]"), pr_lo, pr_hi)
        model.add_var(nm(f"qr[{d.id}]"), qr_lo, qr_hi)
        if d.is_grid_forming:
            model.add_var(nm(f"kappa[{d.id}]"), 0.0, 1.0, BINARY)
            model.add_var(nm(f"pn[{d.id}]"), 0.0, d.pn_max)
            model.add_var(nm(f"qn[{d.id}]"), -d.qn_max, d.qn_max)
            model.add_var(nm(f"pe[{d.id}]"), d.pe_min, d.pe_max)
            model.add_var(nm(f"qe[{d.id}]"), d.qe_min, d.qe_max)

    model.add_var(nm("vdev"), 0.0, INF)
    model.add_var(nm("fdev"), 0.0, INF)

    # --- capability / stage fixings --------------------------------------
    if options.stage == STAGE_PRE:
        dv0 = 0.0
        df0 = 0.0
        for i in range(n):
            model.fix_var(nm(f"kc[{i}]"), 0.0)
            model.fix_var(nm(f"kg[{i}]"), 0.0)
        for e_idx in connecting_idx:
            model.fix_var(nm(f"kline[{ename(e_idx)}]"), 0.0)
    if options.stage == STAGE_PRE or cap == CAP_NO_MICROGRID:
        for e_idx in connecting_idx:
            model.fix_var(nm(f"kline[{ename(e_idx)}]"), 0.0)
        for d in spec.grid_interactive_ders:
            model.fix_var(nm(f"pr[{d.id}]"), 0.0)
            model.fix_var(nm(f"qr[{d.id}]"), 0.0)
            if d.is_grid_forming:
                model.fix_var(nm(f"kappa[{d.id}]"), 0.0)
                model.fix_var(nm(f"pn[{d.id}]"), 0.0)
                model.fix_var(nm(f"qn[{d.id}]"), 0.0)
                model.fix_var(nm(f"pe[{d.id}]"), 0.0)
                model.fix_var(nm(f"qe[{d.id}]"), 0.0)

    # --- substation boundary ----------------------------------------------
    model.add_constraint(nm("sub_v"), [(nm("v[0]"), 1.0)], EQ, spec.v_nom - dv0, "sub_volt")
    model.add_constraint(nm("sub_f"), [(nm("f[0]"), 1.0)], EQ, spec.f_nom - df0, "sub_freq")

    # --- switchable line capacity -----------------------------------------
    for e_idx in connecting_idx:
        en = ename(e_idx)
        kline = nm(f"kline[{en}]")
        for var, fam in ((nm(f"P[{en}]"), "line_cap_p"), (nm(f"Q[{en}]"), "line_cap_q")):
            model.add_constraint(nm(f"{fam}_hi[{en}]"), [(var, 1.0), (kline, big_m)],
                                 LE, big_m, fam, indicator=(kline, 0))
            model.add_constraint(nm(f"{fam}_lo[{en}]"), [(var, -1.0), (kline, big_m)],
                                 LE, big_m, fam, indicator=(kline, 0))

    # --- voltage drop -------------------------------------------------------
    for e_idx, e in enumerate(spec.edges):
        u, v = tree.oriented[e_idx]
        en = ename(e_idx)
        terms = [(nm(f"v[{v}]"), 1.0), (nm(f"v[{u}]"), -1.0),
                 (nm(f"P[{en}]"), 2.0 * e.r), (nm(f"Q[{en}]"), 2.0 * e.x)]
        if not e.is_connecting:
            model.add_constraint(nm(f"volt_drop[{en}]"), terms, EQ, 0.0, "volt_drop")
        else:
            kline = nm(f"kline[{en}]")
            model.add_constraint(nm(f"volt_drop_hi[{en}]"),
                                 terms + [(kline, -big_m)], LE, 0.0,
                                 "volt_drop_sw", indicator=(kline, 1))
            model.add_constraint(nm(f"volt_drop_lo[{en}]"),
                                 [(name, -c) for name, c in terms] + [(kline, -big_m)],
                                 LE, 0.0, "volt_drop_sw", indicator=(kline, 1))

    # --- frequency coupling -------------------------------------------------
    for e_idx, e in enumerate(spec.edges):
        u, v = tree.oriented[e_idx]
        en = ename(e_idx)
        if not e.is_connecting:
            model.add_constraint(nm(f"freq_eq[{en}]"),
                                 [(nm(f"f[{u}]"), 1.0), (nm(f"f[{v}]"), -1.0)],
                                 EQ, 0.0, "freq_eq")
        else:
            kline = nm(f"kline[{en}]")
            model.add_constraint(nm(f"freq_sw_hi[{en}]"),
                                 [(nm(f"f[{u}]"), 1.0), (nm(f"f[{v}]"), -1.0), (kline, -big_m)],
                                 LE, 0.0, "freq_sw", indicator=(kline, 1))
            model.add_constraint(nm(f"freq_sw_lo[{en}]"),
                                 [(nm(f"f[{u}]"), -1.0), (nm(f"f[{v}]"), 1.0), (kline, -big_m)],
                                 LE, 0.0, "freq_sw", indicator=(kline, 1))

    # --- load / DG trip conditions ------------------------------------------
    for i in range(n):
        nd = spec.nodes[i]
        kc, kg = nm(f"kc[{i}]"), nm(f"kg[{i}]")
        vv, ff = nm(f"v[{i}]"), nm(f"f[{i}]")
        model.add_constraint(nm(f"load_f_trip_lo[{i}]"), [(kc, 1.0), (ff, 1.0)],
                             GE, nd.f_load_min, "load_freq_trip")
        model.add_constraint(nm(f"load_f_trip_hi[{i}]"), [(kc, 1.0), (ff, -1.0)],
                             GE, -nd.f_load_max, "load_freq_trip")
        model.add_constraint(nm(f"load_v_trip_lo[{i}]"), [(kc, 1.0), (vv, 1.0)],
                             GE, nd.v_load_min, "load_volt_trip")
        model.add_constraint(nm(f"load_v_trip_hi[{i}]"), [(kc, 1.0), (vv, -1.0)],
                             GE, -nd.v_load_max, "load_volt_trip")
        model.add_constraint(nm(f"dg_v_trip_lo[{i}]"), [(kg, 1.0), (vv, 1.0)],
                             GE, nd.v_dg_min, "dg_volt_trip")
        model.add_constraint(nm(f"dg_v_trip_hi[{i}]"), [(kg, 1.0), (vv, -1.0)],
                             GE, -nd.v_dg_max, "dg_volt_trip")
        model.add_constraint(nm(f"dg_f_trip_lo[{i}]"), [(kg, 1.0), (ff, 1.0)],
                             GE, nd.f_dg_min, "dg_freq_trip")
        model.add_constraint(nm(f"dg_f_trip_hi[{i}]"), [(kg, 1.0), (ff, -1.0)],
                             GE, -nd.f_dg_max, "dg_freq_trip")

    # --- grid-forming activation conditions ----------------------------------
    for d in spec.gf_ders:
        kap = nm(f"kappa[{d.id}]")
        if d.category == GF_UTILITY:
            lines = [k for k in partition.paths[d.location] if k in connecting_keys]
            for u, v in lines:
                model.add_constraint(nm(f"gf_any_lb[{d.id},{u},{v}]"),
                                     [(kap, 1.0), (nm(f"kline[{u},{v}]"), -1.0)],
                                     GE, 0.0, "island_utility_lb")
            terms = [(kap, 1.0)] + [(nm(f"kline[{u},{v}]"), -1.0) for u, v in lines]
            model.add_constraint(nm(f"gf_any_ub[{d.id}]"), terms, LE, 0.0,
                                 "island_utility_ub")
        else:
            mg = partition.microgrid_of(d.location)
            lines = partition.isolating_sets[mg]
            terms = [(kap, 1.0)] + [(nm(f"kline[{u},{v}]"), -1.0) for u, v in lines]
            model.add_constraint(nm(f"gf_all_lb[{d.id}]"), terms, GE,
                                 1.0 - len(lines), "island_facility_lb")
            for u, v in lines:
                model.add_constraint(nm(f"gf_all_ub[{d.id},{u},{v}]"),
                                     [(kap, 1.0), (nm(f"kline[{u},{v}]"), -1.0)],
                                     LE, 0.0, "island_facility_ub")

    # --- DER output sets and droop regulation ---------------------------------
    for d in spec.grid_interactive_ders:
        pr, qr = nm(f"pr[{d.id}]"), nm(f"qr[{d.id}]")
        if d.is_grid_forming:
            pn, qn = nm(f"pn[{d.id}]"), nm(f"qn[{d.id}]")
            pe, qe = nm(f"pe[{d.id}]"), nm(f"qe[{d.id}]")
            kap = nm(f"kappa[{d.id}]")
            for row, (ap, aq, b) in enumerate(microsource_polytope(d)):
                model.add_constraint(nm(f"msrc[{d.id},{row}]"),
                                     [(pn, ap), (qn, aq)], LE, b, "microsource_face")
            for row, (ap, aq, ak, b) in enumerate(storage_polytope(d)):
                model.add_constraint(nm(f"stor[{d.id},{row}]"),
                                     [(pe, ap), (qe, aq), (kap, ak)], LE, b,
                                     "storage_face")
            model.add_constraint(nm(f"der_total_p[{d.id}]"),
                                 [(pr, 1.0), (pn, -1.0), (pe, -1.0)], EQ, 0.0,
                                 "der_total")
            model.add_constraint(nm(f"der_total_q[{d.id}]"),
                                 [(qr, 1.0), (qn, -1.0), (qe, -1.0)], EQ, 0.0,
                                 "der_total")
            vv = nm(f"v[{d.location}]")
            ff = nm(f"f[{d.location}]")
            v_const = d.v_ref + d.m_q * d.q_ref
            model.add_constraint(nm(f"droop_v_hi[{d.id}]"),
                                 [(vv, 1.0), (qr, d.m_q), (kap, big_m)],
                                 LE, big_m + v_const, "droop_volt", indicator=(kap, 0))
            model.add_constraint(nm(f"droop_v_lo[{d.id}]"),
                                 [(vv, -1.0), (qr, -d.m_q), (kap, big_m)],
                                 LE, big_m - v_const, "droop_volt", indicator=(kap, 0))
            f_const = d.f_ref + d.m_p * d.p_ref
            model.add_constraint(nm(f"droop_f_hi[{d.id}]"),
                                 [(ff, 1.0), (pr, d.m_p), (kap, big_m)],
                                 LE, big_m + f_const, "droop_freq", indicator=(kap, 0))
            model.add_constraint(nm(f"droop_f_lo[{d.id}]"),
                                 [(ff, -1.0), (pr, -d.m_p), (kap, big_m)],
                                 LE, big_m - f_const, "droop_freq", indicator=(kap, 0))
        else:
            # Controllable-setpoint unit: microsource polytope on its output.
            for row, (ap, aq, b) in enumerate(microsource_polytope(d)):
                model.add_constraint(nm(f"msrc[{d.id},{row}]"),
                                     [(pr, ap), (qr, aq)], LE, b, "microsource_face")

    # --- net consumption, DG output, load control ------------------------------
    for i in range(n):
        nd = spec.nodes[i]
        der_terms_p = [(nm(f"pr[{d.id}]"), 1.0) for d in spec.grid_interactive_ders
                       if d.location == i]
        der_terms_q = [(nm(f"qr[{d.id}]"), 1.0) for d in spec.grid_interactive_ders
                       if d.location == i]
        model.add_constraint(nm(f"net_p[{i}]"),
                             [(nm(f"pt[{i}]"), 1.0), (nm(f"pc[{i}]"), -1.0),
                              (nm(f"pg[{i}]"), 1.0)] + der_terms_p,
                             EQ, 0.0, "net_consumption")
        model.add_constraint(nm(f"net_q[{i}]"),
                             [(nm(f"qt[{i}]"), 1.0), (nm(f"qc[{i}]"), -1.0),
                              (nm(f"qg[{i}]"), 1.0)] + der_terms_q,
                             EQ, 0.0, "net_consumption")
        model.add_constraint(nm(f"dg_out_p[{i}]"),
                             [(nm(f"pg[{i}]"), 1.0), (nm(f"kg[{i}]"), pg_eff[i])],
                             EQ, pg_eff[i], "dg_output")
        model.add_constraint(nm(f"dg_out_q[{i}]"),
                             [(nm(f"qg[{i}]"), 1.0), (nm(f"kg[{i}]"), qg_eff[i])],
                             EQ, qg_eff[i], "dg_output")
        model.add_constraint(nm(f"load_p[{i}]"),
                             [(nm(f"pc[{i}]"), 1.0), (nm(f"lc[{i}]"), -nd.pc_max)],
                             EQ, 0.0, "load_consumption")
        model.add_constraint(nm(f"load_q[{i}]"),
                             [(nm(f"qc[{i}]"), 1.0), (nm(f"lc[{i}]"), -nd.qc_max)],
                             EQ, 0.0, "load_consumption")
        model.add_constraint(nm(f"lc_lo[{i}]"),
                             [(nm(f"lc[{i}]"), 1.0), (nm(f"kc[{i}]"), nd.lc_min)],
                             GE, nd.lc_min, "load_control_box")
        model.add_constraint(nm(f"lc_hi[{i}]"),
                             [(nm(f"lc[{i}]"), 1.0), (nm(f"kc[{i}]"), 1.0)],
                             LE, 1.0, "load_control_box")

    # --- radial flow conservation ------------------------------------------
    for e_idx in range(len(spec.edges)):
        u, v = tree.oriented[e_idx]
        en = ename(e_idx)
        terms_p = [(nm(f"P[{en}]"), 1.0), (nm(f"pt[{v}]"), -1.0)]
        terms_q = [(nm(f"Q[{en}]"), 1.0), (nm(f"qt[{v}]"), -1.0)]
        for child_e in tree.child_edges[v]:
            terms_p.append((nm(f"P[{ename(child_e)}]"), -1.0))
            terms_q.append((nm(f"Q[{ename(child_e)}]"), -1.0))
        model.add_constraint(nm(f"flow_p[{en}]"), terms_p, EQ, 0.0, "flow_balance")
        model.add_constraint(nm(f"flow_q[{en}]"), terms_q, EQ, 0.0, "flow_balance")

    # --- attack linkage ----------------------------------------------------
    if attack is not None:
        for i, hit in enumerate(attack.dg):
            if hit:
                model.add_constraint(nm(f"attack_dg[{i}]"), [(nm(f"kg[{i}]"), 1.0)],
                                     GE, 1.0, "attack_dg")
        if attack.load is not None:
            for i, hit in enumerate(attack.load):
                if hit:
                    model.add_constraint(nm(f"attack_load[{i}]"),
                                         [(nm(f"kc[{i}]"), 1.0)], GE, 1.0, "attack_load")
        if attack.line is not None:
            for e_idx, hit in enumerate(attack.line):
                if not hit:
                    continue
                if not spec.edges[e_idx].is_connecting:
                    raise ModelError(
                        f"edge {spec.edges[e_idx].key}: only connecting lines can be "
                        "switched open by a line attack"
                    )
                model.add_constraint(nm(f"attack_line[{ename(e_idx)}]"),
                                     [(nm(f"kline[{ename(e_idx)}]"), 1.0)],
                                     GE, 1.0, "attack_line")

    # --- worst-deviation epigraphs and objective -----------------------------
    for i in range(n):
        model.add_constraint(nm(f"vdev_lo[{i}]"),
                             [(nm("vdev"), 1.0), (nm(f"v[{i}]"), 1.0)],
                             GE, spec.v_nom, "volt_deviation")
        model.add_constraint(nm(f"vdev_hi[{i}]"),
                             [(nm("vdev"), 1.0), (nm(f"v[{i}]"), -1.0)],
                             GE, -spec.v_nom, "volt_deviation")
        model.add_constraint(nm(f"fdev_lo[{i}]"),
                             [(nm("fdev"), 1.0), (nm(f"f[{i}]"), 1.0)],
                             GE, spec.f_nom, "freq_deviation")
        model.add_constraint(nm(f"fdev_hi[{i}]"),
                             [(nm("fdev"), 1.0), (nm(f"f[{i}]"), -1.0)],
                             GE, -spec.f_nom, "freq_deviation")

    model.add_objective_term(nm("vdev"), costs.c_vr)
    model.add_objective_term(nm("fdev"), costs.c_fr)
    for i in range(n):
        nd = spec.nodes[i]
        model.add_objective_term(nm(f"lc[{i}]"), -costs.c_load * nd.pc_max)
        model.add_objective_term(nm(f"kc[{i}]"), (costs.c_shed - costs.c_load) * nd.pc_max)
    model.objective_constant += costs.c_load * sum(nd.pc_max for nd in spec.nodes)
    for e_idx in connecting_idx:
        model.add_objective_term(nm(f"kline[{ename(e_idx)}]"), costs.c_mg)


def build_model(
    spec: NetworkSpec,
    partition: MicrogridPartition | None = None,
    attack=None,
    disturbance=None,
    options: ModelOptions = ModelOptions(),
) -> MilpModel:
    """Single-stage MILP for the post-contingency (or nominal) operation."""
    if options.capability == CAP_AUTONOMOUS:
        raise ModelError(
            "the autonomous response is a simulated cascade, not an optimization; "
            "use response.autonomous_cascade"
        )
    if options.capability not in (CAP_MICROGRID, CAP_NO_MICROGRID):
        raise ModelError(f"unknown capability {options.capability!r}")
    if options.stage not in (STAGE_PRE, STAGE_POST):
        raise ModelError(f"unknown stage {options.stage!r}")
    _check_band_widths(spec)
    if partition is None:
        partition = derive_partition(spec)
    if attack is not None and len(attack.dg) != spec.n_nodes:
        raise ModelError(
            f"attack dimension {len(attack.dg)} does not match {spec.n_nodes} nodes"
        )
    dv0 = disturbance.dv0 if disturbance is not None else 0.0
    df0 = disturbance.df0 if disturbance is not None else 0.0
    big_m = options.big_m if options.big_m is not None else compute_big_m(spec, disturbance)
    model = MilpModel(big_m=big_m)
    emit_stage(model, spec, partition, dv0, df0, attack=attack, options=options)
    return model


# ---------------------------------------------------------------------------
# Loss evaluation and solution hygiene.
# ---------------------------------------------------------------------------

def evaluate_loss(state, response, spec: NetworkSpec) -> LossBreakdown:
    """Recomputes the stage loss from a network state and operator response.

    state must expose node vectors .v and .f; response must expose .lc, .kc
    per node and .kline aligned with spec.connecting_edges.
    """
    n = spec.n_nodes
    if len(state.v) != n or len(state.f) != n or len(response.lc) != n:
        raise ModelError("state/response dimensions do not match the network")
    if len(response.kline) != len(spec.connecting_edges):
        raise ModelError("response.kline does not match the connecting lines")
    costs = spec.costs
    vr = costs.c_vr * max(abs(spec.v_nom - v) for v in state.v)
    fr = costs.c_fr * max(abs(spec.f_nom - f) for f in state.f)
    load_control = costs.c_load * sum(
        (1.0 - lc) * nd.pc_max for lc, nd in zip(response.lc, spec.nodes)
    )
    shed = (costs.c_shed - costs.c_load) * sum(
        kc * nd.pc_max for kc, nd in zip(response.kc, spec.nodes)
    )
    islanding = costs.c_mg * sum(response.kline)
    return LossBreakdown(vr, fr, load_control, shed, islanding)


@dataclass(frozen=True)
class HygieneReport:
    """Numerical diagnostics of a solved point against its model."""

    max_equality_residual: float
    max_inequality_violation: float
    min_bigm_slack_ratio: float | None
    max_flow_residual: float

    def check(self, eq_tol: float = 1e-6, bigm_ratio: float = 1e-4) -> list[str]:
        problems = []
        if self.max_equality_residual > eq_tol:
            problems.append(f"equality residual {self.max_equality_residual:.2e}")
        if self.max_inequality_violation > eq_tol:
            problems.append(f"inequality violation {self.max_inequality_violation:.2e}")
        if self.min_bigm_slack_ratio is not None and self.min_bigm_slack_ratio < bigm_ratio:
            problems.append(f"big-M slack ratio {self.min_bigm_slack_ratio:.2e}")
        if self.max_flow_residual > eq_tol:
            problems.append(f"flow conservation residual {self.max_flow_residual:.2e}")
        return problems


def check_hygiene(model: MilpModel, assignment: dict[str, float]) -> HygieneReport:
    values = [assignment[v.name] for v in model.variables]
    max_eq = 0.0
    max_ineq = 0.0
    max_flow = 0.0
    min_slack_ratio: float | None = None
    for con in model.constraints:
        lhs = sum(coef * values[idx] for idx, coef in con.terms)
        if con.sense == EQ:
            resid = abs(lhs - con.rhs)
            max_eq = max(max_eq, resid)
            if con.family == "flow_balance":
                max_flow = max(max_flow, resid)
            continue
        violation = (lhs - con.rhs) if con.sense == LE else (con.rhs - lhs)
        max_ineq = max(max_ineq, violation)
        if con.indicator is not None:
            ind_name, deact = con.indicator
            if round(assignment[ind_name]) == deact:
                slack = (con.rhs - lhs) if con.sense == LE else (lhs - con.rhs)
                ratio = slack / model.big_m
                min_slack_ratio = ratio if min_slack_ratio is None else min(min_slack_ratio, ratio)
    return HygieneReport(
        max_equality_residual=max_eq,
        max_inequality_violation=max_ineq,
        min_bigm_slack_ratio=min_slack_ratio,
        max_flow_residual=max_flow,
    )
