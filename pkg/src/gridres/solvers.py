"""Pluggable MILP solving behind a small, engine-neutral contract.

Three backends cover the deployment spectrum:

* ScipyBackend   -- in-process branch-and-bound through scipy's HiGHS binding
                    (the default).
* ExternalBackend -- hands the model to any command-line solver through an LP
                    file and reads back a ``<var-name> <value>`` solution file.
* EnumerationBackend -- exhaustive fallback for models with few binaries:
                    enumerates binary assignments and solves the remaining LP
                    per assignment.  Zero external dependencies; intended for
                    oracle tests.

Backend selection: pass an instance, or set GRIDRES_BACKEND to
scipy|external|enumeration (GRIDRES_SOLVER_CMD supplies the external command
template with {model} and {solution} placeholders).
"""

from __future__ import annotations

import math
import os
import shlex
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from itertools import product

import numpy as np
import scipy.sparse as sp
from scipy.optimize import Bounds, LinearConstraint, linprog, milp

from .model import BINARY, EQ, GE, LE, MilpModel

OPTIMAL = "optimal"
FEASIBLE_GAP = "feasible_gap"
INFEASIBLE = "infeasible"
TIME_LIMIT = "time_limit"
ERROR = "error"

_BINARY_TOL = 1e-4


class SolverError(RuntimeError):
    """Backend failure wrapped with the backend name."""


@dataclass(frozen=True)
class SolveParams:
    time_limit_s: float = 600.0
    mip_gap_tolerance: float = 1e-6
    threads: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.time_limit_s <= 0:
            raise ValueError("time_limit_s must be positive")
        if not 0.0 <= self.mip_gap_tolerance < 1.0:
            raise ValueError("mip_gap_tolerance must lie in [0, 1)")


@dataclass(frozen=True)
class SolveResult:
    status: str
    objective: float
    gap: float
    assignment: dict[str, float]
    wall_time_s: float

    @property
    def ok(self) -> bool:
        return self.status in (OPTIMAL, FEASIBLE_GAP, TIME_LIMIT) and bool(self.assignment)


class CompiledModel:
    """Numpy/scipy view of a MilpModel, reusable across repeated solves."""

    def __init__(self, model: MilpModel):
        self.model = model
        n = len(model.variables)
        self.names = [v.name for v in model.variables]
        self.kinds = [v.kind for v in model.variables]
        self.lb = np.array([v.lb for v in model.variables], dtype=float)
        self.ub = np.array([v.ub for v in model.variables], dtype=float)
        self.integrality = np.array(
            [1 if v.kind == BINARY else 0 for v in model.variables], dtype=np.uint8
        )
        self.c = np.zeros(n)
        for idx, coef in model.objective.items():
            self.c[idx] = coef

        rows, cols, vals = [], [], []
        cl, cu = [], []
        for r, con in enumerate(model.constraints):
            for idx, coef in con.terms:
                rows.append(r)
                cols.append(idx)
                vals.append(coef)
            if con.sense == LE:
                cl.append(-math.inf)
                cu.append(con.rhs)
            elif con.sense == GE:
                cl.append(con.rhs)
                cu.append(math.inf)
            else:
                cl.append(con.rhs)
                cu.append(con.rhs)
        self.A = sp.csr_matrix(
            (vals, (rows, cols)), shape=(len(model.constraints), n)
        )
        self.cl = np.array(cl)
        self.cu = np.array(cu)

    def lp_solve(self, lb: np.ndarray, ub: np.ndarray, time_limit: float) -> tuple[str, np.ndarray | None]:
        """LP over the given bounds (binaries are expected to be clamped)."""
        res = linprog(
            self.c,
            A_ub=self._a_ub, b_ub=self._b_ub,
            A_eq=self._a_eq, b_eq=self._b_eq,
            bounds=np.column_stack([lb, ub]),
            method="highs",
            options={"time_limit": time_limit},
        )
        if res.status == 0:
            return OPTIMAL, res.x
        if res.status == 2:
            return INFEASIBLE, None
        if res.status == 1:
            return TIME_LIMIT, None
        return ERROR, None

    def __getattr__(self, item):
        if item in ("_a_ub", "_b_ub", "_a_eq", "_b_eq"):
            self._split_rows()
            return getattr(self, item)
        raise AttributeError(item)

    def _split_rows(self) -> None:
        model = self.model
        le = [r for r, c in enumerate(model.constraints) if c.sense == LE]
        ge = [r for r, c in enumerate(model.constraints) if c.sense == GE]
        eq = [r for r, c in enumerate(model.constraints) if c.sense == EQ]
        blocks = []
        b_ub = []
        if le:
            blocks.append(self.A[le])
            b_ub.append(self.cu[le])
        if ge:
            blocks.append(-self.A[ge])
            b_ub.append(-self.cl[ge])
        self._a_ub = sp.vstack(blocks).tocsr() if blocks else None
        self._b_ub = np.concatenate(b_ub) if b_ub else None
        self._a_eq = self.A[eq].tocsr() if eq else None
        self._b_eq = self.cu[eq] if eq else None

    def assignment_from(self, x: np.ndarray) -> dict[str, float]:
        out = {}
        for name, kind, val in zip(self.names, self.kinds, x):
            if kind == BINARY:
                r = round(val)
                if abs(val - r) > _BINARY_TOL:
                    raise SolverError(f"binary variable {name} solved to {val}")
                val = float(r)
            out[name] = float(val)
        return out


def _result(model: MilpModel, compiled: CompiledModel, status: str,
            x: np.ndarray | None, gap: float, started: float) -> SolveResult:
    wall = time.perf_counter() - started
    if x is None:
        return SolveResult(status, math.nan, math.inf, {}, wall)
    assignment = compiled.assignment_from(x)
    objective = model.evaluate_objective(assignment)
    return SolveResult(status, objective, gap, assignment, wall)


class ScipyBackend:
    """In-process MILP solving through scipy.optimize.milp (HiGHS)."""

    name = "scipy"

    def solve(self, model: MilpModel, params: SolveParams = SolveParams()) -> SolveResult:
        started = time.perf_counter()
        compiled = CompiledModel(model)
        try:
            res = milp(
                c=compiled.c,
                constraints=LinearConstraint(compiled.A, compiled.cl, compiled.cu),
                integrality=compiled.integrality,
                bounds=Bounds(compiled.lb, compiled.ub),
                options={
                    "time_limit": params.time_limit_s,
                    "mip_rel_gap": params.mip_gap_tolerance,
                    "presolve": True,
                },
            )
        except Exception as exc:  # malformed model surfaced by scipy
            raise SolverError(f"{self.name}: {exc}") from exc
        gap = getattr(res, "mip_gap", None)
        gap = 0.0 if gap is None else float(gap)
        if res.status == 0:
            status = OPTIMAL if gap <= max(params.mip_gap_tolerance, 1e-9) else FEASIBLE_GAP
            return _result(model, compiled, status, res.x, gap, started)
        if res.status == 1 and res.x is not None:
            return _result(model, compiled, TIME_LIMIT, res.x, gap, started)
        if res.status == 2:
            return _result(model, compiled, INFEASIBLE, None, math.inf, started)
        if res.status == 1:
            return _result(model, compiled, TIME_LIMIT, None, math.inf, started)
        raise SolverError(f"{self.name}: solver failed ({res.message})")


class EnumerationBackend:
    """Exhaustive fallback: enumerate binaries, solve the LP per assignment.

    Guarded to max_binaries free binaries.  Assignments that already violate
    a purely-binary constraint are pruned before the LP.
    """

    name = "enumeration"

    def __init__(self, max_binaries: int = 20):
        self.max_binaries = max_binaries

    def solve(self, model: MilpModel, params: SolveParams = SolveParams()) -> SolveResult:
        started = time.perf_counter()
        compiled = CompiledModel(model)
        free = model.free_binary_names()
        if len(free) > self.max_binaries:
            raise SolverError(
                f"{self.name}: {len(free)} free binaries exceeds the "
                f"{self.max_binaries}-binary guard"
            )
        free_idx = [model.var_index(name) for name in free]
        binary_rows = self._binary_only_rows(model, compiled, set(free_idx))

        best_x = None
        best_obj = math.inf
        lb = compiled.lb.copy()
        ub = compiled.ub.copy()
        for bits in product((0.0, 1.0), repeat=len(free)):
            lb[free_idx] = bits
            ub[free_idx] = bits
            if not self._binary_rows_ok(binary_rows, lb):
                continue
            status, x = compiled.lp_solve(lb, ub, params.time_limit_s)
            if status != OPTIMAL:
                continue
            obj = float(compiled.c @ x)
            if obj < best_obj - 1e-12:
                best_obj = obj
                best_x = x.copy()
        if best_x is None:
            return _result(model, compiled, INFEASIBLE, None, math.inf, started)
        return _result(model, compiled, OPTIMAL, best_x, 0.0, started)

    @staticmethod
    def _binary_only_rows(model, compiled, free_idx: set[int]):
        rows = []
        for con in model.constraints:
            support = [idx for idx, _ in con.terms]
            if all(model.variables[i].kind == BINARY for i in support):
                rows.append(con)
        return rows

    @staticmethod
    def _binary_rows_ok(rows, values: np.ndarray) -> bool:
        for con in rows:
            lhs = sum(coef * values[idx] for idx, coef in con.terms)
            if con.sense == LE and lhs > con.rhs + 1e-9:
                return False
            if con.sense == GE and lhs < con.rhs - 1e-9:
                return False
            if con.sense == EQ and abs(lhs - con.rhs) > 1e-9:
                return False
        return True


class ExternalBackend:
    """Runs a command-line solver through LP-file exchange.

    command_template must contain {model} and {solution}; the solution file is
    parsed as whitespace-separated ``<var-name> <value>`` lines (unknown names
    and malformed lines are ignored).  Missing variables default to their
    lower bound, so writers may omit zeros.
    """

    name = "external"

    def __init__(self, command_template: str):
        if "{model}" not in command_template or "{solution}" not in command_template:
            raise ValueError("command template needs {model} and {solution} placeholders")
        self.command_template = command_template

    def solve(self, model: MilpModel, params: SolveParams = SolveParams()) -> SolveResult:
        from .lpio import read_solution, write_lp

        started = time.perf_counter()
        compiled = CompiledModel(model)
        with tempfile.TemporaryDirectory(prefix="gridres-") as tmp:
            model_path = os.path.join(tmp, "model.lp")
            sol_path = os.path.join(tmp, "model.sol")
            with open(model_path, "w", encoding="utf-8") as fh:
                fh.write(write_lp(model))
            cmd = [
                part.format(model=model_path, solution=sol_path)
                for part in shlex.split(self.command_template)
            ]
            try:
                proc = subprocess.run(
                    cmd, capture_output=True, text=True, timeout=params.time_limit_s + 30
                )
            except (OSError, subprocess.TimeoutExpired) as exc:
                raise SolverError(f"{self.name}: {exc}") from exc
            if proc.returncode != 0:
                raise SolverError(
                    f"{self.name}: solver exited with {proc.returncode}: {proc.stderr[-500:]}"
                )
            if not os.path.exists(sol_path) or os.path.getsize(sol_path) == 0:
                return SolveResult(INFEASIBLE, math.nan, math.inf, {}, time.perf_counter() - started)
            with open(sol_path, "r", encoding="utf-8") as fh:
                raw = read_solution(fh.read(), set(compiled.names))
        x = np.array([raw.get(name, lo) for name, lo in zip(compiled.names, compiled.lb)])
        return _result(model, compiled, OPTIMAL, x, 0.0, started)


def solve(model: MilpModel, params: SolveParams = SolveParams(), backend=None) -> SolveResult:
    return (backend or default_backend()).solve(model, params)


def solve_fixed_binaries(
    model: MilpModel,
    binary_assignment: dict[str, float],
    params: SolveParams = SolveParams(),
    compiled: CompiledModel | None = None,
) -> SolveResult:
    """Solves the LP left after pinning every binary to the given value.

    Pass a prebuilt CompiledModel when sweeping many assignments over one
    model (the brute-force oracle pattern).
    """
    started = time.perf_counter()
    compiled = compiled or CompiledModel(model)
    missing = [name for name in model.binary_names if name not in binary_assignment]
    if missing:
        raise SolverError(f"assignment misses binary variables: {missing[:5]}")
    lb = compiled.lb.copy()
    ub = compiled.ub.copy()
    for name, value in binary_assignment.items():
        idx = model.var_index(name)
        if value not in (0, 1, 0.0, 1.0):
            raise SolverError(f"binary {name} pinned to non-binary value {value}")
        if not compiled.lb[idx] <= value <= compiled.ub[idx]:
            return SolveResult(INFEASIBLE, math.nan, math.inf, {}, time.perf_counter() - started)
        lb[idx] = ub[idx] = float(value)
    status, x = compiled.lp_solve(lb, ub, params.time_limit_s)
    if status != OPTIMAL:
        return SolveResult(status, math.nan, math.inf, {}, time.perf_counter() - started)
    return _result(model, compiled, OPTIMAL, x, 0.0, started)


def default_backend():
    choice = os.environ.get("GRIDRES_BACKEND", "scipy").lower()
    if choice == "scipy":
        return ScipyBackend()
    if choice == "enumeration":
        return EnumerationBackend()
    if choice == "external":
        cmd = os.environ.get("GRIDRES_SOLVER_CMD")
        if not cmd:
            raise SolverError("GRIDRES_BACKEND=external needs GRIDRES_SOLVER_CMD")
        return ExternalBackend(cmd)
    raise SolverError(f"unknown backend {choice!r}")
