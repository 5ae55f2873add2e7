"""LP (CPLEX dialect) and MPS writers plus the solution-file reader.

Output is deterministic: variables and rows are emitted in lexicographic
name order, numbers with repr-quality precision, so byte-identical files
make diff-based regression tests possible.
"""

from __future__ import annotations

import math

from .model import BINARY, EQ, GE, LE, MilpModel

_SENSE_LP = {LE: "<=", GE: ">=", EQ: "="}


def _num(x: float) -> str:
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def _expr(terms: list[tuple[str, float]]) -> str:
    if not terms:
        return "0"
    parts = []
    for i, (name, coef) in enumerate(terms):
        sign = "-" if coef < 0 else ("+" if i else "")
        mag = abs(coef)
        coef_txt = "" if mag == 1.0 else _num(mag) + " "
        parts.append(f"{sign} {coef_txt}{name}".strip())
    return " ".join(parts)


def write_lp(model: MilpModel) -> str:
    """Serializes the model in the CPLEX LP dialect."""
    var_order = sorted(range(len(model.variables)), key=lambda i: model.variables[i].name)
    lines = ["\\ gridres model", "Minimize"]
    obj_terms = sorted(
        ((model.variables[i].name, c) for i, c in model.objective.items() if c != 0.0),
        key=lambda t: t[0],
    )
    obj = _expr(obj_terms)
    if model.objective_constant:
        obj = f"{obj} + {_num(model.objective_constant)}" if obj_terms else _num(model.objective_constant)
    lines.append(f" obj: {obj if obj.strip() else '0'}")
    lines.append("Subject To")
    for con in sorted(model.constraints, key=lambda c: c.name):
        terms = sorted(
            ((model.variables[i].name, c) for i, c in con.terms), key=lambda t: t[0]
        )
        lines.append(f" {con.name}: {_expr(terms)} {_SENSE_LP[con.sense]} {_num(con.rhs)}")
    lines.append("Bounds")
    for i in var_order:
        v = model.variables[i]
        if v.lb == v.ub:
            lines.append(f" {v.name} = {_num(v.lb)}")
        elif math.isinf(v.ub) and v.lb == 0.0:
            continue  # LP default bound
        elif math.isinf(v.ub):
            lines.append(f" {v.name} >= {_num(v.lb)}")
        else:
            lines.append(f" {_num(v.lb)} <= {v.name} <= {_num(v.ub)}")
    binaries = [model.variables[i].name for i in var_order
                if model.variables[i].kind == BINARY]
    if binaries:
        lines.append("Binaries")
        lines.extend(f" {name}" for name in binaries)
    lines.append("End")
    return "\n".join(lines) + "\n"


def write_mps(model: MilpModel) -> str:
    """Serializes the model in free MPS format."""
    var_order = sorted(range(len(model.variables)), key=lambda i: model.variables[i].name)
    cons = sorted(model.constraints, key=lambda c: c.name)
    sense_row = {LE: "L", GE: "G", EQ: "E"}

    lines = ["NAME gridres", "ROWS", " N obj"]
    for con in cons:
        lines.append(f" {sense_row[con.sense]} {con.name}")

    by_var: dict[int, list[tuple[str, float]]] = {}
    for con in cons:
        for idx, coef in con.terms:
            by_var.setdefault(idx, []).append((con.name, coef))

    lines.append("COLUMNS")
    marker = 0
    in_int = False
    for i in var_order:
        v = model.variables[i]
        want_int = v.kind == BINARY
        if want_int != in_int:
            kind = "INTORG" if want_int else "INTEND"
            lines.append(f"    MARKER{marker} 'MARKER' '{kind}'")
            marker += 1
            in_int = want_int
        entries = []
        obj_coef = model.objective.get(i, 0.0)
        if obj_coef:
            entries.append(("obj", obj_coef))
        entries.extend(by_var.get(i, ()))
        if not entries:
            entries.append(("obj", 0.0))
        for row, coef in entries:
            lines.append(f"    {v.name} {row} {_num(coef)}")
    if in_int:
        lines.append(f"    MARKER{marker} 'MARKER' 'INTEND'")

    lines.append("RHS")
    if model.objective_constant:
        lines.append(f"    RHS obj {_num(-model.objective_constant)}")
    for con in cons:
        if con.rhs:
            lines.append(f"    RHS {con.name} {_num(con.rhs)}")

    lines.append("BOUNDS")
    for i in var_order:
        v = model.variables[i]
        if v.lb == v.ub:
            lines.append(f" FX BND {v.name} {_num(v.lb)}")
            continue
        if v.kind == BINARY and v.lb == 0.0 and v.ub == 1.0:
            lines.append(f" BV BND {v.name}")
            continue
        if math.isinf(v.lb):
            lines.append(f" MI BND {v.name}")
        elif v.lb != 0.0:
            lines.append(f" LO BND {v.name} {_num(v.lb)}")
        if not math.isinf(v.ub):
            lines.append(f" UP BND {v.name} {_num(v.ub)}")
    lines.append("ENDATA")
    return "\n".join(lines) + "\n"


def read_solution(text: str, known_names: set[str] | None = None) -> dict[str, float]:
    """Parses ``<var-name> <value>`` lines; other lines are ignored."""
    out: dict[str, float] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith(("#", "\\", "*")):
            continue
        parts = line.split()
        if len(parts) != 2:
            continue
        name, raw = parts
        if known_names is not None and name not in known_names:
            continue
        try:
            out[name] = float(raw)
        except ValueError:
            continue
    return out
