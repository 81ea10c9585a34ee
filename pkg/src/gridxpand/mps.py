"""MPS model exchange: writer and reader.

Writes the free variant of the MPS format with fixed-field-compatible 8-char
generated names (R#######/X#######) and full-precision values via ``repr``,
so a re-import reproduces every coefficient from its decimal text exactly.
Two-sided information never uses RANGES; each constraint is one row.
"""

from __future__ import annotations

from .milp import EQUAL, GREATER_EQUAL, INF, LESS_EQUAL, MilpModel, ModelError

_SENSE_TO_ROW = {LESS_EQUAL: "L", GREATER_EQUAL: "G", EQUAL: "E"}
_ROW_TO_SENSE = {v: k for k, v in _SENSE_TO_ROW.items()}

OBJ_ROW = "OBJ"


def _num(value: float) -> str:
    text = repr(float(value))
    return text


def _entry(f1: str, f2: str, f3: str = "", f4: str = "") -> str:
    line = f" {f1:<3}{f2:<10}"
    if f3:
        line += f"{f3:<10}"
    if f4:
        line += f4
    return line.rstrip()


def export_model(model: MilpModel, path: str) -> None:
    """Write the model as an MPS file (minimization, objective row OBJ)."""
    col_name = {i: f"X{i + 1:07d}" for i in range(len(model.variables))}
    row_name = {i: f"R{i + 1:07d}" for i in range(len(model.constraints))}

    obj = {}
    for ref, cost in model.objective:
        obj[ref.idx] = obj.get(ref.idx, 0.0) + cost

    col_rows: dict[int, list[tuple[str, float]]] = {i: [] for i in range(len(model.variables))}
    for i, con in enumerate(model.constraints):
        for ref, coeff in con.terms:
            col_rows[ref.idx].append((row_name[i], coeff))

    lines: list[str] = [f"NAME          {model.name[:60] or 'GRIDXPAND'}", "ROWS",
                        f" N   {OBJ_ROW}"]
    for i, con in enumerate(model.constraints):
        lines.append(f" {_SENSE_TO_ROW[con.sense]}   {row_name[i]}")

    lines.append("COLUMNS")
    in_int = False
    marker = 0
    for ref in model.variables:
        if ref.binary != in_int:
            kind = "'INTORG'" if ref.binary else "'INTEND'"
            lines.append(_entry("", f"MARK{marker:04d}", "'MARKER'", f"                 {kind}"))
            in_int = ref.binary
            marker += 1
        name = col_name[ref.idx]
        entries = col_rows[ref.idx]
        # every column must appear at least once; park unused ones in OBJ
        if ref.idx in obj or not entries:
            lines.append(_entry("", name, OBJ_ROW, _num(obj.get(ref.idx, 0.0))))
        for row, coeff in entries:
            lines.append(_entry("", name, row, _num(coeff)))
    if in_int:
        lines.append(_entry("", f"MARK{marker:04d}", "'MARKER'", "                 'INTEND'"))

    lines.append("RHS")
    for i, con in enumerate(model.constraints):
        if con.rhs != 0.0:
            lines.append(_entry("", "RHS", row_name[i], _num(con.rhs)))

    lines.append("BOUNDS")
    for ref in model.variables:
        name = col_name[ref.idx]
        lo, hi = ref.lo, ref.hi
        if lo == hi:
            lines.append(_entry("FX", "BND", name, _num(lo)))
        elif lo == -INF and hi == INF:
            lines.append(_entry("FR", "BND", name))
        elif lo == -INF:
            lines.append(_entry("MI", "BND", name))
            lines.append(_entry("UP", "BND", name, _num(hi)))
        else:
            if lo != 0.0:
                lines.append(_entry("LO", "BND", name, _num(lo)))
            if hi != INF:
                lines.append(_entry("UP", "BND", name, _num(hi)))
    lines.append("ENDATA")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def import_model(path: str) -> MilpModel:
    """Read an MPS file written by :func:`export_model` (or compatible)."""
    section = None
    name = "imported"
    rows: list[tuple[str, str]] = []  # (sense, row name)
    row_order: dict[str, int] = {}
    obj_row: str | None = None
    col_entries: dict[str, list[tuple[str, float]]] = {}
    col_order: list[str] = []
    integer_cols: set[str] = set()
    rhs: dict[str, float] = {}
    bounds: dict[str, list[tuple[str, float]]] = {}
    in_int = False

    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.startswith("*"):
                continue
            if not line.startswith(" "):
                parts = line.split()
                keyword = parts[0].upper()
                if keyword == "NAME":
                    name = parts[1] if len(parts) > 1 else "imported"
                    continue
                if keyword == "ENDATA":
                    break
                if keyword in ("ROWS", "COLUMNS", "RHS", "BOUNDS"):
                    section = keyword
                    continue
                if keyword == "RANGES":
                    raise ModelError(f"{path}:{lineno}: RANGES section not supported")
                raise ModelError(f"{path}:{lineno}: unknown section {keyword!r}")
            fields = line.split()
            if section == "ROWS":
                sense, row = fields[0].upper(), fields[1]
                if sense == "N":
                    if obj_row is None:
                        obj_row = row
                    continue
                if sense not in _ROW_TO_SENSE:
                    raise ModelError(f"{path}:{lineno}: bad row sense {sense!r}")
                row_order[row] = len(rows)
                rows.append((_ROW_TO_SENSE[sense], row))
            elif section == "COLUMNS":
                if len(fields) >= 3 and fields[1] == "'MARKER'":
                    in_int = fields[2] == "'INTORG'"
                    continue
                col = fields[0]
                if col not in col_entries:
                    col_entries[col] = []
                    col_order.append(col)
                    if in_int:
                        integer_cols.add(col)
                pairs = fields[1:]
                if len(pairs) % 2:
                    raise ModelError(f"{path}:{lineno}: odd COLUMNS fields")
                for row, val in zip(pairs[::2], pairs[1::2]):
                    col_entries[col].append((row, float(val)))
            elif section == "RHS":
                pairs = fields[1:]
                for row, val in zip(pairs[::2], pairs[1::2]):
                    rhs[row] = float(val)
            elif section == "BOUNDS":
                kind = fields[0].upper()
                col = fields[2]
                val = float(fields[3]) if len(fields) > 3 else 0.0
                bounds.setdefault(col, []).append((kind, val))
            else:
                raise ModelError(f"{path}:{lineno}: data outside any section")

    model = MilpModel(name=name)
    refs = {}
    for col in col_order:
        lo, hi = 0.0, INF
        binary = False
        for kind, val in bounds.get(col, []):
            if kind == "UP":
                hi = val
            elif kind == "LO":
                lo = val
            elif kind == "FX":
                lo = hi = val
            elif kind == "FR":
                lo, hi = -INF, INF
            elif kind == "MI":
                lo = -INF
            elif kind == "PL":
                hi = INF
            elif kind == "BV":
                lo, hi, binary = 0.0, 1.0, True
            else:
                raise ModelError(f"bound type {kind!r} not supported")
        if col in integer_cols and lo >= 0.0 and hi <= 1.0:
            binary = True
        refs[col] = model.add_var("col", (col,), lo=lo, hi=hi, binary=binary)

    row_terms: dict[str, list] = {r: [] for _, r in rows}
    for col in col_order:
        for row, val in col_entries[col]:
            if row == obj_row:
                if val != 0.0:
                    model.add_objective("objective", refs[col], val)
            elif row in row_terms:
                row_terms[row].append((refs[col], val))
            else:
                raise ModelError(f"column {col} references unknown row {row}")
    for sense, row in rows:
        model.add_constraint(row_terms[row], sense, rhs.get(row, 0.0), tag=row)
    return model
