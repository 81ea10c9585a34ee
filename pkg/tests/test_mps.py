"""MPS writer/reader: round trips, empty models, cross-solver agreement."""

import pytest

from gridxpand.milp import INF, MilpModel, ModelError
from gridxpand.mps import export_model, import_model
from gridxpand.solver import solve_milp

from conftest import scipy_milp_objective


def sample_model():
    m = MilpModel(name="sample")
    x = m.add_var("x", lo=0.0, hi=4.5)
    y = m.add_var("pick", binary=True, lo=0, hi=1)
    z = m.add_var("z", lo=-INF, hi=INF)
    w = m.add_var("w", lo=-2.0, hi=INF)
    m.add_constraint([(x, 1.0), (y, -6.0)], "<=", 4.0, tag="cap")
    m.add_constraint([(x, 1.0), (z, 0.125), (w, 1.0)], ">=", 3.0, tag="demand")
    m.add_constraint([(z, 1.0), (w, -1.0)], "==", 0.25, tag="tie")
    m.add_objective("a", x, 1.5)
    m.add_objective("a", y, 7.25)
    m.add_objective("b", z, 0.3333333333333333)
    return m


def test_empty_model_roundtrip(tmp_path):
    m = MilpModel(name="empty")
    m.add_var("x", lo=0.0, hi=1.0)
    path = tmp_path / "empty.mps"
    export_model(m, str(path))
    text = path.read_text()
    assert text.startswith("NAME")
    assert "ENDATA" in text
    # no constraint rows beyond the objective declaration
    rows = [ln for ln in text.splitlines() if ln.startswith(" L ")
            or ln.startswith(" G ") or ln.startswith(" E ")]
    assert rows == []
    again = import_model(str(path))
    assert len(again.variables) == 1
    assert len(again.constraints) == 0


def test_roundtrip_counts_and_coefficients(tmp_path):
    m = sample_model()
    path = tmp_path / "m.mps"
    export_model(m, str(path))
    again = import_model(str(path))
    assert len(again.variables) == len(m.variables)
    assert len(again.constraints) == len(m.constraints)
    # objective coefficients survive the decimal text exactly
    orig = sorted(cost for _, cost in m.objective)
    back = sorted(cost for _, cost in again.objective)
    assert back == orig
    # bounds and integrality preserved
    for a, b in zip(m.variables, again.variables):
        assert (a.lo, a.hi, a.binary) == (b.lo, b.hi, b.binary)
    # senses and right-hand sides preserved
    for a, b in zip(m.constraints, again.constraints):
        assert a.sense == b.sense and a.rhs == b.rhs
        assert [c for _, c in a.terms] == [c for _, c in b.terms]


def test_reexport_is_stable(tmp_path):
    m = sample_model()
    p1, p2 = tmp_path / "a.mps", tmp_path / "b.mps"
    export_model(m, str(p1))
    export_model(import_model(str(p1)), str(p2))
    body1 = p1.read_text().splitlines()[1:]  # NAME line may differ
    body2 = p2.read_text().splitlines()[1:]
    assert body1 == body2


def test_cross_solver_objective(tmp_path):
    m = sample_model()
    path = tmp_path / "x.mps"
    export_model(m, str(path))
    imported = import_model(str(path))
    mine = solve_milp(imported, gap=0.0)
    assert mine.status == "optimal"
    external = scipy_milp_objective(imported)
    assert mine.objective == pytest.approx(external, rel=1e-6, abs=1e-6)
    direct = solve_milp(m, gap=0.0)
    assert mine.objective == pytest.approx(direct.objective, rel=1e-9, abs=1e-9)


def test_fixed_field_names(tmp_path):
    m = sample_model()
    path = tmp_path / "m.mps"
    export_model(m, str(path))
    for line in path.read_text().splitlines():
        if line.startswith((" L ", " G ", " E ", " N ")):
            assert len(line.split()[1]) <= 8


def test_ranges_section_rejected(tmp_path):
    path = tmp_path / "r.mps"
    path.write_text("NAME test\nROWS\n N OBJ\n L R1\nRANGES\n RHS R1 1.0\nENDATA\n")
    with pytest.raises(ModelError, match="RANGES"):
        import_model(str(path))
