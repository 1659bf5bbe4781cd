import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from myeloma_opt.dynamics import PharmacodynamicsParameters, ValidationError
from myeloma_opt.regimens import (
    Constant,
    DoseGrid,
    PiecewiseConstant,
    Sampled,
    enumerate_grid,
    load_regimen,
    pc_approximate,
    period_means,
    regimen_from_dict,
    regimen_to_dict,
    save_regimen,
)

Q = PharmacodynamicsParameters()
UMAX = np.array(Q.u_max)
GRID = DoseGrid()
A, B, C, D = ([204.93, 0, 0], [0, 3.5325, 0], [0, 0, 90.0], [51.2325, 0.8831, 0])


def test_default_grid():
    assert GRID.levels[0] == (0.0, 51.2325, 102.465, 153.6975, 204.93)
    assert GRID.levels[1] == (0.0, 0.8831, 1.7663, 2.6494, 3.5325)
    assert GRID.levels[2] == (0.0, 90.0)
    GRID.validate(Q)


def test_fraction_grid_close_to_printed():
    frac = DoseGrid.from_fractions(Q.u_max)
    np.testing.assert_allclose(frac.levels[0], GRID.levels[0], rtol=1e-12)
    np.testing.assert_allclose(frac.levels[1], GRID.levels[1], atol=1e-4)


@pytest.mark.parametrize("levels", [
    ((0, 1), (0, 1), ()),
    ((1, 0), (0,), (0,)),
    ((0, 0), (0,), (0,)),
    ((-1, 0), (0,), (0,)),
    ((0,), (0,)),
])
def test_bad_grids(levels):
    with pytest.raises(ValidationError):
        DoseGrid(levels)


def test_grid_above_umax():
    with pytest.raises(ValidationError, match="exceeds u_max"):
        DoseGrid(((0, 300.0), (0,), (0,))).validate(Q)


def test_enumerate_default():
    cands = enumerate_grid(GRID)
    assert cands.shape == (50, 3)
    assert tuple(cands[0]) == (0, 0, 0)
    assert tuple(cands[1]) == (0, 0, 90)
    assert tuple(cands[-1]) == (204.93, 3.5325, 90)


def test_enumerate_single_and_binary():
    assert enumerate_grid(DoseGrid(((0,), (0,), (0,)))).shape == (1, 3)
    cands = enumerate_grid(DoseGrid(((0, 1), (0, 2), (0, 3))))
    expected = [[a, b, c] for a in (0, 1) for b in (0, 2) for c in (0, 3)]
    np.testing.assert_array_equal(cands, expected)


def test_dose_at_constant():
    c = Constant(D)
    for t in (0.0, 17.3, 360.0):
        np.testing.assert_array_equal(c.dose_at(t), D)


def test_dose_at_piecewise_right_continuous():
    r = PiecewiseConstant(90.0, [A, B, C, D])
    np.testing.assert_array_equal(r.dose_at(90.0), B)
    np.testing.assert_array_equal(r.dose_at(89.999), A)
    np.testing.assert_array_equal(r.dose_at(270.0), D)
    np.testing.assert_array_equal(r.dose_at(360.0), D)
    with pytest.raises(ValueError):
        r.dose_at(361.0)
    with pytest.raises(ValueError):
        r.dose_at(-1.0)


def test_dose_at_sampled():
    mesh = np.array([0.0, 1.0, 3.0])
    vals = np.array([[0, 0, 0], [10, 1, 2], [30, 3, 0]], float)
    s = Sampled(mesh, vals)
    np.testing.assert_array_equal(s.dose_at(1.0), vals[1])
    np.testing.assert_array_equal(s.dose_at(3.0), vals[2])
    np.testing.assert_allclose(s.dose_at(2.0), [20, 2, 1])
    np.testing.assert_array_equal(s.dose_at(2.0, u_max=np.array([5, 5, 5])), [5, 2, 1])
    with pytest.raises(ValueError):
        s.dose_at(3.5)


def test_piecewise_tiling():
    r = PiecewiseConstant(90.0, [A, B, C])
    with pytest.raises(ValidationError, match="do not tile"):
        r.validate(Q, 360.0)
    PiecewiseConstant(90.0, [A, B, C, D]).validate(Q, 360.0)


def test_bounds():
    with pytest.raises(ValidationError):
        Constant([205.0, 0, 0]).validate(Q, 360.0)
    with pytest.raises(ValidationError):
        PiecewiseConstant(90.0, [[0, -1, 0]] * 4).validate(Q, 360.0)


def test_sampled_mesh_validation():
    with pytest.raises(ValidationError):
        Sampled([0.0, 2.0, 1.0], np.zeros((3, 3)))
    with pytest.raises(ValidationError):
        Sampled([0.0, 10.0], np.zeros((2, 3))).validate(Q, 360.0)


def test_approximate_constant_level():
    mesh = np.linspace(0, 360, 361)
    s = Sampled(mesh, np.tile([153.6975, 0.8831, 90.0], (361, 1)))
    out = pc_approximate(s, 90.0, GRID)
    np.testing.assert_array_equal(out.doses, np.tile([153.6975, 0.8831, 90.0], (4, 1)))


def test_approximate_sixty_percent():
    mesh = np.linspace(0, 360, 361)
    s = Sampled(mesh, np.tile([0.6 * 204.93, 0, 0], (361, 1)))
    out = pc_approximate(s, 90.0, GRID)
    assert np.all(out.doses[:, 0] == 102.465)


def test_ties_go_low():
    assert GRID.nearest(2, 45.0) == 0.0
    assert GRID.nearest(0, 0.5 * (51.2325 + 102.465)) == 51.2325


def test_period_means_exact_for_ramp():
    mesh = np.linspace(0, 360, 361)
    vals = np.column_stack([mesh / 360 * 200, np.zeros(361), np.zeros(361)])
    means = period_means(Sampled(mesh, vals), 90.0, 360.0)
    np.testing.assert_allclose(means[:, 0], [25, 75, 125, 175], rtol=1e-13)


def test_period_means_coarser_piecewise():
    r = PiecewiseConstant(45.0, [[0, 0, 0], [100, 0, 0]] * 4)
    np.testing.assert_allclose(period_means(r, 90.0, 360.0)[:, 0], [50, 50, 50, 50])


def grid_regimens():
    levels = [st.sampled_from(lv) for lv in GRID.levels]
    row = st.tuples(*levels)
    return st.lists(row, min_size=1, max_size=6)


@settings(max_examples=100, deadline=None)
@given(grid_regimens())
def test_idempotent_on_grid(rows):
    r = PiecewiseConstant(90.0, rows)
    once = pc_approximate(r, 90.0, GRID)
    assert once == r
    assert pc_approximate(once, 90.0, GRID) == once


@settings(max_examples=100, deadline=None)
@given(st.lists(st.lists(st.floats(0, 1), min_size=3, max_size=3), min_size=13, max_size=13))
def test_approximation_bounds_and_error(fracs):
    mesh = np.linspace(0, 360, 13)
    s = Sampled(mesh, np.array(fracs) * UMAX)
    out = pc_approximate(s, 90.0, GRID)
    out.validate(Q, 360.0)
    means = period_means(s, 90.0, 360.0)
    for i in range(3):
        gap = GRID.max_gap(i)
        # the u3 grid stops at 90 < u3_max, so means above it may sit further away
        top = GRID.levels[i][-1]
        err = np.abs(means[:, i] - out.doses[:, i])
        ok = (err <= 0.5 * gap + 1e-12) | (means[:, i] > top)
        assert ok.all()


def test_empty_grid_rejected():
    with pytest.raises(ValidationError):
        DoseGrid(((0,), (), (0,)))


@pytest.mark.parametrize("reg", [
    Constant(D),
    PiecewiseConstant(90.0, [A, B, C, D]),
    Sampled(np.linspace(0, 360, 5), np.random.default_rng(3).uniform(0, 1, (5, 3)) * UMAX),
])
@pytest.mark.parametrize("suffix", [".json", ".yaml", ".csv"])
def test_round_trip(tmp_path, reg, suffix):
    path = tmp_path / f"reg{suffix}"
    if suffix == ".yaml":
        import yaml
        path.write_text(yaml.safe_dump(regimen_to_dict(reg)))
    else:
        save_regimen(reg, path)
    assert load_regimen(path) == reg


def test_dict_errors():
    with pytest.raises(ValidationError):
        regimen_from_dict({"kind": "pulsed"})
    with pytest.raises(ValidationError):
        regimen_from_dict({"kind": "piecewise", "doses": [[0, 0, 0]]})
    with pytest.raises(ValidationError):
        regimen_from_dict([1, 2, 3])


def test_csv_non_contiguous(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("t_start,t_end,u1,u2,u3\n0,90,0,0,0\n100,190,0,0,0\n")
    with pytest.raises(ValidationError, match="contiguous"):
        load_regimen(path)


def test_csv_unequal_periods(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("t_start,t_end,u1,u2,u3\n0,90,0,0,0\n90,200,0,0,0\n")
    with pytest.raises(ValidationError, match="equal length"):
        load_regimen(path)


def test_json_is_plain(tmp_path):
    path = save_regimen(PiecewiseConstant(90.0, [A, B, C, D]), tmp_path / "r.json")
    data = json.loads(path.read_text())
    assert data["kind"] == "piecewise" and data["period"] == 90.0
