import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from switchiv.dataset import (DataError, Dataset, SubjectRecord, TimeVaryingCovariateRow,
                              at_risk_matrix, cumulative_exposure, event_grid, event_matrix,
                              exposure_matrix, from_arrays, make_dataset, parse_subjects,
                              treatment_at, treatment_matrix, validate, write_subjects,
                              write_tv_rows)


def test_parse_row_maps_fields(csv_file):
    path = csv_file("id,arm,time,event,switch_time,x", ["p1,1,100,1,40,0.5"])
    d = parse_subjects(path)
    (s,) = d.subjects
    assert s == SubjectRecord("p1", 1, 100.0, 1, 40.0, (0.5,))
    assert d.covariate_names == ("x",)


def test_empty_switch_is_absent(csv_file):
    path = csv_file("id,arm,time,event,switch_time,x", ["p1,1,100,1,,0.5"])
    assert parse_subjects(path).subjects[0].switch_time is None


def test_experimental_switch_rejected(csv_file):
    path = csv_file("id,arm,time,event,switch_time", ["p2,0,50,0,20"])
    with pytest.raises(DataError, match="experimental-arm subject with switch_time"):
        parse_subjects(path)


def test_parse_errors_name_the_line(csv_file):
    path = csv_file("id,arm,time,event", ["a,1,10,1", "b,1,abc,1"])
    with pytest.raises(DataError, match="line 3"):
        parse_subjects(path)
    with pytest.raises(DataError, match="missing column"):
        parse_subjects(csv_file("id,arm,time", ["a,1,10"], name="bad.csv"))


def test_validate_reports():
    ok = [SubjectRecord("a", 1, 10.0, 1), SubjectRecord("b", 0, 5.0, 0),
          SubjectRecord("c", 1, 7.0, 1, 3.0)]
    assert validate(Dataset(tuple(ok))).violations == ()
    late = Dataset((SubjectRecord("a", 1, 100.0, 1, 120.0),))
    rep = validate(late)
    assert len(rep) == 1 and "switch after end of follow-up" in rep.violations[0]
    dup = Dataset((SubjectRecord("a", 1, 1.0, 1), SubjectRecord("a", 0, 2.0, 1)))
    rep = validate(dup)
    assert len(rep) == 1 and "duplicate id" in rep.violations[0]
    with pytest.raises(DataError):
        make_dataset(dup.subjects)


def test_covariate_width_checked():
    d = Dataset((SubjectRecord("a", 1, 1.0, 1, covariates=(1.0,)),
                 SubjectRecord("b", 1, 1.0, 1, covariates=())), ("x",))
    assert len(validate(d)) == 1


def test_treatment_indicator():
    exp = SubjectRecord("e", 0, 900.0, 0)
    never = SubjectRecord("c", 1, 900.0, 0)
    sw = SubjectRecord("s", 1, 900.0, 0, 40.0)
    assert treatment_at(exp, 10.0) == 0
    assert treatment_at(never, 500.0) == 1
    assert treatment_at(sw, 39.999) == 1
    assert treatment_at(sw, 40.0) == 0
    # right-continuity: exposure stops growing exactly where D drops
    assert cumulative_exposure(sw, 40.0) == cumulative_exposure(sw, 40.0 + 1e-9) == 40.0


def test_cumulative_exposure_examples():
    assert cumulative_exposure(SubjectRecord("e", 0, 900.0, 0), 300.0) == 0.0
    assert cumulative_exposure(SubjectRecord("c", 1, 900.0, 0), 300.0) == 300.0
    assert cumulative_exposure(SubjectRecord("s", 1, 900.0, 0, 40.0), 300.0) == 40.0


def test_event_grid_examples():
    d = from_arrays([1, 0, 1], [5.0, 3.0, 5.0], [1, 1, 1])
    g = event_grid(d)
    assert list(g.times) == [3.0, 5.0] and g.k == 2
    assert list(g.increments) == [3.0, 2.0]
    with pytest.raises(DataError):
        event_grid(from_arrays([1, 0], [1.0, 2.0], [0, 0]))
    d = from_arrays([1, 0], [800.0, 100.0], [1, 0])
    assert event_grid(d, tau_end=1000).tau_end == 1000


def test_risk_and_event_matrices():
    d = from_arrays([1, 1, 0], [3.0, 5.0, 7.0], [1, 1, 1])
    g = event_grid(d)
    np.testing.assert_array_equal(at_risk_matrix(d, g), [[1, 0, 0], [1, 1, 0], [1, 1, 1]])
    np.testing.assert_array_equal(event_matrix(d, g), np.eye(3))


def test_round_trip(tmp_path):
    d = from_arrays([1, 0, 1], [10.5, 3.25, 8.0], [1, 0, 1], [np.inf, np.inf, 2.0],
                    [[0.1], [0.2], [1 / 3]], ["age"], [4.0, np.inf, 1.5])
    write_subjects(d, tmp_path / "s.csv")
    back = parse_subjects(tmp_path / "s.csv")
    assert back.subjects == d.subjects
    rows = [TimeVaryingCovariateRow("s0", 0.0, 4.0, (0.0,)),
            TimeVaryingCovariateRow("s0", 4.0, 10.5, (1.0,)),
            TimeVaryingCovariateRow("s1", 0.0, 3.25, (0.0,)),
            TimeVaryingCovariateRow("s2", 0.0, 8.0, (0.0,))]
    tv = make_dataset(d.subjects, d.covariate_names, rows, ("pd",))
    write_tv_rows(tv, tmp_path / "tv.csv")
    back = parse_subjects(tmp_path / "s.csv", tv_path=tmp_path / "tv.csv")
    assert back.tv_rows == tv.tv_rows and back.tv_names == ("pd",)


@st.composite
def subjects(draw):
    n = draw(st.integers(2, 12))
    out = []
    for i in range(n):
        arm = draw(st.integers(0, 1))
        t = draw(st.floats(0.0, 1000.0, allow_nan=False))
        sw = None
        if arm == 1 and draw(st.booleans()):
            sw = draw(st.floats(0.0, t)) if t > 0 else 0.0
        out.append(SubjectRecord(f"p{i}", arm, t, draw(st.integers(0, 1)), sw))
    return Dataset(tuple(out))


@settings(max_examples=60, deadline=None)
@given(subjects(), st.floats(0.0, 1100.0))
def test_exposure_integrates_treatment(d, t):
    """Cumulative exposure is the integral of D and the matrices agree with the scalar forms."""
    D = treatment_matrix(d, np.array([t]))[:, 0]
    E = exposure_matrix(d, np.array([t]))[:, 0]
    for i, s in enumerate(d.subjects):
        assert D[i] == treatment_at(s, t)
        assert E[i] == cumulative_exposure(s, t)
        grid = np.linspace(0.0, t, 401)
        approx = np.trapezoid([treatment_at(s, u) for u in grid], grid) if t > 0 else 0.0
        assert math.isclose(E[i], approx, abs_tol=t / 200 + 1e-12)


@settings(max_examples=60, deadline=None)
@given(subjects())
def test_valid_random_datasets_pass(d):
    assert validate(d).ok
