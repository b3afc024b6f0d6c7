import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from labelshift.core import (
    DegenerateSampleError,
    DiscreteDistribution,
    EstimationResult,
    InvalidInputError,
    NumericalError,
    SimplexVector,
    parse_vector,
    read_distribution_json,
    read_matrix_csv,
    simplex_project,
    validate_eval_matrix,
    write_matrix_csv,
)

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def brute_projection(v, step=1e-4):
    # squared distance to every point of the 1e-4 lattice on the 3-simplex
    N = round(1 / step)
    best, arg = np.inf, None
    for i in range(N + 1):
        j = np.arange(N + 1 - i)
        P = np.column_stack([np.full(j.size, i), j, N - i - j]) / N
        d = ((P - v) ** 2).sum(axis=1)
        t = int(np.argmin(d))
        if d[t] < best:
            best, arg = d[t], P[t]
    return arg


def test_simplex_vector_invariants():
    s = SimplexVector([0.2, 0.8])
    assert s.k == 2 and s.tolist() == [0.2, 0.8]
    for bad in ([0.5, 0.6], [-0.1, 1.1], [np.nan, 1.0], []):
        with pytest.raises(InvalidInputError):
            SimplexVector(bad)
    assert SimplexVector.uniform(4).tolist() == [0.25] * 4
    with pytest.raises(ValueError):
        s.values[0] = 1.0


def test_projection_examples():
    assert simplex_project([0.2, 0.8]).tolist() == [0.2, 0.8]
    assert np.allclose(simplex_project([2.0, 0.0]).values, [1.0, 0.0], atol=0)
    got = simplex_project([0.6, 0.6, 0.0]).values
    assert np.allclose(got, [0.5, 0.5, 0.0], atol=1e-15)
    assert np.allclose(got, brute_projection(np.array([0.6, 0.6, 0.0])), atol=1e-4)


def test_projection_matches_brute_force_random(rng):
    for _ in range(3):
        v = rng.normal(size=3)
        assert np.abs(simplex_project(v).values - brute_projection(v)).max() <= 1e-4


def test_projection_rejects_non_finite():
    with pytest.raises(InvalidInputError):
        simplex_project([np.inf, 0.0])
    with pytest.raises(InvalidInputError):
        simplex_project([np.nan, 0.0])


@settings(max_examples=200, deadline=None)
@given(st.lists(finite, min_size=1, max_size=8))
def test_projection_idempotent(v):
    p = simplex_project(v)
    assert np.array_equal(simplex_project(p.values).values, p.values)


@settings(max_examples=200, deadline=None)
@given(st.lists(finite, min_size=1, max_size=8), finite)
def test_projection_translation_invariant(v, c):
    a = simplex_project(v).values
    b = simplex_project(np.asarray(v) + c).values
    assert np.abs(a - b).max() <= 1e-12


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=8))
def test_projection_fixes_simplex_points(v):
    v = np.asarray(v)
    if v.sum() == 0:
        return
    s = SimplexVector.normalized(v)
    assert np.array_equal(simplex_project(s.values).values, s.values)


def test_validate_eval_matrix_examples():
    L = validate_eval_matrix([[1, 0], [0, 1]])
    assert (L.n, L.k) == (2, 2)
    with pytest.raises(DegenerateSampleError) as exc:
        validate_eval_matrix([[0, 0], [1, 1]])
    assert exc.value.row == 0 and "row 0" in str(exc.value)
    with pytest.raises(InvalidInputError):
        validate_eval_matrix([[1, -0.1]])
    with pytest.raises(InvalidInputError):
        validate_eval_matrix([[1, np.inf]])
    assert validate_eval_matrix([1.0, 2.0]).n == 1
    with pytest.raises(InvalidInputError):
        validate_eval_matrix(np.ones((2, 2, 2)))
    assert validate_eval_matrix(L) is L


def test_discrete_distribution():
    d = DiscreteDistribution.from_dict({"atoms": [3, 1], "probs": [0.25, 0.75]})
    assert d.pmf(1) == 0.75 and d.pmf(7) == 0.0
    assert d.on([0, 1, 2, 3]).tolist() == [0.0, 0.75, 0.0, 0.25]
    with pytest.raises(InvalidInputError):
        d.on([1])
    with pytest.raises(InvalidInputError):
        DiscreteDistribution((0, 1), [0.5, 0.6])
    with pytest.raises(InvalidInputError):
        DiscreteDistribution((0, 0), [0.5, 0.5])
    assert DiscreteDistribution.point_mass(4).support == (4,)


def test_estimation_result_rejects_nonfinite_loglik():
    with pytest.raises(NumericalError):
        EstimationResult(SimplexVector([1.0]), -np.inf, 0, True)


def test_io_round_trip(tmp_path):
    M = np.array([[0.1, 1 / 3], [2.5e-17, 7.0]])
    write_matrix_csv(tmp_path / "m.csv", M)
    assert np.array_equal(read_matrix_csv(tmp_path / "m.csv"), M)
    (tmp_path / "d.json").write_text('{"components": [{"atoms": [0], "probs": [1.0]}, {"atoms": [1], "probs": [1.0]}]}')
    assert len(read_distribution_json(tmp_path / "d.json")) == 2
    assert parse_vector("0.2, 0.8").tolist() == [0.2, 0.8]
    with pytest.raises(InvalidInputError):
        parse_vector("a,b")
