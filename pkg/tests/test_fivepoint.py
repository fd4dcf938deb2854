import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import essential_distance, normalized_essential, random_problem
from relocgeo.errors import DegenerateSampleError
from relocgeo.fivepoint import MONOMIALS, epipolar_rows, five_point_solve


def test_monomial_table_is_complete_cubic_basis():
    assert len(set(MONOMIALS)) == 20
    assert all(sum(m) <= 3 for m in MONOMIALS)


def test_epipolar_rows_match_bilinear_form(rng):
    x1, x2 = rng.normal(size=(4, 2)), rng.normal(size=(4, 2))
    e = rng.normal(size=(3, 3))
    rows = epipolar_rows(x1, x2)
    h1, h2 = np.c_[x1, np.ones(4)], np.c_[x2, np.ones(4)]
    assert np.allclose(rows @ e.ravel(), np.einsum("ni,ij,nj->n", h2, e, h1))


@given(st.integers(0, 2**32 - 1))
def test_candidates_contain_truth_and_satisfy_constraints(seed):
    corrs, r, t, _ = random_problem(np.random.default_rng(seed))
    cands = five_point_solve(corrs.x1, corrs.x2)
    assert 1 <= len(cands) <= 10
    truth = normalized_essential(r, t)
    assert min(essential_distance(e, truth) for e in cands) < 1e-6
    h1 = np.c_[corrs.x1, np.ones(5)]
    h2 = np.c_[corrs.x2, np.ones(5)]
    for e in cands:
        assert np.linalg.norm(e) == pytest.approx(np.sqrt(2))
        assert abs(np.linalg.det(e)) < 1e-8
        trace_c = 2 * e @ e.T @ e - np.trace(e @ e.T) * e
        assert np.abs(trace_c).max() < 1e-8
        assert np.abs(np.einsum("ni,ij,nj->n", h2, e, h1)).max() < 1e-9


def test_repeated_point_is_degenerate(rng):
    corrs, *_ = random_problem(rng)
    x1 = corrs.x1.copy()
    x2 = corrs.x2.copy()
    x1[1], x2[1] = x1[0], x2[0]
    with pytest.raises(DegenerateSampleError):
        five_point_solve(x1, x2)
