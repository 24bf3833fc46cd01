import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from dfnlla.problem import (BilevelProblem, BoxBounds, EvalCounters, PoisonedEvaluation, eval_upper,
                            project_box, upper_violation)
from dfnlla.suite import get_problem

finite = st.floats(-1e6, 1e6, allow_nan=False)


@st.composite
def box_and_point(draw, max_dim=5):
    n = draw(st.integers(1, max_dim))
    a = draw(arrays(float, n, elements=finite))
    b = draw(arrays(float, n, elements=finite))
    lo, up = np.minimum(a, b), np.maximum(a, b)
    # some sides unbounded
    lo = np.where(draw(arrays(bool, n)), -np.inf, lo)
    up = np.where(draw(arrays(bool, n)), np.inf, up)
    x = draw(arrays(float, n, elements=finite))
    return BoxBounds(lo, up), x


def test_project_box_clamps_both_ends():
    b = BoxBounds(np.array([-2.0, -2.0]), np.array([2.0, 2.0]))
    np.testing.assert_array_equal(project_box([3.0, -3.0], b), [2.0, -2.0])


def test_project_box_interior_unchanged():
    np.testing.assert_array_equal(project_box([0.5], BoxBounds([0.0], [1.0])), [0.5])
    np.testing.assert_array_equal(project_box([1.25], BoxBounds([-2.0], [2.0])), [1.25])


def test_project_box_dimension_mismatch():
    with pytest.raises(ValueError):
        project_box([1.0, 2.0], BoxBounds([0.0], [1.0]))


@given(box_and_point())
def test_projection_idempotent_and_feasible(bp):
    b, x = bp
    p = project_box(x, b)
    np.testing.assert_array_equal(project_box(p, b), p)
    assert np.all(p >= b.lower) and np.all(p <= b.upper)


def test_box_bounds_validation():
    with pytest.raises(ValueError):
        BoxBounds([1.0], [0.0])
    with pytest.raises(ValueError):
        BoxBounds([], [])
    with pytest.raises(ValueError):
        BoxBounds([0.0, 0.0], [1.0])


def test_midpoint_uses_zero_on_unbounded_coordinates():
    b = BoxBounds([-2.0, -np.inf, 1.0], [2.0, 3.0, 3.0])
    np.testing.assert_array_equal(b.midpoint(), [0.0, 0.0, 2.0])


@pytest.mark.parametrize("h, expected", [((-1.0, -0.5), 0.0), ((0.5, 2.0), 2.0), ((), 0.0)])
def test_upper_violation_examples(h, expected):
    assert upper_violation(h) == expected


@given(arrays(float, st.integers(0, 6), elements=finite))
def test_upper_violation_zero_iff_feasible(h):
    assert (upper_violation(h) == 0.0) == bool(np.all(h <= 0))


def test_eval_upper_toy_examples():
    c = EvalCounters()
    F, h = eval_upper(get_problem("toy1").problem, [1.0], [1.0], c)
    assert F == 0.0 and h.size == 0
    F, h = eval_upper(get_problem("toy2").problem, [0.5], [0.5], c)
    assert F == 0.5 and list(h) == [0.0]
    assert c.upper_evals == 2


def test_eval_upper_poisoned():
    p = BilevelProblem("nan", 1, 1, lambda x, y: math.nan, lambda x, y: 0.0,
                       BoxBounds.unbounded(1), BoxBounds.unbounded(1),
                       upper_constraints=[lambda x, y: 0.0])
    with pytest.raises(PoisonedEvaluation) as e:
        eval_upper(p, [0.0], [0.0])
    assert e.value.what == "F"
    q = BilevelProblem("inf", 1, 1, lambda x, y: 0.0, lambda x, y: 0.0,
                       BoxBounds.unbounded(1), BoxBounds.unbounded(1),
                       upper_constraints=[lambda x, y: -1.0, lambda x, y: math.inf])
    with pytest.raises(PoisonedEvaluation) as e:
        eval_upper(q, [0.0], [0.0])
    assert e.value.index == 1


@given(st.integers(1, 20))
def test_eval_upper_counts_exactly_one(n):
    c = EvalCounters()
    p = get_problem("toy2").problem
    for i in range(n):
        eval_upper(p, [0.1 * i], [0.0], c)
        assert c.upper_evals == i + 1


def test_constraint_type_tags():
    assert get_problem("toy1").problem.constraint_type == "unconstrained"
    assert get_problem("quad_quad").problem.constraint_type == "bound"
    assert get_problem("toy2").problem.constraint_type == "general"
