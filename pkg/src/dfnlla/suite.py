"""Small built-in catalog of bilevel test problems with known solutions."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .problem import BilevelProblem, BoxBounds


@dataclass(frozen=True)
class TestProblem:
    problem: BilevelProblem
    x0: np.ndarray
    x_star: np.ndarray
    F_star: float

    __test__ = False  # not a pytest class

    @property
    def name(self) -> str:
        return self.problem.name

    def F_bar(self, x) -> float:
        """Upper objective at the registered reaction."""
        x = np.asarray(x, dtype=float)
        y = self.problem.analytic_reaction(x)
        return float(self.problem.upper_objective(x, y))


def _box(lo, up):
    return BoxBounds(np.asarray(lo, dtype=float), np.asarray(up, dtype=float))


def _free(n):
    return BoxBounds.unbounded(n)


def toy1() -> TestProblem:
    p = BilevelProblem(
        name="toy1", n_x=1, n_y=1,
        upper_objective=lambda x, y: (x[0] - 1) ** 2 + (y[0] - 1) ** 2,
        lower_objective=lambda x, y: (y[0] - x[0]) ** 2,
        lower_gradient=lambda x, y: np.array([2 * (y[0] - x[0])]),
        analytic_reaction=lambda x: np.array([x[0]]),
        x_bounds=_free(1), y_bounds=_free(1),
    )
    return TestProblem(p, np.array([0.0]), np.array([1.0]), 0.0)


def toy2() -> TestProblem:
    base = toy1().problem
    p = BilevelProblem(
        name="toy2", n_x=1, n_y=1,
        upper_objective=base.upper_objective,
        upper_constraints=[lambda x, y: x[0] + y[0] - 1],
        lower_objective=base.lower_objective,
        lower_gradient=base.lower_gradient,
        analytic_reaction=base.analytic_reaction,
        x_bounds=_free(1), y_bounds=_free(1),
    )
    return TestProblem(p, np.array([0.0]), np.array([0.5]), 0.5)


def box_active_upper() -> TestProblem:
    # F_bar(x) = (x1 - 2)^2 + (x2 - 0.5)^2 + x1^2 / 4, pushed onto x1 = 1
    p = BilevelProblem(
        name="box_active_upper", n_x=2, n_y=1,
        upper_objective=lambda x, y: (x[0] - 2) ** 2 + (x[1] - 0.5) ** 2 + y[0] ** 2,
        lower_objective=lambda x, y: (y[0] - 0.5 * x[0]) ** 2,
        lower_gradient=lambda x, y: np.array([2 * (y[0] - 0.5 * x[0])]),
        analytic_reaction=lambda x: np.array([0.5 * x[0]]),
        x_bounds=_box([0, 0], [1, 1]), y_bounds=_free(1),
    )
    return TestProblem(p, np.array([0.0, 0.0]), np.array([1.0, 0.5]), 1.25)


def _nonconvex_F_bar(x):
    return (x - 2) ** 2 + (1 - np.sqrt(x)) ** 2


def nonconvex_lower() -> TestProblem:
    # R(x) = {-sqrt(x), +sqrt(x)} ∩ [-2, 1]; the optimistic choice is -sqrt(x)
    p = BilevelProblem(
        name="nonconvex_lower", n_x=1, n_y=1,
        upper_objective=lambda x, y: (x[0] - 2) ** 2 + (y[0] + 1) ** 2,
        lower_objective=lambda x, y: (y[0] ** 2 - x[0]) ** 2,
        lower_gradient=lambda x, y: np.array([4 * y[0] * (y[0] ** 2 - x[0])]),
        analytic_reaction=lambda x: np.array([-np.sqrt(x[0])]),
        x_bounds=_box([0.25], [4.0]), y_bounds=_box([-2.0], [1.0]),
    )
    # stationary point of F_bar: 2(x - 2) = (1 - sqrt x) / sqrt x, solved by bisection
    lo, hi = 1.0, 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if 2 * (mid - 2) - (1 - np.sqrt(mid)) / np.sqrt(mid) < 0:
            lo = mid
        else:
            hi = mid
    xs = 0.5 * (lo + hi)
    return TestProblem(p, np.array([3.0]), np.array([xs]), float(_nonconvex_F_bar(xs)))


def nonsmooth_upper() -> TestProblem:
    p = BilevelProblem(
        name="nonsmooth_upper", n_x=2, n_y=1,
        upper_objective=lambda x, y: abs(x[0] - 1) + abs(x[1] - 0.5) + (y[0] - 0.5) ** 2,
        lower_objective=lambda x, y: (y[0] - x[0] * x[1]) ** 2,
        lower_gradient=lambda x, y: np.array([2 * (y[0] - x[0] * x[1])]),
        analytic_reaction=lambda x: np.array([x[0] * x[1]]),
        x_bounds=_box([-2, -2], [2, 2]), y_bounds=_free(1),
    )
    return TestProblem(p, np.array([-1.0, 1.0]), np.array([1.0, 0.5]), 0.0)


QQ_Q = np.array([[10.0, 2.0], [2.0, 1.0]])
QQ_B = np.array([[1.0, 0.0], [1.0, 1.0]])
QQ_A = np.array([0.5, -0.5])
QQ_TARGET = np.array([0.2, 0.3])


def quad_quad() -> TestProblem:
    """Strongly convex quadratic follower, y(x) = Q^{-1} B x."""
    M = np.linalg.solve(QQ_Q, QQ_B)
    p = BilevelProblem(
        name="quad_quad", n_x=2, n_y=2,
        upper_objective=lambda x, y: float(np.sum((x - QQ_A) ** 2) + np.sum((y - QQ_TARGET) ** 2)),
        lower_objective=lambda x, y: float(0.5 * y @ QQ_Q @ y - y @ (QQ_B @ x)),
        lower_gradient=lambda x, y: QQ_Q @ y - QQ_B @ x,
        analytic_reaction=lambda x: M @ x,
        x_bounds=_box([-1, -1], [1, 1]), y_bounds=_free(2),
    )
    xs = np.linalg.solve(np.eye(2) + M.T @ M, QQ_A + M.T @ QQ_TARGET)
    Fs = float(np.sum((xs - QQ_A) ** 2) + np.sum((M @ xs - QQ_TARGET) ** 2))
    return TestProblem(p, np.array([-0.5, 0.5]), xs, Fs)


def lower_active_bounds() -> TestProblem:
    p = BilevelProblem(
        name="lower_active_bounds", n_x=1, n_y=1,
        upper_objective=lambda x, y: (x[0] - 1) ** 2 + (y[0] - 1) ** 2,
        lower_objective=lambda x, y: (y[0] - x[0]) ** 2,
        lower_gradient=lambda x, y: np.array([2 * (y[0] - x[0])]),
        analytic_reaction=lambda x: np.clip(x, 0.0, 0.5),
        x_bounds=_box([-2], [2]), y_bounds=_box([0.0], [0.5]),
    )
    return TestProblem(p, np.array([-1.0]), np.array([1.0]), 0.25)


LQ_C = np.array([[1.0, 0.5], [0.0, 1.0]])
LQ_CAP = 1.2


def _lq_reaction(x):
    y = LQ_C @ x
    t = max(0.0, (y.sum() - LQ_CAP) / 2)
    return y - t


def linear_quadratic_2x2() -> TestProblem:
    """Linear leader, quadratic follower with one coupling constraint y1 + y2 <= 1.2."""
    p = BilevelProblem(
        name="linear_quadratic_2x2", n_x=2, n_y=2,
        upper_objective=lambda x, y: x[0] - 2 * x[1] + y[0] + y[1],
        lower_objective=lambda x, y: float(0.5 * np.sum((y - LQ_C @ x) ** 2)),
        lower_gradient=lambda x, y: y - LQ_C @ x,
        lower_constraints=[lambda x, y: y[0] + y[1] - LQ_CAP],
        lower_constraint_jacobian=lambda x, y: np.array([[1.0, 1.0]]),
        analytic_reaction=_lq_reaction,
        x_bounds=_box([0, 0], [1, 1]), y_bounds=_free(2),
    )
    return TestProblem(p, np.array([1.0, 0.0]), np.array([0.0, 1.0]), -0.8)


def two_constraints() -> TestProblem:
    # y(x) = x, so the leader solves min (x1-1)^2 + (x2-1)^2 s.t. x1 + x2 <= 1, x1 <= 0.3
    p = BilevelProblem(
        name="two_constraints", n_x=2, n_y=2,
        upper_objective=lambda x, y: (y[0] - 1) ** 2 + (x[1] - 1) ** 2,
        upper_constraints=[lambda x, y: x[0] + y[1] - 1, lambda x, y: y[0] - 0.3],
        lower_objective=lambda x, y: float(np.sum((y - x) ** 2)),
        lower_gradient=lambda x, y: 2 * (y - x),
        analytic_reaction=lambda x: np.array(x, dtype=float),
        x_bounds=_box([-2, -2], [2, 2]), y_bounds=_free(2),
    )
    return TestProblem(p, np.array([0.0, 0.0]), np.array([0.3, 0.7]), 0.58)


_FACTORIES = (toy1, toy2, box_active_upper, nonconvex_lower, nonsmooth_upper, quad_quad,
              lower_active_bounds, linear_quadratic_2x2, two_constraints)


def builtin_suite() -> list[TestProblem]:
    return [make() for make in _FACTORIES]


def get_problem(name: str) -> TestProblem:
    for make in _FACTORIES:
        if make.__name__ == name:
            return make()
    raise KeyError(f"unknown problem {name!r}; known: {', '.join(problem_names())}")


def problem_names() -> list[str]:
    return [make.__name__ for make in _FACTORIES]
