"""Scalar auxiliary losses and executable checks of their property constants.

A loss is described by its scalar function ``tilde`` and a form tag. The
classification form evaluates ``tilde(sgn(y) * yhat)`` with ``sgn(0) = +1``;
the regression form evaluates ``tilde(y - yhat)``. Derivatives returned by
:func:`loss_eval` are taken with respect to the prediction ``yhat``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np

DEFAULT_Z_GRID = np.linspace(-30.0, 30.0, 2001)


def default_pair_grid() -> tuple[np.ndarray, np.ndarray]:
    """Product grid of (y, yhat) over [-10, 10]^2 with 201 points per axis."""
    axis = np.linspace(-10.0, 10.0, 201)
    yy, hh = np.meshgrid(axis, axis, indexing="ij")
    return yy.ravel(), hh.ravel()


class Form(str, Enum):
    CLASSIFICATION = "classification"
    REGRESSION = "regression"


def sgn(y):
    """Sign with sgn(0) = +1."""
    return np.where(np.asarray(y) >= 0, 1.0, -1.0)


@dataclass(frozen=True)
class Loss:
    name: str
    form: Form
    tilde: Callable[[np.ndarray], np.ndarray]
    tilde_deriv: Callable[[np.ndarray], np.ndarray]
    qb: tuple[float, float]
    self_bounding_rho: Optional[float] = None
    lipschitz_alpha: Optional[float] = None
    smooth_beta: Optional[float] = None
    meta: dict = field(default_factory=dict, compare=False)
    scalar: Optional[Callable[[float, float], tuple[float, float]]] = field(default=None, compare=False, repr=False)

    def scalar_value_and_deriv(self, y: float, yhat: float) -> tuple[float, float]:
        """Loss and d/dyhat at one point; a math-module fast path when available."""
        if self.scalar is not None:
            return self.scalar(y, yhat)
        value, deriv = self.value_and_deriv(y, yhat)
        return float(value), float(deriv)

    def value_and_deriv(self, y, yhat) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized loss value and d/dyhat; no finiteness checks."""
        y = np.asarray(y, dtype=float)
        yhat = np.asarray(yhat, dtype=float)
        if self.form is Form.CLASSIFICATION:
            s = sgn(y)
            z = s * yhat
            return self.tilde(z), s * self.tilde_deriv(z)
        z = y - yhat
        return self.tilde(z), -self.tilde_deriv(z)


def _logistic(z):
    z = np.asarray(z, dtype=float)
    return np.maximum(0.0, -z) + np.log1p(np.exp(-np.abs(z)))


def _logistic_deriv(z):
    # -1 / (1 + e^z), evaluated without overflow
    z = np.asarray(z, dtype=float)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, -e / (1.0 + e), -1.0 / (1.0 + e))


def _squared_scalar(y, yhat):
    z = y - yhat
    return 0.5 * z * z, -z


def _logistic_scalar(y, yhat):
    s = 1.0 if y >= 0 else -1.0
    z = s * yhat
    e = math.exp(-abs(z))
    value = max(0.0, -z) + math.log1p(e)
    deriv = -e / (1.0 + e) if z >= 0 else -1.0 / (1.0 + e)
    return value, s * deriv


def _absolute_scalar(y, yhat):
    z = y - yhat
    return abs(z), (-1.0 if z > 0 else 1.0 if z < 0 else 0.0)


def squared() -> Loss:
    """(y - yhat)^2 / 2."""
    return Loss(
        name="squared",
        form=Form.REGRESSION,
        tilde=lambda z: 0.5 * np.asarray(z, dtype=float) ** 2,
        tilde_deriv=lambda z: np.asarray(z, dtype=float),
        qb=(0.0, 1.0),
        self_bounding_rho=1.0,
        smooth_beta=1.0,
        scalar=_squared_scalar,
    )


def logistic() -> Loss:
    """ln(1 + exp(-sgn(y) yhat))."""
    return Loss(
        name="logistic",
        form=Form.CLASSIFICATION,
        tilde=_logistic,
        tilde_deriv=_logistic_deriv,
        qb=(1.0, 0.0),
        self_bounding_rho=0.5,
        lipschitz_alpha=1.0,
        smooth_beta=0.25,
        scalar=_logistic_scalar,
    )


def absolute() -> Loss:
    """|y - yhat|; the subgradient at the kink is 0."""
    return Loss(
        name="absolute",
        form=Form.REGRESSION,
        tilde=lambda z: np.abs(np.asarray(z, dtype=float)),
        tilde_deriv=lambda z: np.sign(np.asarray(z, dtype=float)),
        qb=(1.0, 0.0),
        lipschitz_alpha=1.0,
        meta={"kinks": (0.0,)},
        scalar=_absolute_scalar,
    )


LOSSES = {"squared": squared, "logistic": logistic, "absolute": absolute}


def get_loss(name: str) -> Loss:
    try:
        return LOSSES[name]()
    except KeyError:
        raise ValueError(f"unknown loss {name!r}; choose from {sorted(LOSSES)}") from None


def loss_eval(loss: Loss, y: float, yhat: float) -> tuple[float, float]:
    """Return ``(value, d value / d yhat)`` at a single point."""
    if not (math.isfinite(y) and math.isfinite(yhat)):
        raise ValueError("loss_eval needs finite inputs")
    value, deriv = loss.value_and_deriv(y, yhat)
    return float(value), float(deriv) + 0.0


@dataclass
class PropertyReport:
    """Outcome of a property check: the worst violation over the grid."""

    prop: str
    loss: str
    passed: bool
    max_violation: float
    argmax: tuple
    tolerance: float = 1e-12

    def to_dict(self) -> dict:
        return {
            "property": self.prop,
            "loss": self.loss,
            "passed": self.passed,
            "max_violation": self.max_violation,
            "argmax": list(self.argmax),
            "tolerance": self.tolerance,
        }


def _report(prop, loss, violation, points, tol=1e-12) -> PropertyReport:
    k = int(np.argmax(violation))
    worst = float(violation[k])
    return PropertyReport(prop, loss.name, worst <= tol, worst, tuple(float(p[k]) for p in points), tol)


def check_quadratic_bounded(
    loss: Loss,
    grid: Optional[tuple[Sequence[float], Sequence[float]]] = None,
    qb: Optional[tuple[float, float]] = None,
) -> PropertyReport:
    """Check |l'(y, yhat)| <= C1 + C2 (|y| + |yhat|) over a (y, yhat) grid.

    ``grid`` is a pair of equal-length arrays of y and yhat values; the
    constants default to the ones the loss declares.
    """
    ys, hs = default_pair_grid() if grid is None else (np.asarray(grid[0], float), np.asarray(grid[1], float))
    if ys.size == 0:
        raise ValueError("grid must be nonempty")
    c1, c2 = loss.qb if qb is None else qb
    _, deriv = loss.value_and_deriv(ys, hs)
    violation = np.abs(deriv) - (c1 + c2 * (np.abs(ys) + np.abs(hs)))
    return _report(f"quadratically-bounded({c1:g},{c2:g})", loss, violation, (ys, hs))


def check_self_bounding(loss: Loss, rho: float, z_grid=None) -> PropertyReport:
    """Check tilde'(z)^2 <= 2 rho tilde(z) over a grid of z."""
    z = DEFAULT_Z_GRID if z_grid is None else np.asarray(z_grid, dtype=float)
    if z.size == 0:
        raise ValueError("z_grid must be nonempty")
    d = loss.tilde_deriv(z)
    violation = d * d - 2.0 * rho * loss.tilde(z)
    return _report(f"self-bounding({rho:g})", loss, violation, (z,))


def check_lipschitz(loss: Loss, alpha: float, z_grid=None) -> PropertyReport:
    """Check |tilde'(z)| <= alpha over a grid of z."""
    z = DEFAULT_Z_GRID if z_grid is None else np.asarray(z_grid, dtype=float)
    violation = np.abs(loss.tilde_deriv(z)) - alpha
    return _report(f"lipschitz({alpha:g})", loss, violation, (z,))


def check_smooth(loss: Loss, beta: float, z_grid=None, chunk: int = 256) -> PropertyReport:
    """Check |tilde'(z) - tilde'(z')| <= beta |z - z'| on all grid pairs."""
    z = DEFAULT_Z_GRID if z_grid is None else np.asarray(z_grid, dtype=float)
    d = loss.tilde_deriv(z)
    worst, where = -np.inf, (0.0, 0.0)
    for start in range(0, z.size, chunk):
        zi = z[start : start + chunk, None]
        di = d[start : start + chunk, None]
        violation = np.abs(di - d[None, :]) - beta * np.abs(zi - z[None, :])
        k = np.unravel_index(int(np.argmax(violation)), violation.shape)
        if violation[k] > worst:
            worst = float(violation[k])
            where = (float(zi[k[0], 0]), float(z[k[1]]))
    return PropertyReport(f"smooth({beta:g})", loss.name, worst <= 1e-12, worst, where)


def check_convex(loss: Loss, z_grid=None, chunk: int = 256) -> PropertyReport:
    """Midpoint convexity of tilde on all grid pairs."""
    z = DEFAULT_Z_GRID if z_grid is None else np.asarray(z_grid, dtype=float)
    f = loss.tilde(z)
    worst, where = -np.inf, (0.0, 0.0)
    for start in range(0, z.size, chunk):
        zi = z[start : start + chunk, None]
        fi = f[start : start + chunk, None]
        violation = loss.tilde(0.5 * (zi + z[None, :])) - 0.5 * (fi + f[None, :])
        k = np.unravel_index(int(np.argmax(violation)), violation.shape)
        if violation[k] > worst:
            worst = float(violation[k])
            where = (float(zi[k[0], 0]), float(z[k[1]]))
    return PropertyReport("convex", loss.name, worst <= 1e-12, worst, where)


def qb_from_lip_or_smooth(
    alpha: Optional[float] = None,
    beta: Optional[float] = None,
    deriv_at_zero: float = 0.0,
) -> tuple[float, float]:
    """Quadratic-boundedness constants implied by Lipschitzness or smoothness.

    An alpha-Lipschitz loss is (alpha, 0)-bounded and a beta-smooth one is
    (|tilde'(0)|, beta)-bounded. With both, the pair with the smaller sum
    wins and ties go to the Lipschitz pair.
    """
    if alpha is None and beta is None:
        raise ValueError("supply alpha, beta or both")
    lip = None if alpha is None else (float(alpha), 0.0)
    smooth = None if beta is None else (abs(float(deriv_at_zero)), float(beta))
    if smooth is None:
        return lip
    if lip is None:
        return smooth
    return lip if sum(lip) <= sum(smooth) else smooth


def loss_property_suite(z_grid=None, pair_grid=None) -> list[PropertyReport]:
    """Every constant the shipped losses declare, checked on the default grids."""
    reports = []
    for make in (squared, logistic, absolute):
        loss = make()
        reports.append(check_quadratic_bounded(loss, pair_grid))
        reports.append(check_convex(loss, z_grid))
        if loss.self_bounding_rho is not None:
            reports.append(check_self_bounding(loss, loss.self_bounding_rho, z_grid))
        if loss.lipschitz_alpha is not None:
            reports.append(check_lipschitz(loss, loss.lipschitz_alpha, z_grid))
        if loss.smooth_beta is not None:
            reports.append(check_smooth(loss, loss.smooth_beta, z_grid))
    return reports
