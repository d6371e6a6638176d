"""Norms, mirror maps and Bregman divergences.

Vectors are plain 1-D ``float64`` numpy arrays. A :class:`MirrorGeometry`
bundles a mirror map with its gradient, the gradient of its convex
conjugate, and the primal/dual norm pair it is strongly convex against.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

Vector = np.ndarray


def as_vector(w, name: str = "w") -> Vector:
    """Convert ``w`` to a finite 1-D float array, raising on bad input."""
    arr = np.asarray(w, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{name} must be a nonempty 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


def _same_dim(w: Vector, v: Vector) -> None:
    if w.shape != v.shape:
        raise ValueError(f"dimension mismatch: {w.shape} vs {v.shape}")


@dataclass(frozen=True)
class MirrorGeometry:
    """A mirror map together with the norms it is 1-strongly convex for.

    ``bregman_closed_form`` is an optional numerically stable evaluation of
    the Bregman divergence; when absent the divergence is evaluated from
    ``psi`` and ``grad_psi`` directly.
    """

    name: str
    primal_norm: Callable[[Vector], float]
    dual_norm: Callable[[Vector], float]
    psi: Callable[[Vector], float]
    grad_psi: Callable[[Vector], Vector]
    grad_psi_star: Callable[[Vector], Vector]
    rademacher_c6: float
    bregman_closed_form: Optional[Callable[[Vector, Vector], float]] = None
    norm_orders: tuple[float, float] = (2.0, 2.0)

    @property
    def is_euclidean(self) -> bool:
        return self.name == "euclidean"

    def primal_norms(self, V: np.ndarray) -> np.ndarray:
        """Row-wise primal norms."""
        return np.linalg.norm(np.atleast_2d(V), ord=self.norm_orders[0], axis=1)

    def dual_norms(self, G: np.ndarray) -> np.ndarray:
        """Row-wise dual norms."""
        return np.linalg.norm(np.atleast_2d(G), ord=self.norm_orders[1], axis=1)


def _l2(w: Vector) -> float:
    return float(np.linalg.norm(w))


def _identity(w: Vector) -> Vector:
    return w


def euclidean() -> MirrorGeometry:
    """psi(w) = ||w||^2 / 2, under which mirror descent is gradient descent."""
    return MirrorGeometry(
        name="euclidean",
        primal_norm=_l2,
        dual_norm=_l2,
        psi=lambda w: 0.5 * float(w @ w),
        grad_psi=_identity,
        grad_psi_star=_identity,
        rademacher_c6=1.0,
        bregman_closed_form=lambda w, v: 0.5 * float((w - v) @ (w - v)),
    )


def _pnorm_link(w: Vector, p: float, scale: float) -> Vector:
    # gradient of scale * ||w||_p^2 / 2
    norm = np.linalg.norm(w, ord=p)
    if norm == 0.0:
        return np.zeros_like(w)
    return scale * norm ** (2.0 - p) * np.sign(w) * np.abs(w) ** (p - 1.0)


def pnorm(p: float, rademacher_c6: float) -> MirrorGeometry:
    """The p-norm mirror map psi(w) = ||w||_p^2 / (2(p-1)) for p in (1, 2].

    It is 1-strongly convex with respect to ``||.||_p``; the dual norm is the
    q-norm with ``1/p + 1/q = 1``. The Rademacher constant of the norm is
    not derived here and must be supplied.
    """
    if not 1.0 < p <= 2.0:
        raise ValueError(f"p must lie in (1, 2], got {p}")
    if rademacher_c6 < 0:
        raise ValueError("rademacher_c6 must be nonnegative")
    q = p / (p - 1.0)
    return MirrorGeometry(
        name=f"pnorm(p={p:g})",
        primal_norm=lambda w: float(np.linalg.norm(w, ord=p)),
        dual_norm=lambda g: float(np.linalg.norm(g, ord=q)),
        psi=lambda w: float(np.linalg.norm(w, ord=p)) ** 2 / (2.0 * (p - 1.0)),
        grad_psi=lambda w: _pnorm_link(w, p, 1.0 / (p - 1.0)),
        grad_psi_star=lambda theta: _pnorm_link(theta, q, p - 1.0),
        rademacher_c6=float(rademacher_c6),
        norm_orders=(p, q),
    )


def bregman_div(geom: MirrorGeometry, w, v) -> float:
    """D_psi(w, v) = psi(w) - psi(v) - <grad psi(v), w - v>."""
    w = as_vector(w, "w")
    v = as_vector(v, "v")
    _same_dim(w, v)
    if geom.bregman_closed_form is not None:
        value = geom.bregman_closed_form(w, v)
    else:
        value = geom.psi(w) - geom.psi(v) - float(geom.grad_psi(v) @ (w - v))
    # roundoff can push an exact zero slightly negative
    return max(value, 0.0)


def bregman_div_rows(geom: MirrorGeometry, w, V: np.ndarray) -> np.ndarray:
    """D_psi(w, v) for every row v of ``V``."""
    w = as_vector(w, "w")
    V = np.atleast_2d(np.asarray(V, dtype=float))
    if geom.is_euclidean:
        diff = V - w
        return np.maximum(0.5 * np.einsum("ij,ij->i", diff, diff), 0.0)
    return np.array([bregman_div(geom, w, v) for v in V])


def project_ball(center, radius: float, v) -> Vector:
    """Euclidean projection of ``v`` onto the closed ball around ``center``.

    Points already inside the ball are returned as the very same object so
    that coupled iterates stay bitwise identical.
    """
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    offset = v - center
    dist = float(np.linalg.norm(offset))
    if dist <= radius:
        return v
    factor = radius / dist
    out = center + offset * factor
    # rounding may land a hair outside; shrink until the result is feasible,
    # which also makes the projection exactly idempotent
    while float(np.linalg.norm(out - center)) > radius:
        factor = np.nextafter(factor, 0.0)
        out = center + offset * factor
    return out
