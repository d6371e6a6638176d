"""Reference solutions the bounds compare against."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import optimize

from .data import DiscreteSource, FiniteChain, sphere_risk_exact
from .geometry import MirrorGeometry, as_vector, bregman_div
from .losses import Loss

PROVENANCES = ("regularized", "margin", "svt", "sphere_axis", "td_fixed_point", "user")


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, grad_norm: float):
        super().__init__(f"{message} (last gradient norm {grad_norm:.3e})")
        self.grad_norm = grad_norm


@dataclass
class Comparator:
    w_ref: np.ndarray
    excess_risk: float
    bregman_to_w0: float
    provenance: str
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")

    def to_dict(self) -> dict:
        return {
            "coords": [float(c) for c in self.w_ref],
            "excess_risk": float(self.excess_risk),
            "bregman_to_w0": float(self.bregman_to_w0),
            "provenance": self.provenance,
            **{k: v for k, v in self.extras.items() if isinstance(v, (int, float, str, bool, list))},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


INFINITE_T_REF = math.inf


def t_ref(comparator: Comparator) -> float:
    """Largest horizon t for which the comparator meets E <= D / sqrt(t)."""
    if comparator.excess_risk <= 1e-14:
        return INFINITE_T_REF
    return float(math.floor((comparator.bregman_to_w0 / comparator.excess_risk) ** 2))


def minimal_risk(source: DiscreteSource, loss: Loss, x0=None) -> tuple[float, np.ndarray]:
    """inf_w R(w) for a finite-support law, by quasi-Newton minimization.

    For laws whose infimum sits at infinity (separable data under the
    logistic loss) the returned value is a numerical approximation of it.
    """
    x0 = np.zeros(source.dim) if x0 is None else np.asarray(x0, dtype=float)
    res = optimize.minimize(
        lambda w: source.exact_risk_grad(loss, w),
        x0,
        jac=True,
        method="BFGS",
        options={"gtol": 1e-13, "maxiter": 10_000},
    )
    return float(res.fun), res.x


def solve_u_ref(
    geom: MirrorGeometry,
    loss: Loss,
    exact_risk: Callable[[np.ndarray], tuple[float, np.ndarray]],
    w0,
    lam: float,
    risk_floor: float = 0.0,
    tol: float = 1e-8,
    max_iter: int = 1_000_000,
) -> Comparator:
    """argmin_u R(u) + (lam/2) D_psi(u, w0) by gradient descent with Armijo backtracking.

    ``exact_risk`` returns the exact risk and its gradient; ``risk_floor``
    is inf R, used to report the excess risk.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    w0 = as_vector(w0, "w0")
    grad_psi_w0 = geom.grad_psi(w0)

    def objective(u):
        r, g = exact_risk(u)
        reg = 0.5 * lam * bregman_div(geom, u, w0)
        return r + reg, g + 0.5 * lam * (geom.grad_psi(u) - grad_psi_w0)

    u = w0.copy()
    f, g = objective(u)
    step = 1.0
    gnorm = geom.dual_norm(g)
    for _ in range(max_iter):
        gnorm = geom.dual_norm(g)
        if gnorm <= tol:
            break
        step = min(step * 2.0, 1e6)
        gg = float(g @ g)
        noise = 4.0 * np.finfo(float).eps * max(1.0, abs(f))
        while True:
            cand = u - step * g
            fc, gc = objective(cand)
            decrease = 0.5 * step * gg
            if decrease > noise:
                ok = fc <= f - decrease
            else:
                # the sufficient decrease is below roundoff in f; ask the gradient to shrink instead
                ok = fc <= f + noise and geom.dual_norm(gc) < gnorm
            if ok or step < 1e-18:
                break
            step *= 0.5
        if step < 1e-18:
            raise ConvergenceError("backtracking collapsed", gnorm)
        u, f, g = cand, fc, gc
    else:
        raise ConvergenceError(f"no convergence within {max_iter} iterations", gnorm)
    risk, _ = exact_risk(u)
    return Comparator(
        w_ref=u,
        excess_risk=max(risk - risk_floor, 0.0),
        bregman_to_w0=bregman_div(geom, u, w0),
        provenance="regularized",
        extras={"lambda": float(lam), "risk": float(risk), "grad_norm": float(gnorm)},
    )


def margin_comparator(u, gamma_t: float, t: int, w0=None) -> Comparator:
    """u ln(t) / gamma_t with its certified risk ceiling (2 + ln(t)/gamma_t) / t.

    ``excess_risk`` carries the ceiling, an upper bound on the true excess
    risk whenever the margin condition holds.
    """
    u = as_vector(u, "u")
    if abs(float(np.linalg.norm(u)) - 1.0) > 1e-10:
        raise ValueError("u must be a unit vector")
    if not 0 < gamma_t <= 1:
        raise ValueError("gamma_t must lie in (0, 1]")
    if t < 2:
        raise ValueError("t must be at least 2")
    w_ref = u * (math.log(t) / gamma_t)
    w0 = np.zeros_like(u) if w0 is None else as_vector(w0, "w0")
    ceiling = (2.0 + math.log(t) / gamma_t) / t
    return Comparator(
        w_ref=w_ref,
        excess_risk=ceiling,
        bregman_to_w0=0.5 * float((w_ref - w0) @ (w_ref - w0)),
        provenance="margin",
        extras={"risk_ceiling": ceiling, "gamma_t": float(gamma_t), "t": int(t)},
    )


def estimate_margin(u, X: np.ndarray, Y: np.ndarray, t: int) -> float:
    """Largest gamma with empirical P[u^T x y >= gamma] >= 1 - 1/t."""
    margins = np.sort((np.asarray(X) @ np.asarray(u)) * np.asarray(Y))
    # at most floor(n / t) samples may fall below gamma
    k = int(math.floor(margins.size / t))
    return float(margins[min(k, margins.size - 1)])


def svt_solution(second_moment, cross_moment, k: int) -> np.ndarray:
    """[E xx^T]_k^+ E[xy]: pseudo-inverse restricted to the top-k eigenvalues."""
    S = np.asarray(second_moment, dtype=float)
    b = np.asarray(cross_moment, dtype=float)
    d = S.shape[0]
    if S.shape != (d, d) or not np.allclose(S, S.T, atol=1e-12):
        raise ValueError("second moment must be a symmetric matrix")
    if not 1 <= k <= d:
        raise ValueError(f"k must lie in [1, {d}]")
    vals, vecs = np.linalg.eigh(S)
    if vals[0] < -1e-10 * max(1.0, vals[-1]):
        raise ValueError("second moment must be positive semidefinite")
    # descending eigenvalue, ties by ascending index
    order = np.lexsort((np.arange(d), -vals))[:k]
    keep = vals[order]
    cutoff = 1e-12 * max(vals[-1], 0.0)
    inv = np.where(keep > cutoff, 1.0 / np.where(keep > cutoff, keep, 1.0), 0.0)
    V = vecs[:, order]
    return V @ (inv * (V.T @ b))


def svt_comparator(second_moment, cross_moment, k: int, source=None, loss=None, w0=None) -> Comparator:
    w = svt_solution(second_moment, cross_moment, k)
    w0 = np.zeros_like(w) if w0 is None else as_vector(w0, "w0")
    extras = {"k": int(k)}
    excess = float("nan")
    if source is not None and loss is not None:
        risk = source.exact_risk(loss, w)
        full = svt_solution(second_moment, cross_moment, len(w))
        excess = max(risk - source.exact_risk(loss, full), 0.0)
        extras["risk"] = risk
    return Comparator(w, excess, 0.5 * float((w - w0) @ (w - w0)), "svt", extras)


def sphere_axis_comparator(t: int, d: int) -> Comparator:
    """e1 * t^(-1/3) with its exact logistic risk under the sphere-slice law.

    ``excess_risk`` is the risk itself, the infimum of the sphere risk being 0.
    """
    if t < 1 or d < 2:
        raise ValueError("need t >= 1 and d >= 2")
    r = t ** (-1.0 / 3.0)
    w = np.zeros(d)
    w[0] = r
    risk = sphere_risk_exact(r)
    return Comparator(w, risk, 0.5 * r * r, "sphere_axis", {"risk": risk, "norm": r, "norm_times_t_cuberoot": r * t ** (1 / 3)})


@dataclass
class TdFixedPoint:
    w_star: np.ndarray
    A: np.ndarray
    b: np.ndarray

    def residual(self, w) -> float:
        """||E_pi G(w)|| = ||A w - b||."""
        return float(np.linalg.norm(self.A @ np.asarray(w, dtype=float) - self.b))

    def comparator(self, w0=None) -> Comparator:
        w0 = np.zeros_like(self.w_star) if w0 is None else as_vector(w0, "w0")
        diff = self.w_star - w0
        return Comparator(self.w_star, 0.0, 0.5 * float(diff @ diff), "td_fixed_point", {"residual": self.residual(self.w_star)})


def td_system(chain: FiniteChain, gamma: float, pi: Optional[np.ndarray] = None) -> tuple[np.ndarray, np.ndarray]:
    """A = E_pi[x (x - gamma x')^T], b = E_pi[x r]."""
    pi = chain.stationary() if pi is None else np.asarray(pi, dtype=float)
    F = chain.features
    next_mean = chain.transition @ F
    A = (F * pi[:, None]).T @ (F - gamma * next_mean)
    b = (pi * chain.reward) @ F
    return A, b


def td_fixed_point(chain: FiniteChain, gamma: float, pi: Optional[np.ndarray] = None) -> TdFixedPoint:
    """Solve the expected TD fixed-point system, least-norm when singular."""
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    A, b = td_system(chain, gamma, pi)
    try:
        w = np.linalg.solve(A, b)
        if not np.all(np.isfinite(w)) or np.linalg.cond(A) > 1e12:
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        w, *_ = np.linalg.lstsq(A, b, rcond=None)
    out = TdFixedPoint(w, A, b)
    if out.residual(w) > 1e-8 * max(1.0, float(np.linalg.norm(b))):
        raise np.linalg.LinAlgError(f"TD system is singular with residual {out.residual(w):.3e}")
    return out
