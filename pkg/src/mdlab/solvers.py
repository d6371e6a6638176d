"""Mirror descent (stochastic, batch, ball-coupled), TD(0) and mirror flow.

Runs return trajectory objects holding whole arrays (iterates, gradients,
losses) so checkers can work vectorized; indexing a trajectory yields the
per-step record views.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .data import FiniteChain, TdStream, td_stream
from .geometry import MirrorGeometry, as_vector, project_ball
from .losses import Loss

log = logging.getLogger(__name__)

Ball = Optional[tuple[np.ndarray, float]]


class UnsupportedGeometryError(ValueError):
    """Ball-constrained updates are implemented for the Euclidean geometry only."""


class FlowDivergenceError(FloatingPointError):
    def __init__(self, time: float):
        super().__init__(f"mirror flow state became non-finite at time {time:g}")
        self.time = time


@dataclass(frozen=True)
class StepRecord:
    index: int
    w: np.ndarray
    grad: np.ndarray
    inst_loss: float
    grad_dual_norm: float
    step_size: float


@dataclass(frozen=True)
class CoupledRecord:
    step: StepRecord
    v: np.ndarray
    coupled: bool
    projection_active: bool


@dataclass(frozen=True)
class FlowRecord:
    time: float
    q: np.ndarray
    w: np.ndarray
    inst_risk: float


@dataclass
class Trajectory:
    """A mirror descent run.

    ``iterates[i]`` is w_i for i = 0..t; ``grads[i]`` is the subgradient
    g_{i+1} taken at w_i and ``inst_loss[i]`` is f_{i+1}(w_i). Stochastic runs
    keep the samples they consumed in ``X``/``Y``; batch runs keep the
    dataset in ``batch``.
    """

    iterates: np.ndarray
    grads: np.ndarray
    inst_loss: np.ndarray
    grad_dual_norm: np.ndarray
    eta: float
    X: Optional[np.ndarray] = None
    Y: Optional[np.ndarray] = None
    batch: Optional[tuple[np.ndarray, np.ndarray]] = None
    # coupled runs only
    v_iterates: Optional[np.ndarray] = None
    coupled: Optional[np.ndarray] = None
    projection_active: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return self.grads.shape[0]

    def __getitem__(self, i: int):
        if not -len(self) <= i < len(self):
            raise IndexError(i)
        i %= len(self)
        step = StepRecord(
            i, self.iterates[i], self.grads[i], float(self.inst_loss[i]), float(self.grad_dual_norm[i]), self.eta
        )
        if self.v_iterates is None:
            return step
        return CoupledRecord(step, self.v_iterates[i], bool(self.coupled[i]), bool(self.projection_active[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def final(self) -> np.ndarray:
        return self.iterates[-1]

    @property
    def is_coupled_run(self) -> bool:
        return self.v_iterates is not None

    def first_divergence(self) -> Optional[int]:
        """First index i where v_i differs from w_i, if any."""
        if self.coupled is None:
            return None
        bad = np.flatnonzero(~self.coupled)
        return int(bad[0]) if bad.size else None


def _sample_grad(loss: Loss, x: np.ndarray, y: float, w: np.ndarray) -> tuple[float, np.ndarray]:
    value, deriv = loss.value_and_deriv(y, float(x @ w))
    return float(value), float(deriv) * x


def _batch_grad(loss: Loss, X: np.ndarray, Y: np.ndarray, w: np.ndarray) -> tuple[float, np.ndarray]:
    value, deriv = loss.value_and_deriv(Y, X @ w)
    n = Y.size
    return float(np.sum(value) / n), (deriv @ X) / n


def _mirror_update(geom: MirrorGeometry, w: np.ndarray, g: np.ndarray, eta: float, ball: Ball) -> np.ndarray:
    if ball is None:
        if geom.is_euclidean:
            return w - eta * g
        return geom.grad_psi_star(geom.grad_psi(w) - eta * g)
    if not geom.is_euclidean:
        raise UnsupportedGeometryError("ball constraints need the Euclidean geometry")
    center, radius = ball
    return project_ball(center, radius, w - eta * g)


def md_step(
    geom: MirrorGeometry,
    loss: Loss,
    sample,
    w,
    eta: float,
    ball: Ball = None,
) -> np.ndarray:
    """One mirror descent step on the loss of a single labeled sample."""
    if not eta > 0:
        raise ValueError("eta must be positive")
    w = as_vector(w)
    _, g = _sample_grad(loss, np.asarray(sample.x, dtype=float), float(sample.y), w)
    return _mirror_update(geom, w, g, eta, ball)


def _run(geom, grad_fn, w0, eta, t, ball=None) -> Trajectory:
    """Generic loop for full-gradient objectives."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    w = as_vector(w0, "w0").copy()
    iterates = np.empty((t + 1, w.size))
    grads = np.empty((t, w.size))
    losses = np.empty(t)
    iterates[0] = w
    for i in range(t):
        losses[i], grads[i] = grad_fn(w)
        w = _mirror_update(geom, w, grads[i], eta, ball)
        iterates[i + 1] = w
    if not np.all(np.isfinite(iterates)):
        raise FloatingPointError("mirror descent iterates became non-finite")
    return Trajectory(iterates, grads, losses, geom.dual_norms(grads) if t else np.empty(0), float(eta))


def _run_samples(geom, loss, X, Y, w0, eta, t, ball=None, coupled_ball=None) -> Trajectory:
    """One pass over the samples, one step per sample.

    With ``coupled_ball`` a projected twin v_i is advanced on the same
    samples; while v_i and w_i agree bitwise they share a single candidate
    update, so the coupling event is exact.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    w = as_vector(w0, "w0").copy()
    d = w.size
    iterates = np.empty((t + 1, d))
    iterates[0] = w
    derivs = np.empty(t)
    values = np.empty(t)
    f = loss.scalar or loss.scalar_value_and_deriv
    labels = Y.tolist()
    fast = ball is None and geom.is_euclidean
    coupled_run = coupled_ball is not None
    if fast and d == 1 and not coupled_run:
        # scalar problems: plain floats give the same IEEE results much faster
        wf = float(w[0])
        xs = X[:t, 0].tolist()
        out, vals, ders = [wf], [], []
        for y, x in zip(labels, xs):
            value, deriv = f(y, x * wf)
            wf = wf - eta * (deriv * x)
            out.append(wf)
            vals.append(value)
            ders.append(deriv)
        iterates[:, 0] = out
        values[:], derivs[:] = vals, ders
        if not np.all(np.isfinite(iterates)):
            raise FloatingPointError("mirror descent iterates became non-finite")
        grads = derivs[:, None] * X[:t]
        return Trajectory(iterates, grads, values, geom.dual_norms(grads) if t else np.empty(0), float(eta))
    if coupled_run:
        center, radius = coupled_ball
        v = w
        v_iterates = np.empty((t + 1, d))
        v_iterates[0] = v
        coupled = np.empty(t + 1, dtype=bool)
        coupled[0] = True
        active = np.empty(t, dtype=bool)
        same = True
    for i in range(t):
        x = X[i]
        values[i], derivs[i] = f(labels[i], float(x @ w))
        g = derivs[i] * x
        cand = w - eta * g if fast else _mirror_update(geom, w, g, eta, ball)
        if coupled_run:
            if not same:
                _, dv = f(labels[i], float(x @ v))
                v_cand = v - eta * (dv * x)
            else:
                v_cand = cand
            v_next = project_ball(center, radius, v_cand)
            active[i] = v_next is not v_cand
            same = v_next is cand or np.array_equal(v_next, cand)
            v = v_next
            v_iterates[i + 1] = v
            coupled[i + 1] = same
        w = cand
        iterates[i + 1] = w
    if not np.all(np.isfinite(iterates)):
        raise FloatingPointError("mirror descent iterates became non-finite")
    grads = derivs[:, None] * X[:t]
    traj = Trajectory(iterates, grads, values, geom.dual_norms(grads) if t else np.empty(0), float(eta))
    if coupled_run:
        traj.v_iterates, traj.coupled, traj.projection_active = v_iterates, coupled, active
    return traj


def run_stochastic_md(
    geom: MirrorGeometry,
    loss: Loss,
    source,
    w0,
    eta: float,
    t: int,
    rng: Optional[np.random.Generator] = None,
    samples: Optional[tuple[np.ndarray, np.ndarray]] = None,
    ball: Ball = None,
) -> Trajectory:
    """Stochastic mirror descent with a fresh sample per step.

    Samples come from ``source.draw(rng, t)`` unless ``samples`` is given.
    """
    if samples is None:
        if rng is None:
            raise ValueError("need an rng or explicit samples")
        X, Y = source.draw(rng, t) if t > 0 else (np.empty((0, len(w0))), np.empty(0))
    else:
        X, Y = samples
        if len(Y) < t:
            raise ValueError("not enough samples for t steps")
    X = np.asarray(X, dtype=float)
    X = (X[:, None] if X.ndim == 1 else X)[:t]
    Y = np.asarray(Y, dtype=float)[:t]
    traj = _run_samples(geom, loss, X, Y, w0, eta, t, ball=ball)
    traj.X, traj.Y = X, Y
    return traj


def run_coupled(
    geom: MirrorGeometry,
    loss: Loss,
    source,
    w0,
    w_ref,
    B_w: float,
    eta: float,
    t: int,
    rng: Optional[np.random.Generator] = None,
    samples: Optional[tuple[np.ndarray, np.ndarray]] = None,
) -> Trajectory:
    """Unconstrained iterates w_i coupled with iterates v_i projected onto
    the ball of radius ``B_w`` around ``w_ref``, both driven by one sample
    stream.
    """
    if not geom.is_euclidean:
        raise UnsupportedGeometryError("coupled runs need the Euclidean geometry")
    if not B_w > 0:
        raise ValueError("B_w must be positive")
    if samples is None:
        X, Y = source.draw(rng, t)
    else:
        X, Y = samples
    X = np.asarray(X, dtype=float)[:t]
    Y = np.asarray(Y, dtype=float)[:t]
    ball = (as_vector(w_ref, "w_ref"), float(B_w))
    traj = _run_samples(geom, loss, X, Y, w0, eta, t, coupled_ball=ball)
    traj.X, traj.Y = X, Y
    return traj


def run_batch_md(
    geom: MirrorGeometry,
    loss: Loss,
    dataset: tuple[np.ndarray, np.ndarray],
    w0,
    eta: float,
    t: int,
    enforce_t_le_n: bool = False,
) -> Trajectory:
    """Mirror descent on the empirical risk of a fixed dataset."""
    X, Y = (np.atleast_2d(np.asarray(dataset[0], dtype=float)), np.asarray(dataset[1], dtype=float).reshape(-1))
    if Y.size == 0:
        raise ValueError("dataset is empty")
    if t > Y.size:
        msg = f"batch run with t={t} > n={Y.size} leaves the regime the batch bound covers"
        if enforce_t_le_n:
            raise ValueError(msg)
        warnings.warn(msg, stacklevel=2)
    traj = _run(geom, lambda w: _batch_grad(loss, X, Y, w), w0, eta, t)
    traj.batch = (X, Y)
    return traj


# ---------------------------------------------------------------------------
# TD(0)


def td_update_direction(w: np.ndarray, x: np.ndarray, x_next: np.ndarray, r: float, gamma: float) -> np.ndarray:
    """G(w) = x (<x - gamma x', w> - r)."""
    return x * (float((x - gamma * x_next) @ w) - r)


def td_step(w, triple, gamma: float, eta: float) -> np.ndarray:
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    w = as_vector(w)
    return w - eta * td_update_direction(w, np.asarray(triple.x, float), np.asarray(triple.x_next, float), triple.r, gamma)


@dataclass
class TdTrajectory:
    """A TD run: ``iterates[i]`` is w_i and ``stream`` holds the triples used."""

    iterates: np.ndarray
    stream: TdStream
    gamma: float
    eta: float
    v_iterates: Optional[np.ndarray] = None
    coupled: Optional[np.ndarray] = None
    projection_active: Optional[np.ndarray] = None
    ball: Ball = None

    def __len__(self) -> int:
        return self.iterates.shape[0] - 1

    @property
    def final(self) -> np.ndarray:
        return self.iterates[-1]

    def first_divergence(self) -> Optional[int]:
        if self.coupled is None:
            return None
        bad = np.flatnonzero(~self.coupled)
        return int(bad[0]) if bad.size else None


def run_td(
    chain: Optional[FiniteChain],
    w0,
    gamma: float,
    eta: float,
    t: int,
    ball: Ball = None,
    rng: Optional[np.random.Generator] = None,
    stream: Optional[TdStream] = None,
    allow_gamma_zero: bool = False,
) -> TdTrajectory:
    """Unconstrained TD(0), optionally with a ball-projected twin on the same triples.

    ``allow_gamma_zero`` is a diagnostic switch: with gamma = 0 TD is
    stochastic gradient descent on the squared loss of (x, r).
    """
    if not (0 < gamma < 1 or (allow_gamma_zero and gamma == 0)):
        raise ValueError("gamma must lie in (0, 1)")
    if stream is None:
        stream = td_stream(rng, chain, t)
    X, Xn, R = stream.X, stream.X_next, stream.R
    w = as_vector(w0, "w0").copy()
    d = w.size
    iterates = np.empty((t + 1, d))
    iterates[0] = w
    if ball is not None:
        center, radius = as_vector(ball[0], "center"), float(ball[1])
        v = w
        v_iterates = np.empty((t + 1, d))
        v_iterates[0] = v
        coupled = np.empty(t + 1, dtype=bool)
        coupled[0] = True
        active = np.empty(t, dtype=bool)
    for i in range(t):
        x, xn, r = X[i], Xn[i], float(R[i])
        step = w - eta * td_update_direction(w, x, xn, r, gamma)
        if ball is not None:
            candidate = step if np.array_equal(v, w) else v - eta * td_update_direction(v, x, xn, r, gamma)
            v_next = project_ball(center, radius, candidate)
            active[i] = v_next is not candidate
        w = step
        iterates[i + 1] = w
        if ball is not None:
            v = v_next
            v_iterates[i + 1] = v
            coupled[i + 1] = np.array_equal(v, w)
    traj = TdTrajectory(iterates, stream, float(gamma), float(eta))
    if ball is not None:
        traj.v_iterates, traj.coupled, traj.projection_active = v_iterates, coupled, active
        traj.ball = (center, radius)
    return traj


# ---------------------------------------------------------------------------
# mirror flow


@dataclass
class FlowTrajectory:
    times: np.ndarray
    Q: np.ndarray
    W: np.ndarray
    inst_risk: np.ndarray
    grads: np.ndarray
    h: float

    def __len__(self) -> int:
        return self.times.size

    def __getitem__(self, i: int) -> FlowRecord:
        return FlowRecord(float(self.times[i]), self.Q[i], self.W[i], float(self.inst_risk[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))


def integrate_mirror_flow(
    geom: MirrorGeometry,
    loss: Loss,
    dataset: tuple[np.ndarray, np.ndarray],
    w0,
    t_final: float,
    h: Optional[float] = None,
    objective: Optional[Callable[[np.ndarray], tuple[float, np.ndarray]]] = None,
) -> FlowTrajectory:
    """Classical fixed-step RK4 on the dual dynamics dq/ds = -grad f(grad psi*(q)).

    ``f`` is the empirical risk of ``dataset`` unless an ``objective``
    returning ``(value, gradient)`` is supplied. The final step is shortened
    to land exactly on ``t_final``.
    """
    if not t_final > 0:
        raise ValueError("t_final must be positive")
    h = 1e-3 * t_final if h is None else float(h)
    if not h > 0:
        raise ValueError("h must be positive")
    if objective is None:
        X = np.atleast_2d(np.asarray(dataset[0], dtype=float))
        Y = np.asarray(dataset[1], dtype=float).reshape(-1)

        def objective(w):
            return _batch_grad(loss, X, Y, w)

    w0 = as_vector(w0, "w0")
    q = np.asarray(geom.grad_psi(w0), dtype=float).copy()
    n_steps = int(np.ceil(t_final / h - 1e-9))
    times = np.empty(n_steps + 1)
    Q = np.empty((n_steps + 1, q.size))
    W = np.empty_like(Q)
    G = np.empty_like(Q)
    risk = np.empty(n_steps + 1)

    def field(qq):
        return -objective(geom.grad_psi_star(qq))[1]

    s = 0.0
    for k in range(n_steps + 1):
        w = geom.grad_psi_star(q)
        value, g = objective(w)
        times[k], Q[k], W[k], G[k], risk[k] = s, q, w, g, value
        if not (np.all(np.isfinite(q)) and np.isfinite(value)):
            raise FlowDivergenceError(s)
        if k == n_steps:
            break
        step = min(h, t_final - s)
        k1 = -g
        k2 = field(q + 0.5 * step * k1)
        k3 = field(q + 0.5 * step * k2)
        k4 = field(q + step * k3)
        q = q + (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        s = t_final if k + 1 == n_steps else (k + 1) * h
    return FlowTrajectory(times, Q, W, risk, G, h)
