"""Checkers for the inequalities that hold surely, risk estimation, trial
statistics and hexagonal binning.

The sure checkers compare both sides at every prefix with a relative
floating-point tolerance; any violation means a bug in the solver or a
corrupted trajectory. Statistical claims are judged with Wilson intervals.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np
from scipy import integrate, stats

from .data import ChainSource, DiscreteSource, HeavySource, SphereSource
from .geometry import MirrorGeometry, as_vector, bregman_div, bregman_div_rows
from .losses import Loss
from .solvers import FlowTrajectory, TdTrajectory, Trajectory

SURE_RTOL = 1e-9


@dataclass(frozen=True)
class LedgerEntry:
    step: int
    lhs: float
    rhs: float
    slack: float
    violated: bool

    @classmethod
    def make(cls, step: int, lhs: float, rhs: float, tolerance: float = 0.0) -> "LedgerEntry":
        slack = rhs - lhs
        return cls(int(step), float(lhs), float(rhs), float(slack), bool(slack < -tolerance))


def ledger_from_arrays(lhs: np.ndarray, rhs: np.ndarray, steps=None, tolerance=None) -> list[LedgerEntry]:
    lhs = np.asarray(lhs, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    steps = np.arange(1, lhs.size + 1) if steps is None else np.asarray(steps)
    tol = np.zeros_like(rhs) if tolerance is None else np.broadcast_to(tolerance, rhs.shape)
    return [LedgerEntry.make(s, a, b, e) for s, a, b, e in zip(steps, lhs, rhs, tol)]


@dataclass
class CheckReport:
    """Outcome of one sure-inequality check over every prefix."""

    check: str
    passed: bool
    n_checked: int
    first_violation: Optional[int] = None
    worst_excess: float = -math.inf
    details: list = field(default_factory=list)
    ledger: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "check": self.check,
            "passed": self.passed,
            "n_checked": self.n_checked,
            "first_violation": self.first_violation,
            "worst_excess": self.worst_excess,
            "details": self.details[:10],
        }

    def merge(self, other: "CheckReport") -> "CheckReport":
        firsts = [f for f in (self.first_violation, other.first_violation) if f is not None]
        return CheckReport(
            f"{self.check}+{other.check}",
            self.passed and other.passed,
            self.n_checked + other.n_checked,
            min(firsts) if firsts else None,
            max(self.worst_excess, other.worst_excess),
            self.details + other.details,
            self.ledger or other.ledger,
        )


def _compare(name, lhs, rhs, steps, rtol, keep_ledger=False, atol=0.0) -> CheckReport:
    tol = rtol * (1.0 + np.abs(rhs)) + atol
    excess = lhs - rhs - tol
    bad = np.flatnonzero(excess > 0)
    details = [
        {"check": name, "step": int(steps[k]), "lhs": float(lhs[k]), "rhs": float(rhs[k])} for k in bad[:10]
    ]
    ledger = ledger_from_arrays(lhs, rhs, steps, tol) if keep_ledger else []
    return CheckReport(
        name,
        bad.size == 0,
        int(lhs.size),
        int(steps[bad[0]]) if bad.size else None,
        float(np.max(excess + tol)) if excess.size else -math.inf,
        details,
        ledger,
    )


# ---------------------------------------------------------------------------
# mirror descent


def losses_at(loss: Loss, traj: Trajectory, w) -> np.ndarray:
    """f_{i+1}(w) for every step of a run: per-sample losses or the batch risk."""
    w = as_vector(w)
    n = len(traj)
    if traj.batch is not None:
        X, Y = traj.batch
        value, _ = loss.value_and_deriv(Y, X @ w)
        return np.full(n, float(np.mean(value)))
    if traj.X is None:
        raise ValueError("trajectory carries no samples")
    value, _ = loss.value_and_deriv(traj.Y[:n], traj.X[:n] @ w)
    return np.asarray(value, dtype=float)


def check_det_md(
    geom: MirrorGeometry,
    traj: Trajectory,
    losses_at_wref: Optional[Sequence[float]],
    w_ref,
    rtol: float = SURE_RTOL,
    keep_ledger: bool = False,
) -> CheckReport:
    """The deterministic mirror descent inequality at every prefix.

    Three forms are checked: the linearized one with inner products
    <g_{i+1}, w_ref - w_i>, the convex one with f_{i+1}(w_ref) - f_{i+1}(w_i)
    (skipped when ``losses_at_wref`` is None) and the per-step displacement
    ||w_{i+1} - w_i|| <= eta ||g_{i+1}||_*.
    """
    w_ref = as_vector(w_ref, "w_ref")
    W, G, eta = traj.iterates, traj.grads, traj.eta
    t = G.shape[0]
    if t == 0:
        return CheckReport("det_md", True, 0)
    D = bregman_div_rows(geom, w_ref, W)
    steps = np.arange(1, t + 1)
    gsq = geom.dual_norms(G) ** 2
    quad = np.cumsum(0.5 * eta * eta * gsq)
    lin = np.cumsum(eta * np.einsum("ij,ij->i", G, w_ref[None, :] - W[:-1]))
    report = _compare("det_md_linear", D[1:], D[0] + lin + quad, steps, rtol, keep_ledger)
    if losses_at_wref is not None:
        f_ref = np.asarray(losses_at_wref, dtype=float)[:t]
        convex = np.cumsum(eta * (f_ref - traj.inst_loss))
        report = report.merge(_compare("det_md_convex", D[1:], D[0] + convex + quad, steps, rtol))
    disp = geom.primal_norms(np.diff(W, axis=0))
    report = report.merge(_compare("det_md_step", disp, eta * np.sqrt(gsq), steps, rtol, atol=1e-12))
    report.check = "det_md"
    return report


# ---------------------------------------------------------------------------
# TD


def td_det_terms(traj: TdTrajectory, w_ref, iterates: Optional[np.ndarray] = None, eta=None):
    """Per-step bracket of the deterministic TD inequality, and ||w_i - w_ref||^2."""
    w_ref = as_vector(w_ref, "w_ref")
    W = traj.iterates if iterates is None else iterates
    eta = traj.eta if eta is None else eta
    t = W.shape[0] - 1
    X, Xn, R = traj.stream.X[:t], traj.stream.X_next[:t], traj.stream.R[:t]
    gamma = traj.gamma
    diff = W[:-1] - w_ref
    a = np.einsum("ij,ij->i", X, diff)
    b = gamma * np.einsum("ij,ij->i", Xn, diff)
    g_ref = X * ((X - gamma * Xn) @ w_ref - R)[:, None]
    terms = -a * a + b * b - 2.0 * np.einsum("ij,ij->i", g_ref, diff) + 4.0 * eta * np.einsum("ij,ij->i", g_ref, g_ref)
    dist = np.sum((W - w_ref) ** 2, axis=1)
    return terms, dist


def check_det_td(traj: TdTrajectory, w_ref, gamma=None, eta=None, rtol: float = SURE_RTOL, use_projected=False) -> CheckReport:
    """The deterministic TD inequality at every prefix, plus the step check
    ||w_{i+1} - w_i|| <= eta ||G_{i+1}(w_i)||.

    ``gamma`` and ``eta`` default to the trajectory's own values; passing
    them lets a caller audit a run against the parameters it claims.
    The inequality needs eta <= 1/2, ||x|| <= 1 and |r| <= 1; a claimed
    eta above 1/2 fails the check outright.
    """
    if use_projected and traj.v_iterates is None:
        raise ValueError("trajectory has no projected iterates")
    if use_projected and traj.ball is not None:
        center, radius = traj.ball
        if np.linalg.norm(as_vector(w_ref, "w_ref") - center) > radius:
            raise ValueError("w_ref lies outside the projection ball; the projected inequality does not apply")
    W = traj.v_iterates if use_projected else traj.iterates
    gamma = traj.gamma if gamma is None else gamma
    eta = traj.eta if eta is None else eta
    t = W.shape[0] - 1
    if eta > 0.5:
        # outside the inequality's domain nothing can be certified
        return CheckReport("det_td", False, 0, 0, math.inf, [{"check": "det_td_domain", "eta": float(eta)}])
    if t == 0:
        return CheckReport("det_td", True, 0)
    audited = dataclasses.replace(traj, gamma=gamma)
    terms, dist = td_det_terms(audited, w_ref, W, eta)
    steps = np.arange(1, t + 1)
    report = _compare("det_td", dist[1:], dist[0] + eta * np.cumsum(terms), steps, rtol)
    X, Xn, R = traj.stream.X[:t], traj.stream.X_next[:t], traj.stream.R[:t]
    G = X * (np.einsum("ij,ij->i", X - gamma * Xn, W[:-1]) - R)[:, None]
    disp = np.linalg.norm(np.diff(W, axis=0), axis=1)
    report = report.merge(_compare("det_td_step", disp, eta * np.linalg.norm(G, axis=1), steps, rtol, atol=1e-12))
    report.check = "det_td"
    return report


# ---------------------------------------------------------------------------
# mirror flow


def check_mf_identity(
    geom: MirrorGeometry,
    flow: FlowTrajectory,
    w_ref,
    f_ref: Optional[float] = None,
    order_const: float = 1.0,
    rtol: float = SURE_RTOL,
) -> CheckReport:
    """The Bregman identity along a computed flow, and its convex-case inequality.

    The integral of <w_ref - w_s, g_s> is taken by cumulative Simpson
    quadrature over the flow records; the identity residual must stay below
    ``order_const * h^4 * s + rtol * (1 + |terms|)`` at every record. The
    records must also satisfy w = grad psi*(q). With ``f_ref`` = f(w_ref)
    the inequality D(w_ref, w_s) + int f(w_u) du <= D(w_ref, w_0) + s f(w_ref)
    is checked as well.
    """
    w_ref = as_vector(w_ref, "w_ref")
    s, W, G = flow.times, flow.W, flow.grads
    if s.size < 2:
        return CheckReport("mf_identity", True, 0)
    # the integrals below assume records match the dual states
    link = np.array([np.linalg.norm(w - geom.grad_psi_star(q)) for w, q in zip(W, flow.Q)])
    steps = np.arange(s.size)
    report = _compare("mf_link", link, np.zeros_like(link), steps, 0.0, atol=1e-10)
    D = bregman_div_rows(geom, w_ref, W)
    integrand = np.einsum("ij,ij->i", w_ref[None, :] - W, G)
    integral = integrate.cumulative_simpson(integrand, x=s, initial=0.0)
    rhs = D[0] + integral
    scale = 1.0 + np.abs(D) + np.abs(D[0]) + np.abs(integral)
    tol = order_const * flow.h**4 * s + rtol * scale
    residual = np.abs(D - rhs)
    report = report.merge(_compare("mf_identity", residual[1:], tol[1:], steps[1:], 0.0))
    if f_ref is not None:
        risk_int = integrate.cumulative_simpson(flow.inst_risk, x=s, initial=0.0)
        lhs = D + risk_int
        report = report.merge(_compare("mf_convex", lhs[1:], D[0] + s[1:] * f_ref + tol[1:], steps[1:], rtol))
    report.check = "mf_identity"
    report.details.insert(0, {"max_identity_residual": float(np.max(residual))})
    return report


def mf_identity_residual(geom: MirrorGeometry, flow: FlowTrajectory, w_ref) -> float:
    """|D(w_ref, w_T) - D(w_ref, w_0) - int <w_ref - w_s, g_s> ds| at the final time."""
    w_ref = as_vector(w_ref, "w_ref")
    integrand = np.einsum("ij,ij->i", w_ref[None, :] - flow.W, flow.grads)
    integral = integrate.simpson(integrand, x=flow.times)
    return abs(bregman_div(geom, w_ref, flow.W[-1]) - bregman_div(geom, w_ref, flow.W[0]) - integral)


# ---------------------------------------------------------------------------
# fault injection


MD_FAULTS = ("perturb_iterate", "misreport_step", "drop_step")
TD_FAULTS = ("perturb_iterate", "inflate_eta", "drop_step")
MF_FAULTS = ("perturb_state", "time_warp", "stale_dual")


def _away(w, w_ref, size):
    d = w - w_ref
    n = np.linalg.norm(d)
    if n == 0:
        d = np.zeros_like(w)
        d[0] = 1.0
        n = 1.0
    return w + size * d / n


def corrupt_md(traj: Trajectory, mode: str, index: Optional[int] = None, w_ref=None, size: float = 0.1) -> Trajectory:
    """A copy of ``traj`` with one deliberate defect."""
    k = len(traj) // 2 if index is None else index
    it = traj.iterates.copy()
    if mode == "perturb_iterate":
        it[k] = _away(it[k], np.zeros(it.shape[1]) if w_ref is None else np.asarray(w_ref, float), size)
        return dataclasses.replace(traj, iterates=it)
    if mode == "misreport_step":
        return dataclasses.replace(traj, eta=traj.eta / 2.0)
    if mode == "drop_step":
        keep = np.delete(np.arange(len(traj)), k)
        return dataclasses.replace(
            traj,
            iterates=np.delete(it, k + 1, axis=0),
            grads=traj.grads[keep],
            inst_loss=traj.inst_loss[keep],
            grad_dual_norm=traj.grad_dual_norm[keep],
            X=None if traj.X is None else traj.X[keep],
            Y=None if traj.Y is None else traj.Y[keep],
        )
    raise ValueError(f"unknown fault mode {mode!r}")


def corrupt_td(traj: TdTrajectory, mode: str, index: Optional[int] = None, w_ref=None, size: float = 0.1) -> TdTrajectory:
    k = len(traj) // 2 if index is None else index
    it = traj.iterates.copy()
    if mode == "perturb_iterate":
        it[k] = _away(it[k], np.zeros(it.shape[1]) if w_ref is None else np.asarray(w_ref, float), size)
        return dataclasses.replace(traj, iterates=it)
    if mode == "inflate_eta":
        return dataclasses.replace(traj, eta=traj.eta * 10.0)
    if mode == "drop_step":
        return dataclasses.replace(traj, iterates=np.delete(it, k + 1, axis=0))
    raise ValueError(f"unknown fault mode {mode!r}")


def corrupt_flow(flow: FlowTrajectory, geom: MirrorGeometry, mode: str, index: Optional[int] = None, size: float = 0.1) -> FlowTrajectory:
    k = len(flow) // 2 if index is None else index
    if mode == "perturb_state":
        # shift the dual state and keep the record self-consistent
        Q, W = flow.Q.copy(), flow.W.copy()
        Q[k:] = Q[k:] + size
        W[k:] = np.array([geom.grad_psi_star(q) for q in Q[k:]])
        return dataclasses.replace(flow, Q=Q, W=W)
    if mode == "time_warp":
        return dataclasses.replace(flow, times=flow.times * 1.01)
    if mode == "stale_dual":
        Q = flow.Q.copy()
        Q[k:] = Q[k - 1]
        return dataclasses.replace(flow, Q=Q)
    raise ValueError(f"unknown fault mode {mode!r}")


# ---------------------------------------------------------------------------
# risk estimation


def estimate_risk(loss: Loss, source, w, mode: Union[str, tuple] = "exact", rng=None) -> tuple[float, float]:
    """Population risk as ``(value, stderr)``.

    ``mode`` is ``"exact"`` or ``("monte_carlo", n)``; exact mode needs a
    finite-support law, a chain under its stationary law or the sphere law.
    """
    w = as_vector(w)
    if mode == "exact":
        if isinstance(source, (DiscreteSource, ChainSource, SphereSource, HeavySource)):
            return source.exact_risk(loss, w), 0.0
        raise ValueError(f"no exact risk for source {type(source).__name__}")
    if isinstance(mode, tuple) and mode[0] == "monte_carlo":
        n = int(mode[1])
        if n < 2 or rng is None:
            raise ValueError("monte carlo mode needs n >= 2 and an rng")
        X, Y = source.draw(rng, n)
        value, _ = loss.value_and_deriv(Y, X @ w)
        return float(np.mean(value)), float(np.std(value, ddof=1) / math.sqrt(n))
    raise ValueError(f"unknown mode {mode!r}")


def running_average_risk(risks: np.ndarray) -> np.ndarray:
    """(1/i) sum_{j<i} R(w_j) for i = 1..len(risks)."""
    risks = np.asarray(risks, dtype=float)
    return np.cumsum(risks) / np.arange(1, risks.size + 1)


# ---------------------------------------------------------------------------
# trial statistics


@dataclass
class TrialSummary:
    trial: int
    any_violation: bool
    first_violation_step: Optional[int] = None
    any_decoupling: bool = False
    final_bregman: float = 0.0
    mean_risk: float = 0.0

    @classmethod
    def from_ledger(cls, trial: int, ledger: Sequence[LedgerEntry], **kw) -> "TrialSummary":
        bad = [e.step for e in ledger if e.violated]
        return cls(trial, bool(bad), bad[0] if bad else None, **kw)


@dataclass
class ViolationStats:
    n: int
    violations: int
    fraction: float
    wilson_low: float
    wilson_high: float
    budget: float
    passed: bool

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def wilson_interval(k: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    ci = stats.binomtest(k, n).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


def violation_stats(trials: Iterable[Union[TrialSummary, bool]], budget: float, field_name: str = "any_violation") -> ViolationStats:
    """Violation fraction with a 95% Wilson interval.

    A claim "fails with probability at most ``budget``" is rejected only when
    the whole interval sits above the budget.
    """
    flags = [bool(getattr(tr, field_name)) if isinstance(tr, TrialSummary) else bool(tr) for tr in trials]
    n = len(flags)
    if n == 0:
        raise ValueError("need at least one trial")
    k = sum(flags)
    lo, hi = wilson_interval(k, n)
    return ViolationStats(n, k, k / n, lo, hi, float(budget), lo <= budget)


# ---------------------------------------------------------------------------
# hexagonal binning


@dataclass
class HexGrid:
    centers: np.ndarray
    counts: np.ndarray
    radius: float

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def rows(self):
        for (cx, cy), c in zip(self.centers, self.counts):
            yield float(cx), float(cy), int(c)


def _hex_center(col, row, R):
    return 1.5 * R * col, math.sqrt(3.0) * R * (row + 0.5 * (col & 1))


def _nearest_centers(P: np.ndarray, R: float) -> tuple[np.ndarray, np.ndarray]:
    """Lattice (col, row) of the nearest flat-top center for each point; ties go
    to the lexicographically smaller center."""
    h = math.sqrt(3.0) * R
    base_col = np.floor(P[:, 0] / (1.5 * R)).astype(np.int64)
    best_d = np.full(P.shape[0], np.inf)
    best_c = np.zeros(P.shape[0], dtype=np.int64)
    best_r = np.zeros(P.shape[0], dtype=np.int64)
    best_xy = np.full((P.shape[0], 2), np.inf)
    for dc in (-1, 0, 1, 2):
        col = base_col + dc
        shift = 0.5 * (col & 1)
        base_row = np.floor(P[:, 1] / h - shift).astype(np.int64)
        for dr in (-1, 0, 1, 2):
            row = base_row + dr
            cx = 1.5 * R * col
            cy = h * (row + shift)
            d = (P[:, 0] - cx) ** 2 + (P[:, 1] - cy) ** 2
            eps = 1e-12 * (R * R)
            closer = d < best_d - eps
            tie = np.abs(d - best_d) <= eps
            smaller = (cx < best_xy[:, 0]) | ((cx == best_xy[:, 0]) & (cy < best_xy[:, 1]))
            take = closer | (tie & smaller)
            best_d = np.where(take, d, best_d)
            best_c = np.where(take, col, best_c)
            best_r = np.where(take, row, best_r)
            best_xy = np.where(take[:, None], np.column_stack([cx, cy]), best_xy)
    return best_c, best_r


def hexbin_aggregate(trajectories, bin_radius: float, bounds=None) -> HexGrid:
    """Count 2-D points in flat-top hexagons of circumradius ``bin_radius``.

    ``trajectories`` is any array-like reshapeable to points of dimension 2
    (for instance trials x steps x 2). ``bounds`` is ``(xmin, xmax, ymin,
    ymax)`` and defaults to the data range; points outside are dropped. Every
    center whose hexagon can meet the bounds is emitted, empty or not, in
    lexicographic (x, y) order.
    """
    if not bin_radius > 0:
        raise ValueError("bin_radius must be positive")
    arr = np.asarray(trajectories, dtype=float)
    if arr.shape[-1] != 2:
        raise ValueError(f"hexbin needs 2-D points, got dimension {arr.shape[-1]}")
    P = arr.reshape(-1, 2)
    if bounds is None:
        if P.shape[0] == 0:
            raise ValueError("no points and no bounds")
        bounds = (P[:, 0].min(), P[:, 0].max(), P[:, 1].min(), P[:, 1].max())
    xmin, xmax, ymin, ymax = map(float, bounds)
    inside = (P[:, 0] >= xmin) & (P[:, 0] <= xmax) & (P[:, 1] >= ymin) & (P[:, 1] <= ymax)
    P = P[inside]
    R = float(bin_radius)
    h = math.sqrt(3.0) * R
    cols = np.arange(math.floor((xmin - R) / (1.5 * R)), math.ceil((xmax + R) / (1.5 * R)) + 1)
    keys = {}
    centers = []
    for col in cols:
        shift = 0.5 * (col & 1)
        rows = np.arange(math.floor((ymin - R) / h - shift), math.ceil((ymax + R) / h - shift) + 1)
        for row in rows:
            cx, cy = _hex_center(int(col), int(row), R)
            if xmin - R <= cx <= xmax + R and ymin - h / 2 <= cy <= ymax + h / 2:
                keys[(int(col), int(row))] = len(centers)
                centers.append((cx, cy))
    counts = np.zeros(len(centers), dtype=np.int64)
    if P.shape[0]:
        c, r = _nearest_centers(P, R)
        for col, row in zip(c.tolist(), r.tolist()):
            key = (col, row)
            if key not in keys:
                keys[key] = len(centers)
                centers.append(_hex_center(col, row, R))
                counts = np.append(counts, 0)
            counts[keys[key]] += 1
    centers = np.array(centers, dtype=float).reshape(-1, 2)
    order = np.lexsort((centers[:, 1], centers[:, 0]))
    return HexGrid(centers[order], counts[order], R)


# ---------------------------------------------------------------------------
# CSV writers


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_hexbin_csv(path, grid: HexGrid) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["center_x", "center_y", "count"])
        for cx, cy, c in grid.rows():
            w.writerow([_fmt(cx), _fmt(cy), c])


def write_ledger_csv(path, rows: Iterable[tuple[int, str, LedgerEntry]]) -> None:
    """Rows of ``(trial, check, entry)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trial", "check", "step", "lhs", "rhs", "slack", "violated"])
        for trial, check, e in rows:
            w.writerow([trial, check, e.step, _fmt(e.lhs), _fmt(e.rhs), _fmt(e.slack), _fmt(e.violated)])


def trajectory_header(d: int, coupled: bool) -> list[str]:
    head = ["trial", "step"] + [f"coord{k}" for k in range(d)] + ["inst_loss", "grad_dual_norm"]
    return head + (["coupled", "projection_active"] if coupled else [])


def _col(values) -> list[str]:
    return list(map(repr, np.asarray(values, dtype=float).tolist()))


def trajectory_rows(trial: int, traj: Trajectory):
    """One row per iterate w_0..w_t; the final row has no loss or gradient."""
    t = len(traj)
    cols = [[str(trial)] * (t + 1), list(map(str, range(t + 1)))]
    cols += [_col(traj.iterates[:, k]) for k in range(traj.iterates.shape[1])]
    cols += [_col(traj.inst_loss) + [""], _col(traj.grad_dual_norm) + [""]]
    if traj.v_iterates is not None:
        cols.append(["1" if c else "0" for c in traj.coupled.tolist()])
        cols.append(["1" if c else "0" for c in traj.projection_active.tolist()] + [""])
    return zip(*cols)


def write_trajectories_csv(path, trajs: Sequence[Trajectory], header: Optional[list] = None, rows=None) -> None:
    """Trajectory dump; ``rows`` overrides the generated body for non-MD runs."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if rows is not None:
            w.writerow(header)
            w.writerows(rows)
            return
        if not trajs:
            w.writerow(header or trajectory_header(0, False))
            return
        coupled = trajs[0].v_iterates is not None
        w.writerow(trajectory_header(trajs[0].iterates.shape[1], coupled))
        for k, traj in enumerate(trajs):
            w.writerows(trajectory_rows(k, traj))
