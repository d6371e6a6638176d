"""Numeric evaluators for the high-probability risk bounds.

Every evaluator returns a :class:`BoundReport` with the step-size ceiling,
the radius ``B_w``, a callable right-hand side and the union-bounded failure
probability. Constants are evaluated literally, however loose.
Comparator hypotheses that fail produce a :class:`HypothesisWarning` carrying
the slack instead of an error, so regimes outside the theorems stay reachable.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

from .data import HeavyTailSpec


class HypothesisWarning(UserWarning):
    def __init__(self, message: str, slack: float):
        super().__init__(f"{message} (slack {slack:.3e})")
        self.slack = slack


def _hypothesis(holds_if_nonneg: float, message: str) -> bool:
    if holds_if_nonneg < 0:
        warnings.warn(HypothesisWarning(message, holds_if_nonneg), stacklevel=3)
        return False
    return True


def _log_inv(delta: float) -> float:
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    return math.log(1.0 / delta)


@dataclass
class BoundReport:
    theorem: str
    eta_ceiling: float
    B_w: float
    rhs_at: Callable[[float], float]
    failure_budget: float
    inputs_echo: dict = field(default_factory=dict)
    hypothesis_ok: bool = True
    lhs_weights: dict = field(default_factory=dict)
    horizon_ceiling: Optional[float] = None

    def to_dict(self, t: Optional[int] = None) -> dict:
        out = {
            "theorem": self.theorem,
            "eta_ceiling": self.eta_ceiling,
            "B_w": self.B_w,
            "failure_budget": self.failure_budget,
            "hypothesis_ok": self.hypothesis_ok,
            "inputs": self.inputs_echo,
            "lhs_weights": self.lhs_weights,
        }
        if self.horizon_ceiling is not None:
            out["horizon_ceiling"] = self.horizon_ceiling
        if t is not None:
            out["rhs_at_t"] = self.rhs_at(t)
        return out

    def to_json(self, t: Optional[int] = None) -> str:
        return json.dumps(self.to_dict(t), sort_keys=True)


def _budget(raw: float) -> float:
    return min(1.0, max(0.0, raw))


def realizable_bound(C1, C2, rho, C4, D0, norm_wref, R_wref, eta, delta, t) -> BoundReport:
    """Realizable case: rate 1/t under a rho-self-bounding loss with eta <= 1/(2 rho)."""
    if not rho > 0:
        raise ValueError("rho must be positive")
    ceiling = 1.0 / (2.0 * rho)
    if not 0 < eta <= ceiling:
        raise ValueError(f"eta={eta} exceeds the ceiling 1/(2 rho) = {ceiling}")
    L = _log_inv(delta)
    ok = _hypothesis(rho * D0 / t - R_wref, "comparator violates R(w_ref) <= rho D0 / t")
    B_w = max(1.0, 4.0 * math.sqrt(D0), math.sqrt(64.0 * C4 / rho * L))
    B = B_w * math.sqrt(1.0 + C1 + C2 * (1.0 + norm_wref) + C4)

    def rhs_at(i):
        return 2.0 * B * B / (i * eta) + 4.0 * R_wref / eta

    echo = dict(C1=C1, C2=C2, rho=rho, C4=C4, D0=D0, norm_wref=norm_wref, R_wref=R_wref, eta=eta, delta=delta, t=t, B=B)
    return BoundReport(
        "md_realizable",
        ceiling,
        B_w,
        rhs_at,
        _budget(2 * t * delta),
        echo,
        ok,
        lhs_weights={"bregman": "8/(3 i eta)", "avg_risk": "1/i"},
    )


def general_bound(C1, C2, D0, norm_wref, R_wref, tau, delta, t, excess_wref=None, eta=None) -> BoundReport:
    """General (possibly Markovian) case: rate 1/sqrt(t) with a witness mixing time tau.

    ``excess_wref`` enables the comparator check E(w_ref) <= D0 / sqrt(t);
    ``eta`` defaults to the ceiling and is used by ``rhs_at``.
    """
    L = _log_inv(delta)
    ceiling = 1.0 / (4096.0 * max(1.0, C1, C2) * math.sqrt(t * tau * L))
    eta = ceiling if eta is None else float(eta)
    ok = True
    if excess_wref is not None:
        ok = _hypothesis(D0 / math.sqrt(t) - excess_wref, "comparator violates E(w_ref) <= D0 / sqrt(t)")
    B_w = max(1.0, norm_wref if C2 > 0 else 0.0, 4.0 * math.sqrt(D0))

    def rhs_at(i):
        return B_w * B_w / (8.0 * i * eta) + R_wref

    echo = dict(C1=C1, C2=C2, D0=D0, norm_wref=norm_wref, R_wref=R_wref, tau=tau, delta=delta, t=t, eta=eta)
    return BoundReport(
        "md_general", ceiling, B_w, rhs_at, _budget(t * tau * delta), echo, ok, {"bregman": "1/(i eta)", "avg_risk": "1/i"}
    )


def td_bound(norm_wref, norm_w0_wref, residual_norm, tau, delta, t, gamma, eta=None) -> BoundReport:
    """TD(0) with a (possibly approximate) fixed point as comparator."""
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    L = _log_inv(delta)
    ceiling = 1.0 / (1024.0 * math.sqrt(t * tau * L))
    eta = ceiling if eta is None else float(eta)
    ok = _hypothesis(norm_w0_wref**2 / math.sqrt(t) - residual_norm, "residual exceeds ||w_ref - w0||^2 / sqrt(t)")
    B_w = max(1.0, 4.0 * norm_wref, 4.0 * norm_w0_wref)

    def rhs_at(i):
        return B_w * B_w + i * eta * B_w * residual_norm / 512.0

    echo = dict(
        norm_wref=norm_wref, norm_w0_wref=norm_w0_wref, residual_norm=residual_norm, tau=tau, delta=delta, t=t, gamma=gamma, eta=eta
    )
    return BoundReport(
        "td", ceiling, B_w, rhs_at, _budget(t * tau * delta), echo, ok, {"distance": 1.0, "prediction": (1.0 - gamma) ** 2}
    )


def heavy_constant(tail: HeavyTailSpec, EZ: float, delta: float, t: int) -> float:
    """The tail-dependent constant C entering the heavy-tailed step size."""
    if tail.kind == "subgaussian":
        return EZ + 2.0 * tail.sigma * math.sqrt(math.log(1.0 / delta) / t)
    if tail.p % 8:
        raise ValueError("polynomial tails need p divisible by 8")
    M = tail.moment_bound()
    return EZ + 2.0 * M * (2.0 / delta) ** (1.0 / tail.p) / math.sqrt(t)


def heavy_bound(C1, C2, D0, norm_wref, R_wref, tail: HeavyTailSpec, EZ, delta, t, eta=None, excess_wref=None) -> BoundReport:
    """Heavy-tailed data with subgaussian or polynomial control of Z."""
    L = _log_inv(delta)
    ok = True
    if excess_wref is not None:
        ok = _hypothesis(D0 / math.sqrt(t) - excess_wref, "comparator violates E(w_ref) <= D0 / sqrt(t)")
    C = heavy_constant(tail, EZ, delta, t)
    ceiling = 1.0 / (4096.0 * max(1.0, C1, C2) * math.sqrt(t * (1.0 + C) * L))
    eta = ceiling if eta is None else float(eta)
    B_w = max(1.0, C2 * norm_wref, 4.0 * math.sqrt(D0))

    def rhs_at(i):
        return B_w * B_w / (8.0 * i * eta) + R_wref

    echo = dict(C1=C1, C2=C2, D0=D0, norm_wref=norm_wref, R_wref=R_wref, EZ=EZ, C=C, tail=tail.kind, delta=delta, t=t, eta=eta)
    if tail.kind == "polynomial":
        echo.update(p=tail.p, M=tail.moment_bound())
    else:
        echo.update(sigma=tail.sigma)
    return BoundReport("md_heavy", ceiling, B_w, rhs_at, _budget(2 * t * delta), echo, ok, {"bregman": "1/(i eta)", "avg_risk": "1/i"})


def batch_bound(C1, C2, D0, norm_wref, R_wref, c6, delta, t, n, excess_wref=None, eta=None) -> BoundReport:
    """Batch mirror descent on n fixed samples; rate measured in population risk."""
    L = _log_inv(delta)
    if t > n:
        warnings.warn(HypothesisWarning("batch bound assumes t <= n", float(n - t)), stacklevel=2)
    ceiling = 1.0 / (4096.0 * max(1.0, C1, C2) * math.sqrt(t * (c6 + 6.0 * L)))
    eta = ceiling if eta is None else float(eta)
    ok = t <= n
    if excess_wref is not None:
        ok = _hypothesis(D0 / math.sqrt(t) - excess_wref, "comparator violates E(w_ref) <= D0 / sqrt(t)") and ok
    B_w = max(1.0, norm_wref if C2 > 0 else 0.0, 4.0 * math.sqrt(D0))

    def rhs_at(i):
        return B_w * B_w / (8.0 * i * eta) + R_wref

    echo = dict(C1=C1, C2=C2, D0=D0, norm_wref=norm_wref, R_wref=R_wref, c6=c6, delta=delta, t=t, n=n, eta=eta)
    return BoundReport("md_batch", ceiling, B_w, rhs_at, _budget(4 * delta), echo, ok, {"bregman": "1/(i eta)", "avg_risk": "1/i"})


def flow_bound(C1, C2, D0, norm_wref, R_wref, c6, delta, n, excess_wref=None) -> BoundReport:
    """Batch mirror flow: a horizon ceiling in place of a step-size ceiling.

    ``rhs_at`` takes a continuous time s; ``eta_ceiling`` is reported as inf
    since the flow has no step size.
    """
    L = _log_inv(delta)
    horizon = math.sqrt(n) / (16.0 * max(1.0, C1, C2) * (c6 + 6.0 * math.sqrt(L)))
    ok = True
    if excess_wref is not None:
        ok = _hypothesis(D0 / math.sqrt(n) - excess_wref, "comparator violates E(w_ref) <= D0 / sqrt(n)")
    B_w = 4.0 * max(1.0, norm_wref if C2 > 0 else 0.0, math.sqrt(D0))

    def rhs_at(s):
        return B_w * B_w / (2.0 * s) + R_wref

    echo = dict(C1=C1, C2=C2, D0=D0, norm_wref=norm_wref, R_wref=R_wref, c6=c6, delta=delta, n=n)
    return BoundReport(
        "mf_batch", math.inf, B_w, rhs_at, _budget(4 * delta), echo, ok, {"bregman": "1/s", "avg_risk": "1/s"}, horizon_ceiling=horizon
    )


# ---------------------------------------------------------------------------
# concentration calculators


def freedman_rhs(c: float, B: float, sum_cond_abs: float, delta: float) -> float:
    """(1/c) sum E_{<i}|X_i| + c B ln(1/delta), valid for c >= 4."""
    if c < 4:
        raise ValueError("c must be at least 4")
    if B < 0 or sum_cond_abs < 0:
        raise ValueError("B and the conditional sum must be nonnegative")
    return sum_cond_abs / c + c * B * _log_inv(delta)


def markov_conc_rhs(B_f: float, tau: int, eps: float, t: int, delta: float, sum_B_i: float) -> float:
    """2 B_f (2 tau - 2 + t eps + sqrt(t tau ln(1/delta))) + sum B_i."""
    if tau < 1 or t < 1:
        raise ValueError("tau and t must be positive integers")
    if not 0 <= eps <= 1:
        raise ValueError("eps must lie in [0, 1]")
    if B_f < 0 or sum_B_i < 0:
        raise ValueError("bounds must be nonnegative")
    return 2.0 * B_f * (2 * tau - 2 + t * eps + math.sqrt(t * tau * _log_inv(delta))) + sum_B_i


def poly_tail_rhs(M: float, p: int, t: int, delta: float) -> float:
    """2 M sqrt(t) (2/delta)^(1/p) for an even moment order p.

    delta may reach 2, where the tail factor collapses to one.
    """
    if p < 2 or p % 2:
        raise ValueError("p must be a positive even integer")
    if not 0 < delta <= 2:
        raise ValueError("delta must lie in (0, 2]")
    if M < 0 or t < 1:
        raise ValueError("need M >= 0 and t >= 1")
    return 2.0 * M * math.sqrt(t) * (2.0 / delta) ** (1.0 / p)
