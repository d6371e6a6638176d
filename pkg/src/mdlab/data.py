"""Data sources: discrete laws, the sphere-slice law, finite Markov chains,
heavy-tailed samplers and TD triple streams.

Sources draw whole blocks of samples at once with ``draw(rng, n)`` which
returns ``(X, Y)`` with shapes ``(n, d)`` and ``(n,)``. Sources that admit
an exact population risk expose ``exact_risk(loss, w)``.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import integrate

from .losses import Loss, sgn

BOUND_SLACK = 1e-12


class SeriesMismatchError(ArithmeticError):
    """Quadrature and closed-form series evaluations of the sphere risk disagree."""


@dataclass(frozen=True)
class LabeledSample:
    x: np.ndarray
    y: float


@dataclass(frozen=True)
class TdTriple:
    x: np.ndarray
    x_next: np.ndarray
    r: float


@dataclass(frozen=True)
class StationarityWitness:
    pi: np.ndarray
    tau: int
    eps: float

    def __post_init__(self):
        if abs(float(np.sum(self.pi)) - 1.0) > 1e-12:
            raise ValueError("pi must sum to one")
        if self.tau < 1 or self.eps < 0:
            raise ValueError("need tau >= 1 and eps >= 0")


def _check_bounded(X: np.ndarray, Y: np.ndarray) -> None:
    if X.size and (np.max(np.linalg.norm(X, axis=1)) > 1 + BOUND_SLACK or np.max(np.abs(Y)) > 1 + BOUND_SLACK):
        raise ValueError("bounded source has a point with max(||x||, |y|) > 1")


# ---------------------------------------------------------------------------
# finite-support laws


@dataclass
class DiscreteSource:
    """A finite-support distribution over labeled points."""

    points: np.ndarray
    labels: np.ndarray
    probs: np.ndarray
    name: str = "discrete"
    bounded: bool = True

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.labels = np.asarray(self.labels, dtype=float).reshape(-1)
        self.probs = np.asarray(self.probs, dtype=float).reshape(-1)
        k = self.points.shape[0]
        if self.labels.size != k or self.probs.size != k:
            raise ValueError("points, labels and probs must have matching lengths")
        if np.any(self.probs < 0) or abs(self.probs.sum() - 1.0) > 1e-12:
            raise ValueError(f"probabilities must be nonnegative and sum to 1, got sum {self.probs.sum()!r}")
        if self.bounded:
            _check_bounded(self.points, self.labels)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def draw(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        idx = rng.choice(self.probs.size, size=n, p=self.probs)
        return self.points[idx], self.labels[idx]

    def exact_risk(self, loss: Loss, w) -> float:
        value, _ = loss.value_and_deriv(self.labels, self.points @ w)
        return float(self.probs @ value)

    def exact_risk_grad(self, loss: Loss, w) -> tuple[float, np.ndarray]:
        value, deriv = loss.value_and_deriv(self.labels, self.points @ w)
        return float(self.probs @ value), (self.probs * deriv) @ self.points

    def second_moment(self) -> np.ndarray:
        return (self.points * self.probs[:, None]).T @ self.points

    def cross_moment(self) -> np.ndarray:
        return (self.probs * self.labels) @ self.points


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


@dataclass
class TwoClusterConfig:
    """Two likely upper points and two rare lower points, all labeled +1."""

    points: Sequence[Sequence[float]] = field(
        default_factory=lambda: [
            _unit([0.15, 0.95]),
            _unit([-0.15, 0.95]),
            _unit([0.95, -0.15]),
            _unit([-0.95, -0.15]),
        ]
    )
    probs: Sequence[float] = (0.45, 0.45, 0.05, 0.05)
    label: float = 1.0


def two_cluster_source(config: Optional[TwoClusterConfig] = None) -> DiscreteSource:
    config = config or TwoClusterConfig()
    pts = np.asarray(config.points, dtype=float)
    return DiscreteSource(pts, np.full(pts.shape[0], config.label), config.probs, name="two_cluster")


def sample_two_cluster(rng: np.random.Generator, config: Optional[TwoClusterConfig] = None) -> LabeledSample:
    X, Y = two_cluster_source(config).draw(rng, 1)
    return LabeledSample(X[0], float(Y[0]))


def margin_source(gamma: float = 0.5) -> DiscreteSource:
    """Symmetric separable law whose hard margin along e1 is exactly ``gamma``.

    Support: ``y * (m, +-sqrt(1 - m^2))`` for ``m`` in ``{gamma, (1+gamma)/2}``
    and ``y = +-1``, all equally likely.
    """
    if not 0 < gamma <= 1:
        raise ValueError("gamma must lie in (0, 1]")
    pts, labels = [], []
    for y in (1.0, -1.0):
        for m in (gamma, 0.5 * (1.0 + gamma)):
            for s in (1.0, -1.0):
                pts.append([y * m, y * s * math.sqrt(max(0.0, 1.0 - m * m))])
                labels.append(y)
    k = len(pts)
    return DiscreteSource(np.array(pts), np.array(labels), np.full(k, 1.0 / k), name=f"margin({gamma:g})")


def scalar_law(values: Sequence[float], probs: Sequence[float]) -> DiscreteSource:
    """A law over scalar targets with the constant feature x = 1."""
    values = np.asarray(values, dtype=float)
    return DiscreteSource(np.ones((values.size, 1)), values, probs, name="scalar", bounded=False)


def law_median(source: DiscreteSource) -> float:
    """Smallest m with P[y <= m] >= 1/2 (a median of the label law)."""
    order = np.argsort(source.labels, kind="stable")
    cdf = np.cumsum(source.probs[order])
    return float(source.labels[order][np.searchsorted(cdf, 0.5 - 1e-15)])


# ---------------------------------------------------------------------------
# sphere-slice law


def sphere_risk_series(r: float, max_terms: int = 10_000_000) -> float:
    """(pi^2/12 - sum_k (-1)^{k+1} e^{-kr} / k^2) / r, summed to double precision."""
    # the alternating tail is bounded by its first omitted term
    k_needed = 1
    while math.exp(-k_needed * r) / k_needed**2 > 1e-17 and k_needed < max_terms:
        k_needed *= 2
    k = np.arange(1, k_needed + 1, dtype=float)
    terms = (-1.0) ** (k + 1) * np.exp(-k * r) / k**2
    tail = math.fsum(terms[::-1])
    return (math.pi**2 / 12.0 - tail) / r


def sphere_risk_quadrature(r: float) -> float:
    value, _ = integrate.quad(lambda s: math.log1p(math.exp(-r * s)), 0.0, 1.0, epsabs=1e-14, epsrel=1e-13, limit=200)
    return value


def sphere_risk_exact(r: float) -> float:
    """Logistic risk of ``r * e1`` under the sphere-slice law.

    Computed by adaptive quadrature and cross-checked against the dilogarithm
    series; a disagreement beyond 1e-8 raises :class:`SeriesMismatchError`.
    """
    if not r > 0:
        raise ValueError("r must be positive")
    quad = sphere_risk_quadrature(r)
    series = sphere_risk_series(r)
    if abs(quad - series) > 1e-8:
        raise SeriesMismatchError(f"quadrature {quad!r} vs series {series!r} at r={r}")
    return quad


@dataclass
class SphereSource:
    """x1 uniform on [-1, 1], the rest uniform on the sphere slice; y = sgn(x1)."""

    d: int = 2
    name: str = "sphere"
    bounded: bool = True

    def __post_init__(self):
        if self.d < 2:
            raise ValueError("sphere source needs d >= 2")

    @property
    def dim(self) -> int:
        return self.d

    def draw(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        x1 = rng.uniform(-1.0, 1.0, size=n)
        rest = rng.standard_normal((n, self.d - 1))
        rest /= np.linalg.norm(rest, axis=1, keepdims=True)
        rest *= np.sqrt(1.0 - x1 * x1)[:, None]
        X = np.column_stack([x1, rest])
        return X, sgn(x1)

    def exact_risk(self, loss: Loss, w) -> float:
        """Exact risk by quadrature over x1; needs d = 2 or w parallel to e1."""
        w = np.asarray(w, dtype=float)
        off_axis = float(np.linalg.norm(w[1:]))
        if self.d != 2 and off_axis > 0:
            raise ValueError("exact sphere risk is available for d = 2 or w parallel to e1")

        def integrand(x1):
            y = 1.0 if x1 >= 0 else -1.0
            side = math.sqrt(max(0.0, 1.0 - x1 * x1)) * off_axis
            v, _ = loss.value_and_deriv(np.array([y, y]), np.array([w[0] * x1 + side, w[0] * x1 - side]))
            return 0.25 * float(v[0] + v[1])

        left, _ = integrate.quad(integrand, -1.0, 0.0, epsabs=1e-13, epsrel=1e-12, limit=200)
        right, _ = integrate.quad(integrand, 0.0, 1.0, epsabs=1e-13, epsrel=1e-12, limit=200)
        return left + right


def sample_sphere_slice(rng: np.random.Generator, d: int) -> LabeledSample:
    X, Y = SphereSource(d).draw(rng, 1)
    return LabeledSample(X[0], float(Y[0]))


# ---------------------------------------------------------------------------
# finite Markov chains


@dataclass
class FiniteChain:
    """Row-stochastic chain with per-state features, rewards and optional labels."""

    transition: np.ndarray
    features: np.ndarray
    reward: np.ndarray
    label: Optional[np.ndarray] = None

    def __post_init__(self):
        self.transition = np.atleast_2d(np.asarray(self.transition, dtype=float))
        self.features = np.atleast_2d(np.asarray(self.features, dtype=float))
        self.reward = np.asarray(self.reward, dtype=float).reshape(-1)
        n = self.transition.shape[0]
        if self.transition.shape != (n, n):
            raise ValueError("transition must be square")
        if np.any(self.transition < 0) or np.max(np.abs(self.transition.sum(axis=1) - 1.0)) > 1e-12:
            raise ValueError("transition rows must be nonnegative and sum to 1")
        if self.features.shape[0] != n or self.reward.size != n:
            raise ValueError("features and reward need one entry per state")
        if np.max(np.linalg.norm(self.features, axis=1)) > 1 + BOUND_SLACK:
            raise ValueError("state features must satisfy ||x|| <= 1")
        if np.max(np.abs(self.reward)) > 1 + BOUND_SLACK:
            raise ValueError("rewards must lie in [-1, 1]")
        if self.label is not None:
            self.label = np.asarray(self.label, dtype=float).reshape(-1)
            if self.label.size != n:
                raise ValueError("label needs one entry per state")

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def stationary(self) -> np.ndarray:
        n = self.n_states
        A = np.vstack([self.transition.T - np.eye(n), np.ones((1, n))])
        b = np.zeros(n + 1)
        b[-1] = 1.0
        pi, *_ = np.linalg.lstsq(A, b, rcond=None)
        pi = np.clip(pi, 0.0, None)
        return pi / pi.sum()

    def is_primitive(self) -> bool:
        """Irreducible and aperiodic, by positivity of P^k with k = (n-1)^2 + 1."""
        n = self.n_states
        support = (self.transition > 0).astype(np.int64)
        power = np.eye(n, dtype=np.int64)
        for _ in range((n - 1) ** 2 + 1):
            power = np.minimum(power @ support, 1)
        return bool(np.all(power > 0))

    def path(self, rng: np.random.Generator, n: int, start: Optional[int] = None) -> np.ndarray:
        """States s_0..s_n, with s_0 from the stationary law unless given."""
        cum = np.cumsum(self.transition, axis=1).tolist()
        last_positive = [int(np.flatnonzero(row > 0)[-1]) for row in self.transition]
        s = int(rng.choice(self.n_states, p=self.stationary())) if start is None else int(start)
        u = rng.random(n).tolist()
        states = [s]
        for ui in u:
            nxt = bisect.bisect_right(cum[s], ui)
            s = nxt if nxt < self.n_states and self.transition[s, nxt] > 0 else last_positive[s]
            states.append(s)
        return np.asarray(states, dtype=np.int64)


def tv_distance(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    return 0.5 * np.sum(np.abs(p - q), axis=-1)


def chain_witness(chain: FiniteChain, eps: float, power_cap: int = 100_000) -> StationarityWitness:
    """Stationary law and the smallest lag tau whose worst-start TV is <= eps."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    if not chain.is_primitive():
        raise ValueError("chain is reducible or periodic; no stationarity witness")
    pi = chain.stationary()
    power = chain.transition.copy()
    for tau in range(1, power_cap + 1):
        if np.max(tv_distance(power, pi[None, :])) <= eps + BOUND_SLACK:
            return StationarityWitness(pi, tau, float(eps))
        power = power @ chain.transition
    raise ValueError(f"no tau <= {power_cap} reaches TV <= {eps}")


def iid_chain(source: DiscreteSource) -> FiniteChain:
    """An IID finite-support law written as a rank-one chain over its atoms."""
    k = source.probs.size
    return FiniteChain(
        transition=np.tile(source.probs, (k, 1)),
        features=source.points,
        reward=np.zeros(k),
        label=source.labels,
    )


def pair_chain(chain: FiniteChain) -> FiniteChain:
    """The chain of consecutive state pairs (s_i, s_{i+1}) over positive edges."""
    edges = [(a, b) for a in range(chain.n_states) for b in range(chain.n_states) if chain.transition[a, b] > 0]
    index = {e: i for i, e in enumerate(edges)}
    P = np.zeros((len(edges), len(edges)))
    for (a, b), i in index.items():
        for c in range(chain.n_states):
            if chain.transition[b, c] > 0:
                P[i, index[(b, c)]] = chain.transition[b, c]
    feats = np.zeros((len(edges), 1))
    return FiniteChain(P, feats, np.zeros(len(edges)))


@dataclass
class ChainSource:
    """Labeled samples read off a path of a finite chain."""

    chain: FiniteChain
    start: Optional[int] = None
    name: str = "chain"
    bounded: bool = True

    def __post_init__(self):
        if self.chain.label is None:
            raise ValueError("ChainSource needs per-state labels")

    @property
    def dim(self) -> int:
        return self.chain.dim

    def draw(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        states = self.chain.path(rng, n, self.start)[1:]
        return self.chain.features[states], self.chain.label[states]

    def exact_risk(self, loss: Loss, w) -> float:
        value, _ = loss.value_and_deriv(self.chain.label, self.chain.features @ w)
        return float(self.chain.stationary() @ value)


@dataclass
class TdStream:
    """Arrays of triples (x_i, x_{i+1}, r_{i+1}) along one chain path."""

    X: np.ndarray
    X_next: np.ndarray
    R: np.ndarray
    states: np.ndarray

    def __len__(self) -> int:
        return self.R.size

    def __getitem__(self, i: int) -> TdTriple:
        return TdTriple(self.X[i], self.X_next[i], float(self.R[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))


def td_stream(
    rng: np.random.Generator,
    chain: FiniteChain,
    n: int,
    start: Optional[int] = None,
    noise: float = 0.0,
) -> TdStream:
    """Simulate ``n`` TD triples; rewards get optional uniform noise clipped to [-1, 1]."""
    if n < 1:
        raise ValueError("n must be positive")
    states = chain.path(rng, n, start)
    r = chain.reward[states[:-1]]
    if noise > 0:
        r = np.clip(r + noise * rng.uniform(-1.0, 1.0, size=n), -1.0, 1.0)
    return TdStream(chain.features[states[:-1]], chain.features[states[1:]], r, states)


# ---------------------------------------------------------------------------
# heavy tails


@dataclass(frozen=True)
class HeavyTailSpec:
    """Tail law of Z = max{1, ||x||^4, |y|^4}.

    ``subgaussian``: Z = 1 + sigma |G| with G standard normal, so Z - EZ is
    subgaussian with variance proxy sigma^2.
    ``polynomial``: Z is Pareto with scale 1 and tail index ``alpha``; moments
    of Z are finite below order ``alpha``. ``M`` defaults to the exact moment
    bound max{p/e, sup_{2<=r<=p} E|Z - EZ|^r}.
    """

    kind: str
    sigma: float = 1.0
    p: int = 8
    alpha: float = 12.0
    M: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("subgaussian", "polynomial"):
            raise ValueError(f"unknown tail kind {self.kind!r}")
        if self.kind == "subgaussian" and self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.kind == "polynomial":
            if self.p <= 0 or self.p % 8 != 0:
                raise ValueError(f"polynomial tails need p divisible by 8, got {self.p}")
            if self.alpha <= self.p:
                raise ValueError("tail index alpha must exceed p for finite p-th moments")

    def mean_z(self) -> float:
        if self.kind == "subgaussian":
            return 1.0 + self.sigma * math.sqrt(2.0 / math.pi)
        return self.alpha / (self.alpha - 1.0)

    def var_z(self) -> float:
        if self.kind == "subgaussian":
            return self.sigma**2 * (1.0 - 2.0 / math.pi)
        a = self.alpha
        return a / ((a - 1.0) ** 2 * (a - 2.0))

    def raw_moment(self, k: int) -> float:
        if self.kind != "polynomial":
            raise ValueError("raw moments are tabulated for polynomial tails only")
        return self.alpha / (self.alpha - k)

    def central_moment(self, r: int) -> float:
        """E (Z - EZ)^r for even integer r, by binomial expansion."""
        if r % 2:
            raise ValueError("only even central moments are exact")
        mu = self.mean_z()
        return float(math.fsum(math.comb(r, k) * self.raw_moment(k) * (-mu) ** (r - k) for k in range(r + 1)))

    def moment_bound(self) -> float:
        if self.M is not None:
            return float(self.M)
        if self.kind != "polynomial":
            raise ValueError("moment bound applies to polynomial tails")
        # r -> E|X|^r is log-convex, so the sup over [2, p] sits at an endpoint
        return max(self.p / math.e, self.central_moment(2), self.central_moment(self.p))


@dataclass
class HeavySource:
    """x = R u with u uniform on the sphere and y = +-R, where R = Z^{1/4}."""

    spec: HeavyTailSpec
    d: int = 2
    name: str = "heavy"
    bounded: bool = False

    @property
    def dim(self) -> int:
        return self.d

    def draw_with_z(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if self.spec.kind == "subgaussian":
            z = 1.0 + self.spec.sigma * np.abs(rng.standard_normal(n))
        else:
            z = (1.0 - rng.random(n)) ** (-1.0 / self.spec.alpha)
        radius = z**0.25
        u = rng.standard_normal((n, self.d))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        signs = np.where(rng.random(n) < 0.5, -1.0, 1.0)
        X = u * radius[:, None]
        Y = signs * radius
        # ||x||^4 = |y|^4 = z up to rounding, so Z = max{1, z} = z exactly
        return X, Y, np.maximum(1.0, z)

    def draw(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        X, Y, _ = self.draw_with_z(rng, n)
        return X, Y

    def mean_sqrt_z(self) -> float:
        if self.spec.kind == "polynomial":
            return self.spec.alpha / (self.spec.alpha - 0.5)
        sigma = self.spec.sigma
        value, _ = integrate.quad(
            lambda g: math.sqrt(1.0 + sigma * g) * math.exp(-0.5 * g * g), 0.0, np.inf, epsabs=1e-13, epsrel=1e-12
        )
        return value * math.sqrt(2.0 / math.pi)

    def exact_risk(self, loss: Loss, w) -> float:
        """Squared-loss risk E[R^2] (1 + ||w||^2 / d) / 2; the sign of y is independent of u."""
        if loss.name != "squared":
            raise ValueError("exact heavy-tailed risk is available for the squared loss only")
        w = np.asarray(w, dtype=float)
        return 0.5 * self.mean_sqrt_z() * (1.0 + float(w @ w) / self.d)


def sample_heavy(rng: np.random.Generator, spec: HeavyTailSpec, d: int) -> tuple[LabeledSample, float]:
    X, Y, Z = HeavySource(spec, d).draw_with_z(rng, 1)
    return LabeledSample(X[0], float(Y[0])), float(Z[0])
