"""Synthetic stochastic oracles with known smoothness and noise constants.

Each family exposes the exact gradient and objective alongside the stochastic
oracle, so diagnostics can measure estimator error without touching the
randomness the optimizers consume.  Stochastic gradients are pure functions
of (point, SampleKey).
"""

from __future__ import annotations

import abc
import math

import numpy as np

from .core import CompensatedSum, SampleKey, comp_add, derive_key, key_rng, sq_norm
from .errors import ConfigError

# Per-coordinate noise draws are clipped at 6 standard deviations so that
# same-point gradient differences stay bounded; the clip is symmetric (zero
# bias) and removes ~7e-8 of the variance.
NOISE_CLIP = 6.0


class Problem(abc.ABC):
    """Stochastic first-order oracle for F(x) = E[f(x, xi)].

    Attributes
    ----------
    dimension : int
    beta : float
        Mean-square smoothness bound: E||grad f(x,xi) - grad f(y,xi)||^2 is
        at most beta^2 ||x - y||^2 (probed with a safety margin for families
        without a closed form).
    sigma : float
        Gradient-noise bound: E||grad f(x,xi) - grad F(x)||^2 <= sigma^2,
        exact for the quadratic family and probed at reference points for
        the data-driven families.
    f_star : float or None
        Known infimum of F, when available.
    """

    kind: str = "abstract"
    dimension: int
    beta: float
    sigma: float
    f_star: float | None
    has_true_oracle: bool = True

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dimension,):
            raise ValueError(
                f"expected a vector of length {self.dimension}, got shape {x.shape}")
        return x

    @abc.abstractmethod
    def grad_stochastic(self, x: np.ndarray, key: SampleKey) -> np.ndarray:
        """One stochastic gradient; pure in (x, key)."""

    @abc.abstractmethod
    def grad_true(self, x: np.ndarray) -> np.ndarray:
        """Exact gradient of F; used by diagnostics only, never by optimizers."""

    @abc.abstractmethod
    def value_true(self, x: np.ndarray) -> float:
        """Exact objective value F(x)."""

    def default_start(self) -> np.ndarray:
        return np.ones(self.dimension)


class NoisyQuadratic(Problem):
    """F(x) = x' diag(eigenvalues) x / 2 with additive isotropic noise.

    The stochastic gradient is grad F(x) plus noise_scale times a clipped
    standard normal vector indexed by the key, so beta equals the largest
    eigenvalue exactly and sigma equals noise_scale * sqrt(dimension) (up to
    the negligible clipping deficit).
    """

    kind = "noisy-quadratic"

    def __init__(self, eigenvalues, noise_scale: float = 0.0):
        eig = np.atleast_1d(np.asarray(eigenvalues, dtype=np.float64))
        if eig.ndim != 1 or eig.size == 0:
            raise ConfigError("eigenvalues must be a non-empty vector")
        if np.any(eig < 0) or not np.all(np.isfinite(eig)):
            raise ConfigError("eigenvalues must be finite and non-negative")
        if noise_scale < 0:
            raise ConfigError(f"noise_scale must be non-negative, got {noise_scale}")
        self.eigenvalues = eig
        self.noise_scale = float(noise_scale)
        self.dimension = int(eig.size)
        self.beta = float(eig.max())
        self.sigma = self.noise_scale * math.sqrt(self.dimension)
        self.f_star = 0.0

    def grad_stochastic(self, x, key):
        x = self._check(x)
        g = self.eigenvalues * x
        if self.noise_scale > 0.0:
            z = key_rng(key).standard_normal(self.dimension)
            g = g + self.noise_scale * np.clip(z, -NOISE_CLIP, NOISE_CLIP)
        return g

    def grad_true(self, x):
        x = self._check(x)
        return self.eigenvalues * x

    def value_true(self, x):
        x = self._check(x)
        return 0.5 * float(x @ (self.eigenvalues * x))


class LeastSquaresRowSampling(Problem):
    """F(x) = ||Mx - y||^2 / (2n) with the oracle sampling one row per draw.

    Per-row smoothness gives beta = max_i ||m_i||^2; the optimum (hence
    f_star) comes from a dense least-squares solve, and sigma is the worst
    exactly-computed per-point gradient variance over standard-normal probe
    points, stored with a 5% margin.
    """

    kind = "least-squares"

    def __init__(self, matrix, targets):
        M = np.asarray(matrix, dtype=np.float64)
        y = np.asarray(targets, dtype=np.float64)
        if M.ndim != 2 or M.shape[0] == 0:
            raise ConfigError("matrix must be a non-empty 2-d array")
        if y.shape != (M.shape[0],):
            raise ConfigError("targets must have one entry per matrix row")
        self.matrix = M
        self.targets = y
        self.n_rows, self.dimension = M.shape
        self._row_sq = np.einsum("ij,ij->i", M, M)
        self.beta = float(self._row_sq.max())
        sol, *_ = np.linalg.lstsq(M, y, rcond=None)
        self.f_star = self.value_true(sol)
        self.sigma = self._probe_sigma(sol)

    def grad_stochastic(self, x, key):
        x = self._check(x)
        i = int(key_rng(key).integers(self.n_rows))
        row = self.matrix[i]
        return row * (float(row @ x) - self.targets[i])

    def grad_true(self, x):
        x = self._check(x)
        return self.matrix.T @ (self.matrix @ x - self.targets) / self.n_rows

    def value_true(self, x):
        r = self.matrix @ self._check(x) - self.targets
        return 0.5 * float(r @ r) / self.n_rows

    def gradient_variance(self, x) -> float:
        """Exact E||grad f(x,xi) - grad F(x)||^2 (average over all rows)."""
        x = self._check(x)
        r = self.matrix @ x - self.targets
        mean_sq = float(np.mean(self._row_sq * r * r))
        return mean_sq - sq_norm(self.grad_true(x))

    def _probe_sigma(self, sol) -> float:
        rng = np.random.default_rng(0x5eed)
        worst = max(self.gradient_variance(sol),
                    self.gradient_variance(np.zeros(self.dimension)))
        for _ in range(128):
            worst = max(worst, self.gradient_variance(rng.standard_normal(self.dimension)))
        return 1.05 * math.sqrt(max(worst, 0.0))

    def default_start(self) -> np.ndarray:
        return np.zeros(self.dimension)


def _sigmoid(u):
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    eu = np.exp(u[~pos])
    out[~pos] = eu / (1.0 + eu)
    return out


def _sigmoid_scalar(u: float) -> float:
    if u >= 0:
        return 1.0 / (1.0 + math.exp(-u))
    eu = math.exp(u)
    return eu / (1.0 + eu)


class NonconvexRegularizedLogistic(Problem):
    """Logistic loss on flipped-label data plus the bounded non-convex
    penalty sum_i x_i^2 / (1 + x_i^2).

    The oracle samples one example per draw.  beta and sigma have no closed
    form here; both are probed at construction (ratio maximisation over point
    pairs, exact per-point variance over all examples) and stored with a 5%
    margin.
    """

    kind = "logistic"

    def __init__(self, features, labels):
        X = np.asarray(features, dtype=np.float64)
        y = np.asarray(labels, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] == 0:
            raise ConfigError("features must be a non-empty 2-d array")
        if y.shape != (X.shape[0],) or not np.all(np.abs(y) == 1.0):
            raise ConfigError("labels must be a vector of +/-1 per example")
        self.features = X
        self.labels = y
        self.n_samples, self.dimension = X.shape
        self.f_star = None
        self.beta, self.sigma = self._probe_constants()

    @staticmethod
    def _reg_grad(x):
        denom = 1.0 + x * x
        return 2.0 * x / (denom * denom)

    def _margins(self, x):
        return self.labels * (self.features @ x)

    def _coefs(self, x):
        # d/du log(1 + exp(-u)) = -sigmoid(-u), times the label chain factor
        return -self.labels * _sigmoid(-self._margins(x))

    def grad_stochastic(self, x, key):
        x = self._check(x)
        i = int(key_rng(key).integers(self.n_samples))
        row = self.features[i]
        u = self.labels[i] * float(row @ x)
        coef = -self.labels[i] * _sigmoid_scalar(-u)
        return coef * row + self._reg_grad(x)

    def grad_true(self, x):
        x = self._check(x)
        return self.features.T @ self._coefs(x) / self.n_samples + self._reg_grad(x)

    def value_true(self, x):
        x = self._check(x)
        losses = np.logaddexp(0.0, -self._margins(x))
        return float(np.mean(losses)) + float(np.sum(x * x / (1.0 + x * x)))

    def gradient_variance(self, x) -> float:
        """Exact E||grad f(x,xi) - grad F(x)||^2 (average over all examples)."""
        x = self._check(x)
        c = self._coefs(x)
        mean_vec = self.features.T @ c / self.n_samples
        mean_sq = float(np.mean(c * c * np.einsum("ij,ij->i", self.features, self.features)))
        return mean_sq - sq_norm(mean_vec)

    def _pair_smoothness_sq(self, x, y) -> float:
        """Exact E||grad f(x,xi) - grad f(y,xi)||^2 over all examples."""
        dc = self._coefs(x) - self._coefs(y)
        dr = self._reg_grad(x) - self._reg_grad(y)
        row_sq = np.einsum("ij,ij->i", self.features, self.features)
        cross = self.features @ dr
        return float(np.mean(dc * dc * row_sq + 2.0 * dc * cross) + sq_norm(dr))

    def _probe_constants(self) -> tuple[float, float]:
        rng = np.random.default_rng(0xbe7a)
        d = self.dimension
        worst_ratio_sq = 0.0
        for _ in range(256):
            x = rng.standard_normal(d)
            y = x + 0.5 * rng.standard_normal(d)
            dist_sq = sq_norm(x - y)
            if dist_sq > 0:
                worst_ratio_sq = max(worst_ratio_sq, self._pair_smoothness_sq(x, y) / dist_sq)
        base = rng.standard_normal(d) * 0.1
        for i in range(d):
            y = base.copy()
            y[i] += 1e-3
            worst_ratio_sq = max(worst_ratio_sq,
                                 self._pair_smoothness_sq(base, y) / sq_norm(base - y))
        worst_var = max(self.gradient_variance(np.zeros(d)),
                        max(self.gradient_variance(rng.standard_normal(d)) for _ in range(128)))
        return 1.05 * math.sqrt(worst_ratio_sq), 1.05 * math.sqrt(max(worst_var, 0.0))

    def default_start(self) -> np.ndarray:
        return np.zeros(self.dimension)


def finite_diff_grad(problem: Problem, x, h: float) -> np.ndarray:
    """Central-difference gradient of F from value_true.

    The per-coordinate step is h * (1 + |x_i|), balancing truncation against
    roundoff at 64-bit precision for h around 1e-5.
    """
    if h <= 0:
        raise ValueError(f"h must be positive, got {h}")
    x = np.asarray(x, dtype=np.float64)
    g = np.empty_like(x)
    for i in range(x.size):
        step = h * (1.0 + abs(float(x[i])))
        xp = x.copy()
        xp[i] += step
        xm = x.copy()
        xm[i] -= step
        g[i] = (problem.value_true(xp) - problem.value_true(xm)) / (2.0 * step)
    return g


def estimate_constants(problem: Problem, probes: int, seed: int) -> tuple[float, float]:
    """Monte-Carlo estimates (beta_hat, sigma_hat) from oracle queries alone.

    beta_hat maximises the smoothness ratio over random point pairs plus
    axis-aligned pairs (the latter pick up diagonal curvature exactly);
    sigma_hat is the worst mean-square gradient deviation over a handful of
    standard-normal probe points.  Both lower-bound the stored constants.
    """
    if probes < 100:
        raise ValueError(f"need at least 100 probes, got {probes}")
    rng = np.random.default_rng((int(seed) & ((1 << 64) - 1), 303))
    d = problem.dimension
    draw = 0

    n_points = 8
    per_point = max(1, probes // n_points)
    worst_var = 0.0
    for _ in range(n_points):
        x = rng.standard_normal(d)
        gt = problem.grad_true(x)
        acc = CompensatedSum()
        for _ in range(per_point):
            gs = problem.grad_stochastic(x, derive_key(seed, draw))
            draw += 1
            acc = comp_add(acc, sq_norm(gs - gt))
        worst_var = max(worst_var, acc.value / per_point)

    keys_per_pair = 4
    n_pairs = max(32, probes // (2 * keys_per_pair))
    worst_ratio_sq = 0.0

    def ratio_sq(x, y):
        nonlocal draw
        dist_sq = sq_norm(x - y)
        if dist_sq == 0.0:
            return 0.0
        acc = 0.0
        for _ in range(keys_per_pair):
            k = derive_key(seed, draw)
            draw += 1
            acc += sq_norm(problem.grad_stochastic(x, k) - problem.grad_stochastic(y, k))
        return acc / keys_per_pair / dist_sq

    for _ in range(n_pairs):
        x = rng.standard_normal(d)
        y = x + rng.standard_normal(d) * rng.choice([1.0, 0.1, 0.01])
        worst_ratio_sq = max(worst_ratio_sq, ratio_sq(x, y))
    base = rng.standard_normal(d)
    for i in range(d):
        y = base.copy()
        y[i] += 1.0
        worst_ratio_sq = max(worst_ratio_sq, ratio_sq(base, y))

    return math.sqrt(worst_ratio_sq), math.sqrt(worst_var)


def make_least_squares(dimension: int, n_rows: int, data_seed: int = 0) -> LeastSquaresRowSampling:
    """Random inconsistent system: rows and targets drawn from the data seed."""
    rng = np.random.default_rng((int(data_seed) & ((1 << 64) - 1), 101))
    M = rng.standard_normal((n_rows, dimension))
    x_ref = rng.standard_normal(dimension)
    y = M @ x_ref + rng.standard_normal(n_rows)
    return LeastSquaresRowSampling(M, y)


def make_logistic(dimension: int, n_samples: int, flip_prob: float = 0.1,
                  data_seed: int = 0) -> NonconvexRegularizedLogistic:
    """Separable-with-flips synthetic classification data."""
    if not 0.0 <= flip_prob < 0.5:
        raise ConfigError(f"flip_prob must lie in [0, 0.5), got {flip_prob}")
    rng = np.random.default_rng((int(data_seed) & ((1 << 64) - 1), 202))
    X = rng.standard_normal((n_samples, dimension))
    w = rng.standard_normal(dimension)
    margins = X @ w
    labels = np.where(margins >= 0.0, 1.0, -1.0)
    flips = rng.random(n_samples) < flip_prob
    labels[flips] *= -1.0
    return NonconvexRegularizedLogistic(X, labels)


PROBLEM_FAMILIES = ("noisy-quadratic", "least-squares", "logistic")


def make_problem(family: str, params: dict) -> Problem:
    """Build a problem family from config-style parameters."""
    params = dict(params)
    bad = []

    def take(name, default=None, required=False):
        if name in params:
            return params.pop(name)
        if required:
            bad.append(f"problem family {family!r} requires parameter {name!r}")
        return default

    if family == "noisy-quadratic":
        dimension = take("dimension", required=True)
        noise_scale = take("noise_scale", 0.0)
        eigenvalues = take("eigenvalues")
        eig_min = take("eig_min", 1.0)
        eig_max = take("eig_max", 10.0)
        _reject_unknown(params, bad)
        if bad:
            raise ConfigError(bad)
        if eigenvalues is None:
            eigenvalues = np.linspace(float(eig_min), float(eig_max), int(dimension))
        elif len(eigenvalues) != int(dimension):
            raise ConfigError("eigenvalues length must equal dimension")
        return NoisyQuadratic(eigenvalues, noise_scale=float(noise_scale))
    if family == "least-squares":
        dimension = take("dimension", required=True)
        n_rows = take("n_rows")
        data_seed = take("data_seed", 0)
        _reject_unknown(params, bad)
        if bad:
            raise ConfigError(bad)
        if n_rows is None:
            n_rows = 4 * int(dimension)
        return make_least_squares(int(dimension), int(n_rows), int(data_seed))
    if family == "logistic":
        dimension = take("dimension", required=True)
        n_samples = take("n_samples", 200)
        flip_prob = take("flip_prob", 0.1)
        data_seed = take("data_seed", 0)
        _reject_unknown(params, bad)
        if bad:
            raise ConfigError(bad)
        return make_logistic(int(dimension), int(n_samples), float(flip_prob), int(data_seed))
    raise ConfigError(
        f"unknown problem family {family!r}; choose from {', '.join(PROBLEM_FAMILIES)}")


def _reject_unknown(params: dict, bad: list):
    for name in params:
        bad.append(f"unknown problem parameter {name!r}")
