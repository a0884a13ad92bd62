"""Conditional-expectation objectives for every model family.

Each objective is the exact conditional expectation, given the observed
data, of the family's classical loss evaluated on noise-inflated surrogates
``z + sqrt(lam) * v`` with ``v ~ N(0, sigma_u)``.  The noise level ``lam``
indexes the objectives: ``lam = 0`` recovers the classical loss on the
observed data, and for the pluggable families ``lam = -1`` removes the
measurement-error bias in one shot.

All functions are pure; a :class:`TargetContext` bundles the dataset, the
model, the noise level, and quadrature settings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product

import numpy as np

from .data import NONSMOOTH_AT_ZERO, Dataset, ModelSpec, psd_factor
from .errors import CapacityError, ConfigError
from .gaussian import hermite_rule, normal_cdf, normal_pdf
from .optimize import finite_difference_gradient

# Below this, the smoothing variance s = lam * beta' sigma_u beta is treated
# as exactly zero: the closed-form limits are known and the normal cdf/pdf
# become numerically unstable.
S_FLOOR = 1e-12

WALSH_PAIR_CAP = 5000
GENERIC_MAX_P = 3


@dataclass(frozen=True)
class Theta:
    """Parameter estimate: coefficient vector plus optional intercept."""

    coefficients: np.ndarray
    intercept: float | None = None

    def __post_init__(self):
        object.__setattr__(
            self,
            "coefficients",
            np.atleast_1d(np.asarray(self.coefficients, dtype=float)),
        )

    @property
    def flat_vector(self) -> np.ndarray:
        """Flat layout used by the optimizer: intercept first when present."""
        if self.intercept is None:
            return self.coefficients.copy()
        return np.concatenate(([self.intercept], self.coefficients))

    @classmethod
    def from_flat(cls, vec, has_intercept: bool) -> "Theta":
        vec = np.atleast_1d(np.asarray(vec, dtype=float))
        if has_intercept:
            return cls(coefficients=vec[1:], intercept=float(vec[0]))
        return cls(coefficients=vec, intercept=None)


@dataclass(frozen=True)
class TargetContext:
    """Dataset, model, noise level, and quadrature sizes for one objective."""

    dataset: Dataset
    model: ModelSpec
    lam: float
    nodes: int = 30
    tensor_nodes: int = 15

    def __post_init__(self):
        if self.lam < -1.0:
            raise ConfigError(f"lam must be at least -1, got {self.lam}")
        if self.nodes < 2 or self.tensor_nodes < 2:
            raise ConfigError("quadrature node counts must be at least 2")
        m = self.model
        grid_only = m.family in ("logistic", "lare", "quantile", "walsh") or (
            m.family == "expectile" and m.tau != 0.5
        )
        if grid_only and self.lam < 0.0:
            raise ConfigError(
                f"family {m.family!r} forbids negative lam; "
                "use the lambda-grid extrapolation path"
            )
        if m.family == "generic" and self.lam < 0.0:
            raise ConfigError("generic family requires lam >= 0")
        m.validate_y(self.dataset.y)
        q = m.n_params(self.dataset.p)
        if q is not None and m.family != "generic" and q < 1:
            raise ConfigError("model has no parameters")


def _split(ctx: TargetContext, theta) -> tuple[float, np.ndarray]:
    """Split a flat parameter vector into (intercept, slopes)."""
    th = np.atleast_1d(np.asarray(theta, dtype=float))
    q = ctx.model.n_params(ctx.dataset.p)
    if q is not None and th.size != q:
        raise ConfigError(f"theta has length {th.size}, expected {q}")
    if ctx.model.has_intercept:
        return float(th[0]), th[1:]
    return 0.0, th


def _smoothing_variance(ctx: TargetContext, beta: np.ndarray) -> float:
    s = ctx.lam * float(beta @ ctx.dataset.sigma_u @ beta)
    if 0.0 < s < S_FLOOR:
        return 0.0
    return s


def _guard(value: float) -> float:
    return value if np.isfinite(value) else np.inf


def _guard_vec(g: np.ndarray) -> np.ndarray:
    return np.where(np.isfinite(g), g, np.inf)


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


# --------------------------------------------------------------------------
# family objectives
# --------------------------------------------------------------------------


def target_linear(ctx: TargetContext, theta) -> float:
    """Least-squares criterion plus lam times the slope penalty beta' sigma_u beta."""
    alpha, beta = _split(ctx, theta)
    d = ctx.dataset
    r = d.y - alpha - d.z @ beta
    return float(r @ r) / d.n + ctx.lam * float(beta @ d.sigma_u @ beta)


def target_linear_gradient(ctx: TargetContext, theta) -> np.ndarray:
    alpha, beta = _split(ctx, theta)
    d = ctx.dataset
    r = d.y - alpha - d.z @ beta
    gb = (-2.0 / d.n) * (d.z.T @ r) + 2.0 * ctx.lam * (d.sigma_u @ beta)
    if ctx.model.has_intercept:
        return np.concatenate(([-2.0 * float(np.mean(r))], gb))
    return gb


def target_exponential(ctx: TargetContext, theta) -> float:
    """Corrected squared-error criterion for the mean function exp(z' theta)."""
    _, t = _split(ctx, theta)
    d = ctx.dataset
    quad = float(t @ d.sigma_u @ t)
    zt = d.z @ t
    with np.errstate(over="ignore", invalid="ignore"):
        e1 = np.exp(zt + 0.5 * ctx.lam * quad)
        e2 = np.exp(2.0 * zt + 2.0 * ctx.lam * quad)
        v = float(np.mean(d.y * d.y - 2.0 * d.y * e1 + e2))
    return _guard(v)


def target_exponential_gradient(ctx: TargetContext, theta) -> np.ndarray:
    """Analytic gradient of :func:`target_exponential` (any admissible lam)."""
    _, t = _split(ctx, theta)
    d = ctx.dataset
    su_t = d.sigma_u @ t
    quad = float(t @ su_t)
    zt = d.z @ t
    with np.errstate(over="ignore", invalid="ignore"):
        e1 = np.exp(zt + 0.5 * ctx.lam * quad)
        e2 = np.exp(2.0 * zt + 2.0 * ctx.lam * quad)
        ye1 = d.y * e1
        g = (
            -2.0 * (d.z.T @ ye1 / d.n + ctx.lam * su_t * float(np.mean(ye1)))
            + 2.0 * d.z.T @ e2 / d.n
            + 4.0 * ctx.lam * su_t * float(np.mean(e2))
        )
    return _guard_vec(g)


def target_sine(ctx: TargetContext, theta) -> float:
    """Corrected squared-error criterion for the mean function sin(z' theta)."""
    _, t = _split(ctx, theta)
    d = ctx.dataset
    quad = float(t @ d.sigma_u @ t)
    zt = d.z @ t
    with np.errstate(over="ignore", invalid="ignore"):
        v = float(
            np.mean(
                d.y * d.y
                - 2.0 * d.y * np.sin(zt) * np.exp(-0.5 * ctx.lam * quad)
                - 0.5 * np.cos(2.0 * zt) * np.exp(-2.0 * ctx.lam * quad)
            )
            + 1.0
        )
    return _guard(v)


def target_poisson_negloglik(ctx: TargetContext, theta) -> float:
    """Corrected Poisson negative log-likelihood (theta-free terms dropped)."""
    _, t = _split(ctx, theta)
    d = ctx.dataset
    quad = float(t @ d.sigma_u @ t)
    zt = d.z @ t
    with np.errstate(over="ignore", invalid="ignore"):
        v = -float(np.mean(d.y * zt - np.exp(zt + 0.5 * ctx.lam * quad)))
    return _guard(v)


def target_poisson_gradient(ctx: TargetContext, theta) -> np.ndarray:
    _, t = _split(ctx, theta)
    d = ctx.dataset
    su_t = d.sigma_u @ t
    quad = float(t @ su_t)
    zt = d.z @ t
    with np.errstate(over="ignore", invalid="ignore"):
        mu = np.exp(zt + 0.5 * ctx.lam * quad)
        g = -(d.z.T @ (d.y - mu)) / d.n + ctx.lam * su_t * float(np.mean(mu))
    return _guard_vec(g)


def target_logistic(ctx: TargetContext, theta) -> float:
    """Corrected Bernoulli negative log-likelihood.

    The log-partition term is the expectation of log(1 + exp(eta + u)) over
    u ~ N(0, s) with s = lam * beta' sigma_u beta, computed by Gauss-Hermite
    quadrature; at s = 0 it collapses to the plain softplus.
    """
    alpha, beta = _split(ctx, theta)
    d = ctx.dataset
    eta = alpha + d.z @ beta
    s = _smoothing_variance(ctx, beta)
    if s == 0.0:
        part = _softplus(eta)
    else:
        t, w = hermite_rule(ctx.nodes)
        u = math.sqrt(2.0 * s) * t
        part = _softplus(eta[:, None] + u[None, :]) @ w / math.sqrt(math.pi)
    return _guard(-float(np.mean(d.y * eta - part)))


def target_lpre(ctx: TargetContext, theta) -> float:
    """Corrected least-product-relative-error criterion (multiplicative model)."""
    _, t = _split(ctx, theta)
    d = ctx.dataset
    quad = float(t @ d.sigma_u @ t)
    zt = d.z @ t
    with np.errstate(over="ignore", invalid="ignore"):
        base = float(np.mean(d.y * np.exp(-zt) + np.exp(zt) / d.y))
        v = base * math.exp(min(0.5 * ctx.lam * quad, 709.0))
    return _guard(v)


def target_lpre_gradient(ctx: TargetContext, theta) -> np.ndarray:
    _, t = _split(ctx, theta)
    d = ctx.dataset
    su_t = d.sigma_u @ t
    quad = float(t @ su_t)
    zt = d.z @ t
    with np.errstate(over="ignore", invalid="ignore"):
        lo = d.y * np.exp(-zt)
        hi = np.exp(zt) / d.y
        scale = math.exp(min(0.5 * ctx.lam * quad, 709.0))
        g = scale * (
            d.z.T @ (hi - lo) / d.n
            + ctx.lam * su_t * float(np.mean(lo + hi))
        )
    return _guard_vec(g)


def target_lare(ctx: TargetContext, theta) -> float:
    """Corrected least-absolute-relative-error criterion (multiplicative model).

    With s = lam * theta' sigma_u theta and l_i = log(y_i) - z_i' theta, the
    per-observation conditional expectation is

        exp(z'theta + s/2) / y * [1 - 2 Phi(l - s; 0, s)]
        + y * exp(-z'theta + s/2) * [2 Phi(l + s; 0, s) - 1],

    which reduces to the plain criterion at s = 0.
    """
    _, t = _split(ctx, theta)
    d = ctx.dataset
    zt = d.z @ t
    s = _smoothing_variance(ctx, t)
    with np.errstate(over="ignore", invalid="ignore"):
        if s == 0.0:
            dev = np.abs(d.y - np.exp(zt))
            return _guard(float(np.mean(dev / d.y + np.exp(-zt) * dev)))
        ell = np.log(d.y) - zt
        lo = 1.0 - 2.0 * normal_cdf(ell - s, 0.0, s)
        hi = 2.0 * normal_cdf(ell + s, 0.0, s) - 1.0
        v = float(
            np.mean(
                np.exp(zt + 0.5 * s) / d.y * lo
                + d.y * np.exp(-zt + 0.5 * s) * hi
            )
        )
    return _guard(v)


def target_quantile(ctx: TargetContext, theta) -> float:
    """Smoothed check-loss criterion for quantile regression.

    Per observation, with xi = y - z' beta and s = lam * beta' sigma_u beta:
    (tau - 1) xi + xi Phi(xi; 0, s) + s phi(xi; 0, s); the s = 0 branch is
    the plain check loss.
    """
    _, beta = _split(ctx, theta)
    d = ctx.dataset
    tau = ctx.model.tau
    xi = d.y - d.z @ beta
    s = _smoothing_variance(ctx, beta)
    if s == 0.0:
        return float(np.mean(xi * (tau - (xi < 0))))
    v = (tau - 1.0) * xi + xi * normal_cdf(xi, 0.0, s) + s * normal_pdf(xi, 0.0, s)
    return _guard(float(np.mean(v)))


def _walsh_pair_sum(xi: np.ndarray, s: float, block: int = 256) -> float:
    """Sum over unordered pairs i < j of the smoothed absolute-value terms.

    Computed from the full ordered sum minus the diagonal, in row blocks to
    bound memory at the n = 5000 cap.
    """
    n = xi.size

    def g(x):
        if s == 0.0:
            return np.abs(x)
        return x * (2.0 * normal_cdf(x, 0.0, 2.0 * s) - 1.0) + 4.0 * s * normal_pdf(
            x, 0.0, 2.0 * s
        )

    total = 0.0
    for i0 in range(0, n, block):
        rows = xi[i0 : i0 + block, None] + xi[None, :]
        total += float(np.sum(g(rows)))
    diag = float(np.sum(g(2.0 * xi)))
    return 0.5 * (total - diag)


def target_walsh(ctx: TargetContext, theta) -> float:
    """Smoothed Walsh-average (pairwise absolute sum) regression criterion.

    Exact O(n^2) pair evaluation; refuses beyond n = 5000.
    """
    d = ctx.dataset
    if d.n > WALSH_PAIR_CAP:
        raise CapacityError(
            f"walsh family evaluates all pairs exactly; n = {d.n} exceeds "
            f"the cap of {WALSH_PAIR_CAP}"
        )
    _, beta = _split(ctx, theta)
    xi = d.y - d.z @ beta
    s = _smoothing_variance(ctx, beta)
    if s == 0.0:
        diag = 2.0 * float(np.sum(np.abs(xi)))
    else:
        diag = 2.0 * float(
            np.sum(
                xi * (2.0 * normal_cdf(xi, 0.0, s) - 1.0)
                + 2.0 * s * normal_pdf(xi, 0.0, s)
            )
        )
    pairs = _walsh_pair_sum(xi, s)
    return _guard((diag + pairs) / (2.0 * d.n * (d.n + 1.0)))


def target_expectile(ctx: TargetContext, theta) -> float:
    """Smoothed asymmetric-squared-loss criterion for expectile regression.

    At tau = 1/2 the objective degenerates to (1/2) mean(xi^2 + s) for any
    lam >= -1, which at lam = -1 is the bias-corrected least-squares
    criterion.
    """
    _, beta = _split(ctx, theta)
    d = ctx.dataset
    tau = ctx.model.tau
    xi = d.y - d.z @ beta
    if tau == 0.5:
        s = ctx.lam * float(beta @ d.sigma_u @ beta)
        return 0.5 * float(np.mean(xi * xi + s))
    s = _smoothing_variance(ctx, beta)
    if s == 0.0:
        return float(np.mean(np.where(xi < 0, 1.0 - tau, tau) * xi * xi))
    cdf = normal_cdf(xi, 0.0, s)
    pdf = normal_pdf(xi, 0.0, s)
    v = (2.0 * tau - 1.0) * (xi * xi * cdf + s * xi * pdf + s * cdf) + (
        1.0 - tau
    ) * (xi * xi + s)
    return _guard(float(np.mean(v)))


def target_generic_ls(ctx: TargetContext, theta) -> float:
    """Least-squares objective for a user-supplied mean function.

    The Gaussian expectation over the inflated noise is computed by
    tensor-product Gauss-Hermite quadrature after the change of variables
    u = sqrt(lam) * chol(sigma_u) t; capped at p = 3 covariates.
    """
    d = ctx.dataset
    if d.p > GENERIC_MAX_P:
        raise CapacityError(
            f"generic family supports at most {GENERIC_MAX_P} covariates, got {d.p}"
        )
    th = np.atleast_1d(np.asarray(theta, dtype=float))
    m = ctx.model.mean_fn.fn
    with np.errstate(over="ignore", invalid="ignore"):
        if ctx.lam == 0.0:
            r = d.y - np.asarray(m(d.z, th), dtype=float)
            return _guard(float(r @ r) / d.n)
        scale = math.sqrt(2.0) * math.sqrt(ctx.lam) * psd_factor(d.sigma_u)
        t, w = hermite_rule(ctx.tensor_nodes)
        acc = 0.0
        for combo in product(range(ctx.tensor_nodes), repeat=d.p):
            u = scale @ t[list(combo)]
            wt = math.prod(w[k] for k in combo)
            r = d.y - np.asarray(m(d.z + u, th), dtype=float)
            acc += wt * float(r @ r)
        v = acc / (d.n * math.pi ** (d.p / 2.0))
    return _guard(v)


_TARGETS = {
    "linear": target_linear,
    "exponential": target_exponential,
    "sine": target_sine,
    "poisson": target_poisson_negloglik,
    "logistic": target_logistic,
    "lpre": target_lpre,
    "lare": target_lare,
    "quantile": target_quantile,
    "walsh": target_walsh,
    "expectile": target_expectile,
    "generic": target_generic_ls,
}

_ANALYTIC_GRADIENTS = {
    "linear": target_linear_gradient,
    "exponential": target_exponential_gradient,
    "poisson": target_poisson_gradient,
    "lpre": target_lpre_gradient,
}


def target_value(ctx: TargetContext, theta) -> float:
    """Evaluate the family objective for the context at theta."""
    return _TARGETS[ctx.model.family](ctx, theta)


def target_gradient(ctx: TargetContext, theta) -> np.ndarray:
    """Gradient of the family objective: analytic where available, else
    central finite differences with step max(1e-6, 1e-7 |theta_j|)."""
    fn = _ANALYTIC_GRADIENTS.get(ctx.model.family)
    if fn is not None:
        return fn(ctx, theta)
    return finite_difference_gradient(lambda th: target_value(ctx, th), theta)


def has_analytic_gradient(model: ModelSpec) -> bool:
    return model.family in _ANALYTIC_GRADIENTS


def is_smooth_at(model: ModelSpec, lam: float) -> bool:
    """False for objectives that are non-smooth when the smoothing variance is zero."""
    return not (model.family in NONSMOOTH_AT_ZERO and lam == 0.0)
