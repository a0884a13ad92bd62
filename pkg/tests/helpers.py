"""Shared test oracles: brute-force Monte Carlo conditional expectations.

Every closed-form objective in the package is the conditional expectation,
given the observed data, of a classical loss evaluated on noise-inflated
surrogates.  These helpers estimate that expectation by simulation so the
closed forms can be checked against an independent computation.
"""

import numpy as np

from simexfree.data import psd_factor

# the sine objective is defined with a +1 additive constant, which leaves a
# +1/2 offset relative to the raw conditional expectation of the squared loss
SINE_OFFSET = 0.5


def _batched_loss(model, y, eta):
    """Classical loss averaged over observations; eta has shape (m, n)."""
    fam = model.family
    if fam == "linear":
        return np.mean((y[None, :] - eta) ** 2, axis=1)
    if fam == "exponential":
        return np.mean((y[None, :] - np.exp(eta)) ** 2, axis=1)
    if fam == "sine":
        return np.mean((y[None, :] - np.sin(eta)) ** 2, axis=1)
    if fam == "poisson":
        return -np.mean(y[None, :] * eta - np.exp(eta), axis=1)
    if fam == "logistic":
        return -np.mean(y[None, :] * eta - np.logaddexp(0.0, eta), axis=1)
    if fam == "lpre":
        return np.mean(y[None, :] * np.exp(-eta) + np.exp(eta) / y[None, :], axis=1)
    if fam == "lare":
        dev = np.abs(y[None, :] - np.exp(eta))
        return np.mean(dev / y[None, :] + np.exp(-eta) * dev, axis=1)
    if fam == "quantile":
        xi = y[None, :] - eta
        return np.mean(xi * (model.tau - (xi < 0)), axis=1)
    if fam == "expectile":
        xi = y[None, :] - eta
        return np.mean(np.where(xi < 0, 1 - model.tau, model.tau) * xi * xi, axis=1)
    if fam == "walsh":
        xi = y[None, :] - eta
        n = xi.shape[1]
        total = np.zeros(xi.shape[0])
        for i in range(n):
            total += np.abs(xi[:, i : i + 1] + xi[:, i:]).sum(axis=1)
        return total / (2 * n * (n + 1))
    raise ValueError(fam)


def mc_conditional_expectation(
    model, dataset, theta, lam, draws=200_000, seed=0, chunk=20_000
):
    """Monte Carlo estimate (value, standard error) of the conditional
    expectation of the classical loss on z + sqrt(lam) v, v ~ N(0, sigma_u)."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if model.has_intercept:
        alpha, beta = float(theta[0]), theta[1:]
    else:
        alpha, beta = 0.0, theta
    rng = np.random.default_rng(seed)
    root = psd_factor(dataset.sigma_u)
    eta0 = alpha + dataset.z @ beta
    coef = root.T @ beta  # eta = eta0 + sqrt(lam) * (v_std @ coef)
    vals = np.empty(draws)
    done = 0
    while done < draws:
        m = min(chunk, draws - done)
        shift = rng.standard_normal((m, dataset.n, dataset.p)) @ coef
        eta = eta0[None, :] + np.sqrt(lam) * shift
        vals[done : done + m] = _batched_loss(model, dataset.y, eta)
        done += m
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(draws))


def write_csv(path, columns):
    """Write named float columns to a comma-delimited file with a header."""
    names = list(columns)
    n = len(columns[names[0]])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(names) + "\n")
        for i in range(n):
            fh.write(",".join(repr(float(columns[c][i])) for c in names) + "\n")
