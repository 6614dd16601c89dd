"""Path-level schemes: Euler-Maruyama, the truncated-increment (monotone)
variant, and the drift-removing change of variable with its transformed
scheme for bounded measurable drifts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .model import (ConfigError, DivergenceError, DIVERGENCE_THRESHOLD,
                    SamplePath, eval_coefficient, growth_bounds, table)
from .noise import IncrementBlock, truncate_increments, truncation_level


def _drift_value(spec, k, values, grid):
    """Drift at step k given the path so far (handles the path-dependent kind)."""
    if spec.is_markovian:
        return float(spec.evaluate(values[k]))
    prefix = SamplePath(grid=grid, values=np.concatenate(
        [values[:k + 1], np.zeros(grid.n_steps - k)]))
    return eval_coefficient(spec, k * grid.h, prefix)


def _run_scheme(b, sigma, grid, deltas, x0):
    """Shared one-step recursion x <- x + h b(x) + sigma(x) delta."""
    n = grid.n_steps
    h = grid.h
    deltas = np.asarray(deltas, dtype=float)
    if deltas.shape != (n,):
        raise ConfigError("increments must match the grid (one per step)")
    values = np.empty(n + 1)
    values[0] = x0
    for k in range(n):
        bk = _drift_value(b, k, values, grid)
        sk = float(sigma.evaluate(values[k]))
        values[k + 1] = values[k] + h * bk + sk * deltas[k]
        if not math.isfinite(values[k + 1]) or abs(values[k + 1]) > DIVERGENCE_THRESHOLD:
            raise DivergenceError(f"scheme diverged at stage {k + 1}", stage=k + 1)
    return SamplePath(grid=grid, values=values)


def euler_maruyama(b, sigma, grid, increments, x0=0.0):
    """Classical Euler-Maruyama path from per-step Brownian increments."""
    if isinstance(increments, IncrementBlock):
        increments = increments.step_sums()
    return _run_scheme(b, sigma, grid, increments, x0)


def monotone_em(b, sigma, grid, trunc_k, block, x0=0.0):
    """Euler-Maruyama driven by increments stopped at the barrier
    K sqrt(-h log h); every applied increment satisfies |delta| <= barrier."""
    barrier = truncation_level(grid.h, trunc_k)
    if isinstance(block, IncrementBlock):
        substeps = block.dW
    else:
        substeps = np.asarray(block, dtype=float)
    if substeps.shape[0] != grid.n_steps:
        raise ConfigError("substep block must have one row per step")
    deltas, _ = truncate_increments(substeps, barrier)
    return _run_scheme(b, sigma, grid, deltas, x0)


@dataclass(frozen=True)
class DriftRemovingTransform:
    """Tabulated increasing map T with T(x0) = 0 that removes the drift.

    ``T(x) = int_{x0}^x exp(-2 int_{x0}^z b / sigma^2)`` on a dense grid;
    the transformed state Y = T(X) solves a driftless SDE with coefficient
    ``transformed_sigma(y) = (sigma T') (T^{-1}(y))``.
    """

    x0: float
    xs: np.ndarray
    ts: np.ndarray
    t_prime: np.ndarray
    transformed_sigma: object
    lipschitz_certificate: float

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        if x.size and (x.min() < self.xs[0] or x.max() > self.xs[-1]):
            raise ConfigError("state left the tabulated transform range; enlarge it")
        out = np.interp(x, self.xs, self.ts)
        return out if out.ndim else float(out)

    def inverse(self, y):
        y = np.asarray(y, dtype=float)
        if y.size and (y.min() < self.ts[0] or y.max() > self.ts[-1]):
            raise ConfigError("transformed state left the tabulated range; enlarge it")
        out = np.interp(y, self.ts, self.xs)
        return out if out.ndim else float(out)

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        if x.size and (x.min() < self.xs[0] or x.max() > self.xs[-1]):
            raise ConfigError("state left the tabulated transform range; enlarge it")
        out = np.interp(x, self.xs, self.t_prime)
        return out if out.ndim else float(out)


def zvonkin_transform(b, sigma, x0, half_width=10.0, n_nodes=10001):
    """Tabulate the drift-removing map on [x0 - R, x0 + R] by Simpson quadrature.

    Requires a bounded drift and a diffusion that is uniformly positive on
    the working interval.  Reports the Lipschitz certificate
    ``Lip(sigma) + 2 ||b||_inf / inf sigma`` for the transformed coefficient.
    """
    if not (b.is_markovian and sigma.is_markovian):
        raise ConfigError("transform needs Markovian coefficients")
    if n_nodes < 3:
        raise ConfigError("need at least 3 quadrature nodes")
    # refined grid: table nodes plus midpoints, so T accumulates per-interval
    # Simpson increments that are strictly positive (T' > 0 everywhere)
    xs_fine = np.linspace(x0 - half_width, x0 + half_width, 2 * n_nodes - 1)
    bs_fine = np.asarray(b.evaluate(xs_fine), dtype=float)
    ss_fine = np.asarray(sigma.evaluate(xs_fine), dtype=float)
    inf_sigma = float(ss_fine.min())
    if inf_sigma <= 0.0:
        raise ConfigError("diffusion must be uniformly positive on the interval")
    inner = cumulative_trapezoid(bs_fine / ss_fine**2, xs_fine, initial=0.0)
    inner -= np.interp(x0, xs_fine, inner)  # anchor the inner integral at x0
    t_prime_fine = np.exp(-2.0 * inner)
    increments = ((xs_fine[2::2] - xs_fine[:-2:2]) / 6.0
                  * (t_prime_fine[:-2:2] + 4.0 * t_prime_fine[1:-1:2]
                     + t_prime_fine[2::2]))
    xs = xs_fine[::2]
    # accumulate outward from the anchor so tiny far-flank increments are not
    # rounded away against the (possibly huge) opposite-flank values
    i0 = int(np.argmin(np.abs(xs - x0)))
    ts = np.empty(xs.size)
    ts[i0] = 0.0
    ts[i0 + 1:] = np.cumsum(increments[i0:])
    ts[:i0] = -np.cumsum(increments[:i0][::-1])[::-1]
    if np.any(np.diff(ts) <= 0):
        raise ConfigError("transform table lost resolution; reduce half_width "
                          "or the drift magnitude")
    t_prime = t_prime_fine[::2]
    sigma_lip = growth_bounds(sigma).lipschitz
    certificate = sigma_lip + 2.0 * float(np.max(np.abs(bs_fine))) / inf_sigma
    transformed = table(ts, ss_fine[::2] * t_prime, role="diffusion")
    return DriftRemovingTransform(x0=x0, xs=xs, ts=ts, t_prime=t_prime,
                                  transformed_sigma=transformed,
                                  lipschitz_certificate=certificate)


def transformed_monotone_em(b, sigma, grid, trunc_k, block, x0=0.0, transform=None):
    """Monotone scheme run in transformed coordinates and mapped back.

    One step: Y <- Y + T'(X) sigma(X) delta with the stopped increment delta,
    then X = T^{-1}(Y).
    """
    if transform is None:
        transform = zvonkin_transform(b, sigma, x0)
    barrier = truncation_level(grid.h, trunc_k)
    if isinstance(block, IncrementBlock):
        substeps = block.dW
    else:
        substeps = np.asarray(block, dtype=float)
    deltas, _ = truncate_increments(substeps, barrier)
    n = grid.n_steps
    values = np.empty(n + 1)
    values[0] = x0
    y = transform.forward(x0)
    for k in range(n):
        x = values[k]
        y = y + transform.derivative(x) * float(sigma.evaluate(x)) * deltas[k]
        values[k + 1] = transform.inverse(y)
        if not math.isfinite(values[k + 1]):
            raise DivergenceError(f"transformed scheme diverged at stage {k + 1}",
                                  stage=k + 1)
    return SamplePath(grid=grid, values=values)
