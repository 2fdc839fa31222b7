"""Gaussian-process regression with an ARD Matérn 5/2 kernel.

Hyperparameters (log length scales, log amplitude, log noise, constant
mean) are not optimized but sampled from their posterior with univariate
slice sampling; predictions average over the retained samples.  Outputs
are standardized internally.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

JITTERS = (0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8)

LOG_LENGTH_BOUNDS = (math.log(1e-2), math.log(10.0))
LOG_AMP_BOUNDS = (math.log(1e-3), math.log(1e2))
LOG_NOISE_BOUNDS = (math.log(1e-10), math.log(1.0))
MEAN_BOUND = 5.0


class GpFitError(RuntimeError):
    pass


def matern52(x, x2, theta) -> float:
    """Kernel value ``theta[0] (1 + sqrt(5 r2) + 5/3 r2) exp(-sqrt(5 r2))``; ``theta[1:]`` are length scales."""
    theta = np.asarray(theta, dtype=float)
    d = (np.asarray(x, dtype=float) - np.asarray(x2, dtype=float)) / theta[1:]
    r2 = float(d @ d)
    s = math.sqrt(5.0 * r2)
    return float(theta[0] * (1.0 + s + 5.0 / 3.0 * r2) * math.exp(-s))


def matern52_gram(A, B, amplitude, lengths) -> np.ndarray:
    A = np.asarray(A, dtype=float) / lengths
    B = np.asarray(B, dtype=float) / lengths
    r2 = np.maximum(
        np.sum(A**2, 1)[:, None] + np.sum(B**2, 1)[None, :] - 2.0 * A @ B.T, 0.0
    )
    s = np.sqrt(5.0 * r2)
    return amplitude * (1.0 + s + 5.0 / 3.0 * r2) * np.exp(-s)


@dataclass(frozen=True)
class Hyper:
    lengths: np.ndarray
    amplitude: float
    noise: float
    mean: float

    @classmethod
    def from_vector(cls, h) -> "Hyper":
        h = np.asarray(h, dtype=float)
        return cls(np.exp(h[:-3]), float(math.exp(h[-3])), float(math.exp(h[-2])), float(h[-1]))


def _factor(X, y, hyp: Hyper):
    K = matern52_gram(X, X, hyp.amplitude, hyp.lengths)
    K[np.diag_indices_from(K)] += hyp.noise
    for j in JITTERS:
        try:
            L = cholesky(K + j * np.eye(len(K)), lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            continue
        if np.all(np.isfinite(L)):
            return L, cho_solve((L, True), y - hyp.mean, check_finite=False)
    raise GpFitError("kernel matrix is singular even with maximal jitter")


def log_marginal_likelihood(h, X, y) -> float:
    hyp = Hyper.from_vector(h)
    try:
        L, alpha = _factor(X, y, hyp)
    except GpFitError:
        return -np.inf
    r = y - hyp.mean
    return float(-0.5 * r @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * len(y) * math.log(2 * math.pi))


def log_prior(h, dim: int) -> float:
    h = np.asarray(h, dtype=float)
    bounds = [LOG_LENGTH_BOUNDS] * dim + [LOG_AMP_BOUNDS, LOG_NOISE_BOUNDS]
    for v, (lo, hi) in zip(h[:-1], bounds):
        if not lo <= v <= hi:
            return -np.inf
    m = h[-1]
    if abs(m) > MEAN_BOUND:
        return -np.inf
    return float(-0.5 * m * m - 0.5 * (h[-3] / 1.5) ** 2)


def slice_sample(logp, x0, rng: np.random.Generator, n_sweeps: int, width=1.0, max_steps: int = 20, active=None):
    """Coordinate-wise slice sampling with stepping out and shrinkage; returns every sweep's state.

    ``active`` limits the sweep to some coordinates; the others stay fixed.
    """
    x = np.asarray(x0, dtype=float).copy()
    lp = logp(x)
    if not np.isfinite(lp):
        raise ValueError("slice sampler must start inside the support")
    widths = np.broadcast_to(np.asarray(width, dtype=float), x.shape)
    coords = np.arange(len(x)) if active is None else np.asarray(active, dtype=int)
    out = []
    for _ in range(n_sweeps):
        for i in rng.permutation(coords):
            level = lp + math.log(rng.random())
            w = widths[i]
            lo = x[i] - w * rng.random()
            hi = lo + w
            j = int(rng.integers(max_steps + 1))
            k = max_steps - j
            probe = x.copy()
            while j > 0:
                probe[i] = lo
                if logp(probe) <= level:
                    break
                lo -= w
                j -= 1
            while k > 0:
                probe[i] = hi
                if logp(probe) <= level:
                    break
                hi += w
                k -= 1
            while True:
                probe[i] = lo + (hi - lo) * rng.random()
                lp_new = logp(probe)
                if lp_new > level:
                    x, lp = probe, lp_new
                    break
                if probe[i] < x[i]:
                    lo = probe[i]
                else:
                    hi = probe[i]
                if hi - lo < 1e-12:
                    break
        out.append(x.copy())
    return out


@dataclass(frozen=True, eq=False)
class GpModel:
    X: np.ndarray
    y: np.ndarray
    y_mean: float
    y_scale: float
    samples: tuple  # of Hyper
    factors: tuple  # of (L, alpha)

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def predict_samples(self, Xs) -> tuple[np.ndarray, np.ndarray]:
        """Latent mean and variance per hyperparameter sample, in output units; shapes ``(S, n)``."""
        Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
        mus, vs = [], []
        for hyp, (L, alpha) in zip(self.samples, self.factors):
            Ks = matern52_gram(Xs, self.X, hyp.amplitude, hyp.lengths)
            mu = hyp.mean + Ks @ alpha
            v = solve_triangular(L, Ks.T, lower=True, check_finite=False)
            var = np.maximum(hyp.amplitude - np.sum(v * v, 0), 0.0)
            mus.append(self.y_mean + self.y_scale * mu)
            vs.append(self.y_scale**2 * var)
        return np.array(mus), np.array(vs)

    def predict(self, Xs) -> tuple[np.ndarray, np.ndarray]:
        """Mean and variance of the sample mixture."""
        mus, vs = self.predict_samples(Xs)
        mean = mus.mean(0)
        var = np.maximum((vs + mus**2).mean(0) - mean**2, 0.0)
        return mean, var

    @property
    def noise(self) -> np.ndarray:
        return np.array([h.noise for h in self.samples]) * self.y_scale**2


def gp_fit(
    X, y, rng: np.random.Generator, n_samples: int = 10, burn_in: int = 20, init=None, fixed_noise: float | None = None
) -> GpModel:
    """Fit by slice sampling the hyperparameter posterior.

    ``fixed_noise`` (in standardized output units) pins the noise variance
    instead of sampling it, e.g. for data known to be noiseless.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if X.shape[0] < 2 or y.shape != (X.shape[0],):
        raise ValueError("need at least two observations with matching outputs")
    if not np.all(np.isfinite(y)):
        raise ValueError("outputs must be finite")
    y_mean = float(y.mean())
    y_scale = float(y.std())
    if y_scale < 1e-12:
        y_scale = 1.0
    ys = (y - y_mean) / y_scale
    dim = X.shape[1]
    h0 = np.concatenate([np.zeros(dim), [0.0, math.log(1e-6), 0.0]]) if init is None else np.asarray(init, float)
    active = None
    if fixed_noise is not None:
        if not fixed_noise > 0:
            raise ValueError("fixed noise must be positive")
        h0 = h0.copy()
        h0[-2] = math.log(fixed_noise)
        active = [i for i in range(len(h0)) if i != len(h0) - 2]

    def logp(h):
        lp = log_prior(h, dim)
        if not np.isfinite(lp):
            return -np.inf
        return lp + log_marginal_likelihood(h, X, ys)

    if not np.isfinite(logp(h0)):
        raise GpFitError("initial hyperparameters have zero posterior density")
    chain = slice_sample(logp, h0, rng, burn_in + n_samples, active=active)[burn_in:]
    samples = tuple(Hyper.from_vector(h) for h in chain)
    factors = tuple(_factor(X, ys, hyp) for hyp in samples)
    return GpModel(X.copy(), y.copy(), y_mean, y_scale, samples, factors)
