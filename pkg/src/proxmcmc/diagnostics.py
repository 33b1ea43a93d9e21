"""Streaming estimators, mixing diagnostics and a MAP baseline.

Chains are never stored in full. Observers passed to
:func:`proxmcmc.samplers.run_chain` accumulate running means, multiscale
pixel-wise variances and scalar traces; the ACF/ESS machinery works on the
resulting :class:`ScalarSeries`.
"""
import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import forward_models as fm
from . import grid
from .priors import prox_tv, prox_l1, tv, l1

STD_FACTORS = (1, 2, 4, 8)
ESS_CUTOFF = 0.05


class DiagnosticsError(ValueError):
    pass


# --- streaming moments --------------------------------------------------------

class RunningStats:
    """Welford accumulator over grids, optionally block-averaging each sample first."""

    def __init__(self, factor=1):
        self.factor = int(factor)
        self.count = 0
        self.mean = None
        self.M2 = None

    def push(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.factor > 1:
            x = grid.downsample_by_averaging(x, self.factor)
        self.count += 1
        if self.mean is None:
            self.mean = x.copy()
            self.M2 = np.zeros_like(x)
            return
        d = x - self.mean
        self.mean += d / self.count
        self.M2 += d * (x - self.mean)

    __call__ = push

    def merge(self, other):
        """Combine with another accumulator (Chan et al. pairwise update)."""
        if other.factor != self.factor:
            raise DiagnosticsError("cannot merge stats with different downsampling factors")
        out = RunningStats(self.factor)
        if self.count == 0 or other.count == 0:
            src = self if other.count == 0 else other
            out.count = src.count
            out.mean = None if src.mean is None else src.mean.copy()
            out.M2 = None if src.M2 is None else src.M2.copy()
            return out
        n = self.count + other.count
        d = other.mean - self.mean
        out.count = n
        out.mean = self.mean + d * (other.count / n)
        out.M2 = self.M2 + other.M2 + d * d * (self.count * other.count / n)
        return out

    def variance(self):
        if self.count < 2:
            raise DiagnosticsError("variance needs at least two samples")
        return np.maximum(self.M2, 0.0) / (self.count - 1)

    def std(self):
        return np.sqrt(self.variance())


class MultiscaleStats:
    """One :class:`RunningStats` per downsampling factor."""

    def __init__(self, factors=STD_FACTORS):
        self.stats = {int(f): RunningStats(f) for f in factors}

    def push(self, x):
        for s in self.stats.values():
            s.push(x)

    def __getitem__(self, factor):
        return self.stats[int(factor)]


def pixelwise_std(stats, factor=1):
    """Pixel-wise std of the ``factor``-downsampled sample stream."""
    if int(factor) not in STD_FACTORS:
        raise DiagnosticsError(f"factor must be one of {STD_FACTORS}")
    if isinstance(stats, MultiscaleStats):
        stats = stats[factor]
    if stats.factor != int(factor):
        raise DiagnosticsError(f"stats were accumulated at factor {stats.factor}, not {factor}")
    if stats.count < 2:
        raise DiagnosticsError("pixel-wise std needs at least two samples")
    return stats.std()


def mse(estimate, truth):
    estimate = np.asarray(estimate, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if estimate.shape != truth.shape:
        raise DiagnosticsError(f"shape mismatch: {estimate.shape} vs {truth.shape}")
    return float(np.mean((estimate - truth) ** 2))


# --- chain observers --------------------------------------------------------------

def x_output(kernel, state):
    """The x-space quantity a chain reports: the iterate for canonical
    kernels, the conditional draw for SGS, the conditional mean for the
    latent kernels."""
    return state.x


class PosteriorMeanObserver:
    """Running posterior-mean estimate.

    Latent chains average ``E[x | y, z_i]`` (Rao-Blackwellised); canonical
    chains average the iterates themselves. Optionally tracks the MSE of the
    running mean against ``truth`` and multiscale pixel-wise stds of the
    x-output.
    """

    def __init__(self, kernel, truth=None, std_factors=STD_FACTORS):
        self.kernel = kernel
        self.stats = RunningStats()
        self.truth = None if truth is None else np.asarray(truth, dtype=np.float64)
        self.mse_trace = []
        self.multiscale = MultiscaleStats(std_factors) if std_factors else None

    def __call__(self, i, state):
        if self.kernel.latent:
            h = self.kernel.conditional_mean(state.z)
        else:
            h = state.z
        self.stats.push(h)
        if self.truth is not None:
            self.mse_trace.append(mse(self.stats.mean, self.truth))
        if self.multiscale is not None:
            self.multiscale.push(self._draw(state))

    def _draw(self, state):
        # pixel-wise spread must come from draws of x, not from conditional means
        k = self.kernel
        if k.latent and k.name != "sgs":
            return fm.conditional_sample(state.z, k.obs, k.op, k.params.rho2, self._cond_noise())
        return state.x

    def _cond_noise(self):
        if not hasattr(self, "_cn"):
            self._cn = self.kernel.noise.substream(7)
        return self._cn


def rb_posterior_mean(observer):
    if observer.stats.count == 0:
        raise DiagnosticsError("no post-burn-in iterates were observed")
    return observer.stats.mean.copy()


class ScalarTrace:
    """Observer that records ``fn(state)`` at every retained iterate."""

    def __init__(self, fn, name, thinning=1, evals_per_entry=1):
        self.fn = fn
        self.values = []
        self.name = name
        self.thinning = thinning
        self.evals_per_entry = evals_per_entry

    def __call__(self, i, state):
        self.values.append(float(self.fn(state)))

    def series(self):
        return ScalarSeries(self.values, self.name, self.thinning, self.evals_per_entry)


class SampleWindow:
    """Keeps up to ``capacity`` x-outputs for post-hoc eigen-analysis."""

    def __init__(self, capacity, every=1):
        self.capacity = int(capacity)
        self.every = max(1, int(every))
        self.samples = []
        self._seen = 0

    def __call__(self, i, state):
        if self._seen % self.every == 0 and len(self.samples) < self.capacity:
            self.samples.append(np.array(state.x, copy=True))
        self._seen += 1


# --- scalar series and mixing ----------------------------------------------------

@dataclass
class ScalarSeries:
    values: list
    name: str = "series"
    thinning: int = 1
    evals_per_entry: int = 1
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        if not np.all(np.isfinite(self.values)):
            raise DiagnosticsError(f"series {self.name!r} has non-finite entries")

    def __len__(self):
        return self.values.size

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "grad_evals", self.name])
            for k, v in enumerate(self.values):
                w.writerow([k, (k + 1) * self.evals_per_entry, repr(float(v))])


def _values(series):
    return series.values if isinstance(series, ScalarSeries) else np.asarray(series, dtype=np.float64).ravel()


def acf(series, max_lag):
    """Biased autocorrelations ``rho_0 .. rho_max_lag`` via FFT."""
    v = _values(series)
    n = v.size
    max_lag = int(max_lag)
    if not 0 <= max_lag < n:
        raise DiagnosticsError(f"need 0 <= max_lag < series length ({n})")
    c = v - v.mean()
    c0 = float(np.dot(c, c)) / n
    if not c0 > 0:
        raise DiagnosticsError("zero-variance series has no autocorrelation")
    m = 1 << int(math.ceil(math.log2(2 * n)))
    f = np.fft.rfft(c, m)
    ac = np.fft.irfft(f * f.conj(), m)[: max_lag + 1] / n
    return ac / c0


def ess(series, max_lag=None):
    """``N / (1 + 2 sum_{k<K} rho_k)`` with ``K`` the first lag where ``rho_K < 0.05``."""
    v = _values(series)
    n = v.size
    if n < 2:
        raise DiagnosticsError("ESS needs at least two entries")
    max_lag = n - 1 if max_lag is None else min(int(max_lag), n - 1)
    rho = acf(v, max_lag)
    total = 0.0
    for k in range(1, max_lag + 1):
        if rho[k] < ESS_CUTOFF:
            break
        total += rho[k]
    return float(n / (1.0 + 2.0 * total))


def slowest_component(samples, max_iter=50, tol=1e-8, seed=0):
    """Project samples on the leading eigenvector of their empirical covariance.

    Power iteration, matrix-free: ``C v = X_c^T (X_c v) / (n - 1)``.
    Returns ``(series, eigenvalue, eigenvector)``; the eigenvector has the
    grid shape and its sign is fixed so that its largest-magnitude entry is
    positive.
    """
    if len(samples) < 2:
        raise DiagnosticsError("need at least two samples")
    shape = np.shape(samples[0])
    X = np.asarray(samples, dtype=np.float64).reshape(len(samples), -1)
    Xc = X - X.mean(axis=0)
    n = X.shape[0]
    if not np.any(Xc):
        raise DiagnosticsError("samples have zero variance")
    v = np.random.default_rng(seed).standard_normal(X.shape[1])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max(1, int(max_iter))):
        w = Xc.T @ (Xc @ v) / (n - 1)
        lam_new = float(np.dot(v, w))
        nrm = np.linalg.norm(w)
        if nrm == 0:
            raise DiagnosticsError("power iteration collapsed to zero")
        v = w / nrm
        done = lam > 0 and abs(lam_new - lam) <= tol * abs(lam_new)
        lam = lam_new
        if done:
            break
    if v[np.argmax(np.abs(v))] < 0:
        v = -v
    proj = X @ v
    c = proj - proj.mean()
    lam = float(np.dot(c, c) / (n - 1))
    return ScalarSeries(proj, "slowest_component"), lam, v.reshape(shape)


def project(samples, v):
    v = np.asarray(v, dtype=np.float64).ravel()
    return np.array([float(np.dot(np.ravel(s), v)) for s in samples])


# --- objectives ------------------------------------------------------------------

def _penalty(kind):
    if kind == "tv":
        return tv, prox_tv
    if kind == "l1":
        return l1, prox_l1
    raise DiagnosticsError(f"unknown prior kind {kind!r}")


def log_posterior(x, obs, op, theta, prior_kind="tv"):
    """Unnormalised ``log p(x | y, theta)`` with the non-smooth prior."""
    g, _ = _penalty(prior_kind)
    return -fm.likelihood_value(x, obs, op) - theta * g(x)


def map_estimate(obs, op, theta, prior_kind="tv", iters=500, tol=1e-8, x0=None, history=None):
    """Proximal gradient (ISTA) on ``f_y(x) + theta g(x)`` with step ``1/L_f``.

    Stops when the relative objective change falls below ``tol``. An
    objective increase beyond 1e-10 relative slack raises
    :class:`DiagnosticsError`. Pass a list as ``history`` to collect the
    objective values.
    """
    if int(iters) < 1:
        raise DiagnosticsError("iters must be >= 1")
    g, prox = _penalty(prior_kind)
    L_f = fm.lipschitz_f(obs, op)
    step = 1.0 / L_f
    x = op.adjoint(obs.y) if x0 is None else np.array(x0, dtype=np.float64)

    def objective(u):
        return fm.likelihood_value(u, obs, op) + theta * g(u)

    obj = objective(x)
    if history is not None:
        history.append(obj)
    for _ in range(int(iters)):
        v = x - step * fm.likelihood_grad(x, obs, op)
        x_new = prox(v, theta * step) if theta > 0 else v
        obj_new = objective(x_new)
        if history is not None:
            history.append(obj_new)
        if obj_new > obj + 1e-10 * max(1.0, abs(obj)):
            raise DiagnosticsError(f"MAP objective increased from {obj} to {obj_new}")
        rel = abs(obj - obj_new) / max(abs(obj), 1e-300)
        x, obj = x_new, obj_new
        if rel < tol:
            break
    return x


# --- emission --------------------------------------------------------------------

def write_image_with_sidecar(path, g):
    """Write a min-max normalised image and ``<path>.json`` with the scaling."""
    path = Path(path)
    g = np.asarray(g, dtype=np.float64)
    vmin, vmax = grid.write_image(path, g)
    meta = {"file": path.name, "shape": list(g.shape), "vmin": vmin, "vmax": vmax,
            "normalisation": "min-max to [0, 255]"}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=2))
    return meta


def write_table_csv(path, rows, columns=None):
    rows = list(rows)
    columns = columns or (list(rows[0].keys()) if rows else [])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        for r in rows:
            w.writerow({c: r.get(c, "") for c in columns})


__all__ = [
    "DiagnosticsError", "RunningStats", "MultiscaleStats", "pixelwise_std", "mse",
    "PosteriorMeanObserver", "rb_posterior_mean", "ScalarTrace", "SampleWindow",
    "ScalarSeries", "acf", "ess", "slowest_component", "project", "log_posterior",
    "map_estimate", "write_image_with_sidecar", "write_table_csv", "x_output",
]
