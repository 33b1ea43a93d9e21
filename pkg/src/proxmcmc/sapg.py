"""Empirical Bayes estimation of ``theta`` and ``rho2`` by stochastic approximation.

Maximises the evidence ``p(y | theta, rho2)`` of the split model with a
projected stochastic gradient ascent whose gradients come from Fisher's
identity, estimated with one (or a few) MCMC draws per outer iteration.
The inner chain is ls-MYULA on ``z`` with an exact Gaussian draw of ``x``;
both are warm-started across outer iterations.
"""
import csv
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import forward_models as fm
from .priors import PriorDescriptor
from .samplers import ChainState, LipschitzInfo, ls_myula_step, SamplerError


class SapgError(RuntimeError):
    """Raised when the ascent produces a non-finite iterate; ``trace`` holds the partial run."""

    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace


def gamma_schedule(i, c0, p=0.8):
    if i < 1:
        raise ValueError("schedule index starts at 1")
    if not c0 > 0:
        raise ValueError("C0 must be positive")
    if not 0.6 <= p <= 0.9:
        raise ValueError(f"exponent p must lie in [0.6, 0.9], got {p}")
    return c0 * float(i) ** (-p)


def weight(nn, n0, n1, gamma_nn):
    if nn < n0:
        return 0.0
    if nn <= n1:
        return 1.0
    return gamma_nn


def _project(v, lo, hi):
    return min(max(v, lo), hi)


def _ascent(v, grad, gamma, bounds, domain):
    if domain == "linear":
        return _project(v + gamma * grad, *bounds)
    if domain == "log":
        # ascent on log(v): the chain rule multiplies the gradient by v
        step = gamma * v * grad
        lo, hi = bounds
        # clamp again after exp: exp(log(hi)) can round to just above hi
        return _project(math.exp(_project(math.log(v) + step, math.log(lo), math.log(hi))), lo, hi)
    raise ValueError(f"unknown update domain {domain!r}")


def theta_update(theta, g_values, gamma, d, bounds, alpha=1.0, domain="linear"):
    """One projected ascent step on ``theta``.

    ``g_values`` are the unweighted penalties ``g(Z_k)`` of the inner draws
    (the non-smooth prior, not its envelope). ``domain="log"`` takes the
    step on ``log(theta)`` instead, projecting onto the log of the bounds.
    """
    g_values = np.atleast_1d(np.asarray(g_values, dtype=np.float64))
    if g_values.size == 0:
        raise ValueError("theta_update needs at least one sample")
    grad = float(np.mean(d / (alpha * theta) - g_values))
    return _ascent(theta, grad, gamma, bounds, domain)


def rho2_update(rho2, sq_dists, gamma, d, bounds, domain="linear"):
    """One projected ascent step on ``rho2`` from the values ``||X_k - Z_k||^2``."""
    sq_dists = np.atleast_1d(np.asarray(sq_dists, dtype=np.float64))
    if sq_dists.size == 0:
        raise ValueError("rho2_update needs at least one sample")
    grad = float(np.mean(sq_dists / (2.0 * rho2**2) - d / (2.0 * rho2)))
    return _ascent(rho2, grad, gamma, bounds, domain)


def paired_sq_dists(xs, zs):
    if len(xs) != len(zs):
        raise ValueError(f"mismatched pair lengths: {len(xs)} X vs {len(zs)} Z")
    return [float(np.sum((np.asarray(x) - np.asarray(z)) ** 2)) for x, z in zip(xs, zs)]


@dataclass
class SapgConfig:
    theta0: float
    rho2_0: float
    theta_bounds: tuple = (1e-4, 1.0)
    rho2_bounds: tuple = None  # default (sigma2 / 100, 20 sigma2)
    c0: float = None  # default 10 / d
    c0_rho2: float = None  # default 10 / d
    p: float = 0.8
    n_inner: int = 1
    max_iter: int = 500
    n0: int = None  # default 10% of max_iter
    n1: int = None  # default 50% of max_iter
    beta: float = 1e-4
    lam: float = None  # default sigma2
    rao_blackwell: bool = False
    warmup: int = 0  # ls-MYULA steps at (theta0, rho2_0) before the first update
    domain: str = "log"
    prior_kind: str = "tv"
    alpha: float = 1.0

    def resolved(self, obs, op):
        """Copy with every ``None`` default filled in for this observation."""
        d = op.size
        out = SapgConfig(**asdict(self))
        if out.rho2_bounds is None:
            out.rho2_bounds = (obs.sigma2 / 100.0, 20.0 * obs.sigma2)
        if out.c0 is None:
            out.c0 = 10.0 / d
        if out.c0_rho2 is None:
            out.c0_rho2 = 10.0 / d
        if out.n0 is None:
            out.n0 = int(round(0.1 * out.max_iter))
        if out.n1 is None:
            out.n1 = int(round(0.5 * out.max_iter))
        if out.lam is None:
            out.lam = obs.sigma2
        out.theta_bounds = tuple(float(b) for b in out.theta_bounds)
        out.rho2_bounds = tuple(float(b) for b in out.rho2_bounds)
        out.validate()
        return out

    def validate(self):
        tlo, thi = self.theta_bounds
        rlo, rhi = self.rho2_bounds
        if not 0 < tlo < thi:
            raise ValueError("need 0 < theta_min < theta_max")
        if not 0 < rlo < rhi:
            raise ValueError("need 0 < rho2_min < rho2_max")
        if not 0 <= self.n0 <= self.n1 <= self.max_iter:
            raise ValueError("need 0 <= N0 <= N1 <= max_iter")
        if not (self.c0 > 0 and self.c0_rho2 > 0):
            raise ValueError("step scales must be positive")
        if not 0.6 <= self.p <= 0.9:
            raise ValueError("exponent p must lie in [0.6, 0.9]")
        if self.domain not in ("linear", "log"):
            raise ValueError(f"unknown update domain {self.domain!r}")
        if self.warmup < 0:
            raise ValueError("warmup must be non-negative")
        if self.n_inner < 1:
            raise ValueError("need at least one inner sample")
        if not (tlo <= self.theta0 <= thi and rlo <= self.rho2_0 <= rhi):
            raise ValueError("initial values must lie inside the projection sets")


@dataclass
class SapgTrace:
    theta: list = field(default_factory=list)
    rho2: list = field(default_factory=list)
    weights: list = field(default_factory=list)
    theta_bar: list = field(default_factory=list)
    rho2_bar: list = field(default_factory=list)
    rel_theta: list = field(default_factory=list)
    rel_rho2: list = field(default_factory=list)
    stop_iter: int = None
    converged: bool = False

    @property
    def theta_final(self):
        return self.theta_bar[-1] if self.theta_bar and not math.isnan(self.theta_bar[-1]) else self.theta[-1]

    @property
    def rho2_final(self):
        return self.rho2_bar[-1] if self.rho2_bar and not math.isnan(self.rho2_bar[-1]) else self.rho2[-1]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "theta", "rho2", "weight", "theta_bar", "rho2_bar",
                        "rel_change_theta", "rel_change_rho2"])
            for k in range(len(self.theta)):
                w.writerow([k, repr(self.theta[k]), repr(self.rho2[k]), repr(self.weights[k]),
                            repr(self.theta_bar[k]), repr(self.rho2_bar[k]),
                            repr(self.rel_theta[k]), repr(self.rel_rho2[k])])


class _Averager:
    def __init__(self):
        self.sw = 0.0
        self.st = 0.0
        self.sr = 0.0

    def push(self, w, theta, rho2):
        self.sw += w
        self.st += w * theta
        self.sr += w * rho2
        if self.sw == 0:
            return float("nan"), float("nan")
        return self.st / self.sw, self.sr / self.sw


def _rel(new, old):
    if math.isnan(new) or math.isnan(old) or old == 0:
        return float("nan")
    return abs(new - old) / abs(old)


def sapg_run(config, obs, op, x0=None, noise=None, callback=None):
    """Run the SAPG loop; returns a :class:`SapgTrace`.

    The chain starts at ``x0`` (``A^T y`` by default) for both ``X`` and
    ``Z``. ``noise`` drives the ls-MYULA moves; the exact ``x | z`` draws use
    ``noise.substream(1)``. The ls-MYULA step is recomputed from the current
    ``rho2`` at every outer iteration.
    """
    if noise is None:
        raise ValueError("sapg_run needs a NoiseSource")
    cfg = config.resolved(obs, op)
    d = op.size
    cond_noise = noise.substream(1)
    L_f = fm.lipschitz_f(obs, op)

    z = op.adjoint(obs.y) if x0 is None else np.array(x0, dtype=np.float64)
    state = ChainState(z=z, x_grad=z, x=z)
    theta, rho2 = float(cfg.theta0), float(cfg.rho2_0)

    trace = SapgTrace()
    avg = _Averager()

    def record(k, th, r2):
        g = gamma_schedule(k, cfg.c0, cfg.p) if k >= 1 else cfg.c0
        w = weight(k, cfg.n0, cfg.n1, g)
        tb, rb = avg.push(w, th, r2)
        trace.rel_theta.append(_rel(tb, trace.theta_bar[-1]) if trace.theta_bar else float("nan"))
        trace.rel_rho2.append(_rel(rb, trace.rho2_bar[-1]) if trace.rho2_bar else float("nan"))
        trace.theta.append(th)
        trace.rho2.append(r2)
        trace.weights.append(w)
        trace.theta_bar.append(tb)
        trace.rho2_bar.append(rb)

    record(0, theta, rho2)
    if cfg.warmup:
        prior0 = PriorDescriptor(theta, cfg.lam, cfg.prior_kind, cfg.alpha)
        delta0 = 1.0 / LipschitzInfo(L_f, cfg.lam, rho2).L_a
        try:
            for _ in range(cfg.warmup):
                state = _inner_step(state, obs, op, prior0, rho2, delta0, noise)
        except (SamplerError, ValueError, FloatingPointError) as exc:
            raise SapgError(f"warm-up chain failed: {exc}", trace) from exc
    for i in range(cfg.max_iter):
        params_prior = PriorDescriptor(theta, cfg.lam, cfg.prior_kind, cfg.alpha)
        delta = 1.0 / LipschitzInfo(L_f, cfg.lam, rho2).L_a
        g_vals, sq = [], []
        try:
            for _ in range(cfg.n_inner):
                state = _inner_step(state, obs, op, params_prior, rho2, delta, noise)
                z = state.z
                g_vals.append(params_prior.g(z))
                if cfg.rao_blackwell:
                    mu = fm.conditional_mean(z, obs, op, rho2)
                    sq.append(float(np.sum((mu - z) ** 2)) + fm.conditional_trace_cov(obs, op, rho2))
                else:
                    x = fm.conditional_sample(z, obs, op, rho2, cond_noise)
                    sq.append(float(np.sum((x - z) ** 2)))
        except (SamplerError, ValueError, FloatingPointError) as exc:
            raise SapgError(f"inner chain failed at outer iteration {i + 1}: {exc}", trace) from exc

        g1 = gamma_schedule(i + 1, cfg.c0, cfg.p)
        g2 = gamma_schedule(i + 1, cfg.c0_rho2, cfg.p)
        theta_new = theta_update(theta, g_vals, g1, d, cfg.theta_bounds, cfg.alpha, cfg.domain)
        rho2_new = rho2_update(rho2, sq, g2, d, cfg.rho2_bounds, cfg.domain)
        if not (math.isfinite(theta_new) and math.isfinite(rho2_new)):
            raise SapgError(f"non-finite hyperparameter at outer iteration {i + 1}", trace)
        theta, rho2 = theta_new, rho2_new
        record(i + 1, theta, rho2)
        if callback is not None:
            callback(i + 1, theta, rho2, state)
        # stopping is only meaningful once the weighted averages exist
        rt, rr = trace.rel_theta[-1], trace.rel_rho2[-1]
        if i + 1 > cfg.n0 and rt < cfg.beta and rr < cfg.beta:
            trace.stop_iter = i + 1
            trace.converged = True
            break
    if trace.stop_iter is None:
        trace.stop_iter = cfg.max_iter
    trace.config = cfg
    return trace


def _inner_step(state, obs, op, prior, rho2, delta, noise):
    # ls-MYULA move on z; the step function wants a ModelParams-like object
    params = _Params(prior, rho2)
    return ls_myula_step(state, obs, op, params, delta, noise)


@dataclass(frozen=True)
class _Params:
    prior: PriorDescriptor
    rho2: float


__all__ = [
    "SapgError", "SapgConfig", "SapgTrace", "gamma_schedule", "weight", "theta_update",
    "rho2_update", "paired_sq_dists", "sapg_run",
]
