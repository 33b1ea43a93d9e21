"""Langevin kernels for TV-regularised linear inverse problems.

Canonical-space kernels (MYULA, SK-ROCK) sample ``x`` from the
Moreau-Yosida smoothed posterior. The latent-space kernels (SGS, ls-MYULA,
ls-SK-ROCK) run on the auxiliary variable ``z`` of the split model
``exp(-f_y(x) - theta g(z) - ||x - z||^2 / (2 rho2))`` and map back to ``x``
through the Gaussian conditional ``x | y, z``.

Each step function is usable on its own; the kernel classes bundle a step
with its model, step size and noise streams so :func:`run_chain` can drive
any of them.
"""
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import forward_models as fm
from .priors import PriorDescriptor, my_envelope_grad

DEFAULT_ETA = 0.05
DEFAULT_STAGES = 15
SAMPLERS = ("myula", "skrock", "sgs", "ls-myula", "ls-skrock")


class SamplerError(RuntimeError):
    """Numerical failure inside a kernel (non-finite drift or iterate)."""


# --- constants and step sizes ----------------------------------------------

def chebyshev_T(n, x):
    """First-kind Chebyshev values ``T_0(x) .. T_n(x)`` by the three-term recursion."""
    vals = [1.0, x]
    for _ in range(2, n + 1):
        vals.append(2.0 * x * vals[-1] - vals[-2])
    return vals[: n + 1]


def chebyshev_dT(n, x):
    """Derivatives ``T_0'(x) .. T_n'(x)``: ``T'_{k+1} = 2 T_k + 2x T'_k - T'_{k-1}``."""
    t = chebyshev_T(n, x)
    d = [0.0, 1.0]
    for k in range(1, n):
        d.append(2.0 * t[k] + 2.0 * x * d[k] - d[k - 1])
    return d[: n + 1]


@dataclass(frozen=True)
class ChebyshevCoeffs:
    s: int
    eta: float
    l_s: float
    omega0: float
    omega1: float
    mu: tuple  # mu[j-1] for stages j = 1..s
    nu: tuple
    k: tuple

    @property
    def mu1(self):
        return self.mu[0]

    @property
    def nu1(self):
        return self.nu[0]

    @property
    def k1(self):
        return self.k[0]


def chebyshev_coeffs(s, eta=DEFAULT_ETA):
    s = int(s)
    if s < 2:
        raise ValueError(f"SK-ROCK needs at least 2 stages, got {s}")
    l_s = (s - 0.5) ** 2 * (2.0 - 4.0 / 3.0 * eta) - 1.5
    w0 = 1.0 + eta / s**2
    T = chebyshev_T(s, w0)
    dT = chebyshev_dT(s, w0)
    w1 = T[s] / dT[s]
    mu = [w1 / w0]
    nu = [s * w1 / 2.0]
    k = [s * w1 / w0]
    for j in range(2, s + 1):
        mu.append(2.0 * w1 * T[j - 1] / T[j])
        nu.append(2.0 * w0 * T[j - 1] / T[j])
        k.append(1.0 - nu[-1])
    return ChebyshevCoeffs(s, eta, l_s, w0, w1, tuple(mu), tuple(nu), tuple(k))


@dataclass(frozen=True)
class LipschitzInfo:
    L_f: float
    lam: float
    rho2: float = None

    @property
    def L(self):
        return 1.0 / self.lam + self.L_f

    @property
    def L_a(self):
        if self.rho2 is None:
            raise ValueError("L_a needs rho2")
        return 1.0 / self.lam + 1.0 / (self.rho2 + 1.0 / self.L_f)


def stepsize_myula(L):
    if not L > 0:
        raise ValueError("Lipschitz constant must be positive")
    return 1.0 / L


def stepsize_skrock(coeffs, lip, frac=1.0):
    if not lip > 0:
        raise ValueError("Lipschitz constant must be positive")
    if not 0.0 < frac <= 1.0:
        raise ValueError("step fraction must lie in (0, 1]")
    return frac * coeffs.l_s / lip


# --- model bundle ---------------------------------------------------------

@dataclass(frozen=True)
class ModelParams:
    """Hyperparameters of the (possibly augmented) posterior."""

    theta: float
    lam: float
    rho2: float = None
    prior_kind: str = "tv"

    @property
    def prior(self):
        return PriorDescriptor(self.theta, self.lam, self.prior_kind)

    def lipschitz(self, obs, op):
        return LipschitzInfo(fm.lipschitz_f(obs, op), self.lam, self.rho2)


def _finite(a, what):
    if not np.all(np.isfinite(a)):
        raise SamplerError(f"non-finite {what}")
    return a


def canonical_grad_logpi(obs, op, params):
    """``x -> grad log p^lambda(x | y, theta)``."""
    prior = params.prior

    def grad(x):
        _finite(x, "iterate")
        return -fm.likelihood_grad(x, obs, op) - my_envelope_grad(x, prior)

    return grad


def latent_drift(z, obs, op, params):
    """Negative latent log-density gradient and the conditional mean at ``z``.

    Returns ``(Lambda(z), mu(z))`` with
    ``Lambda(z) = (z - prox(z)) / lam + (z - E[x | y, z]) / rho2``.
    """
    _finite(z, "iterate")
    mu = fm.conditional_mean(z, obs, op, params.rho2)
    drift = my_envelope_grad(z, params.prior) + (z - mu) / params.rho2
    return drift, mu


# --- single steps -----------------------------------------------------------

def myula_step(x, grad_logpi, delta, n):
    if not delta > 0:
        raise ValueError("step size must be positive")
    g = _finite(grad_logpi(x), "gradient")
    return x + delta * g + math.sqrt(2.0 * delta) * n.normal(np.shape(x))


def _skrock_core(x0, grad_logpi, coeffs, delta, xi, k1_noise=None):
    # xi ~ N(0, 2 delta I)
    k1 = coeffs.k1 if k1_noise is None else k1_noise
    g = _finite(grad_logpi(x0 + coeffs.nu1 * xi), "gradient at stage 1")
    x_prev, x_cur = x0, x0 + coeffs.mu1 * delta * g + k1 * xi
    for j in range(2, coeffs.s + 1):
        g = _finite(grad_logpi(x_cur), f"gradient at stage {j}")
        x_next = coeffs.mu[j - 1] * delta * g + coeffs.nu[j - 1] * x_cur + coeffs.k[j - 1] * x_prev
        x_prev, x_cur = x_cur, x_next
    return x_cur


def skrock_step(x, grad_logpi, coeffs, delta, n):
    """One SK-ROCK iterate: exactly ``coeffs.s`` gradient evaluations."""
    if not delta > 0:
        raise ValueError("step size must be positive")
    xi = math.sqrt(2.0 * delta) * n.normal(np.shape(x))
    return _skrock_core(np.asarray(x, dtype=np.float64), grad_logpi, coeffs, delta, xi)


@dataclass
class ChainState:
    """Kernel state. ``x`` is the x-space output of the last iteration
    (the iterate itself for canonical kernels, the conditional draw for SGS,
    the conditional mean for the latent kernels)."""

    z: np.ndarray
    x_grad: np.ndarray = None
    iter: int = 0
    x: np.ndarray = None

    def __post_init__(self):
        if self.x is None:
            self.x = self.x_grad if self.x_grad is not None else self.z


def _check_latent(params):
    if params.rho2 is None or not params.rho2 > 0:
        raise ValueError("latent-space kernels need rho2 > 0")


def sgs_step(state, obs, op, params, delta, n, cond_n=None):
    """Split Gibbs: exact draw of ``x | z``, then a MYULA move of ``z | x``.

    ``cond_n`` feeds the conditional draw; pass :class:`~proxmcmc.grid.ZeroNoise`
    to replace the draw by the conditional mean.
    """
    _check_latent(params)
    cond_n = n if cond_n is None else cond_n
    z = state.z
    x = fm.conditional_sample(z, obs, op, params.rho2, cond_n)
    drift = my_envelope_grad(z, params.prior) + (z - x) / params.rho2
    _finite(drift, "drift")
    z_new = z - delta * drift + math.sqrt(2.0 * delta) * n.normal(z.shape)
    return ChainState(z=z_new, x_grad=x, iter=state.iter + 1, x=x)


def ls_myula_step(state, obs, op, params, delta, n):
    _check_latent(params)
    z = state.z
    drift, mu = latent_drift(z, obs, op, params)
    _finite(drift, "drift")
    z_new = z - delta * drift + math.sqrt(2.0 * delta) * n.normal(z.shape)
    return ChainState(z=z_new, x_grad=mu, iter=state.iter + 1, x=mu)


def ls_skrock_step(state, obs, op, params, coeffs, delta, n, literal_k1_squared=False):
    """SK-ROCK on the latent marginal; conditional means recorded per stage.

    ``literal_k1_squared`` uses ``k1**2`` as the first-stage noise
    coefficient instead of ``k1``; it exists only for comparison runs.
    """
    _check_latent(params)
    means = []

    def grad_logpi(z):
        drift, mu = latent_drift(z, obs, op, params)
        means.append(mu)
        return -drift

    xi = math.sqrt(2.0 * delta) * n.normal(state.z.shape)
    k1 = coeffs.k1**2 if literal_k1_squared else None
    z_new = _skrock_core(state.z, grad_logpi, coeffs, delta, xi, k1_noise=k1)
    return ChainState(z=z_new, x_grad=means[-1], iter=state.iter + 1, x=means[-1])


# --- kernels ----------------------------------------------------------------

class Kernel:
    name = None
    evals_per_step = 1
    latent = False

    def __init__(self, obs, op, params, delta, noise):
        self.obs = obs
        self.op = op
        self.params = params
        self.delta = float(delta)
        self.noise = noise
        if not self.delta > 0:
            raise ValueError("step size must be positive")

    def initial_state(self, x0=None):
        """Chain start; defaults to ``A^T y``."""
        x0 = self.op.adjoint(self.obs.y) if x0 is None else np.array(x0, dtype=np.float64)
        if self.latent:
            mu = fm.conditional_mean(x0, self.obs, self.op, self.params.rho2)
            return ChainState(z=x0, x_grad=mu, iter=0, x=mu)
        return ChainState(z=x0, iter=0)

    def conditional_mean(self, z):
        return fm.conditional_mean(z, self.obs, self.op, self.params.rho2)

    def step(self, state):
        raise NotImplementedError

    def describe(self):
        return {"sampler": self.name, "delta": self.delta, "evals_per_step": self.evals_per_step}


class MYULA(Kernel):
    name = "myula"

    def __init__(self, obs, op, params, delta, noise):
        super().__init__(obs, op, params, delta, noise)
        self._grad = canonical_grad_logpi(obs, op, params)

    def step(self, state):
        x = myula_step(state.z, self._grad, self.delta, self.noise)
        return ChainState(z=x, iter=state.iter + 1)


class SKROCK(Kernel):
    name = "skrock"

    def __init__(self, obs, op, params, delta, noise, coeffs):
        super().__init__(obs, op, params, delta, noise)
        self.coeffs = coeffs
        self.evals_per_step = coeffs.s
        self._grad = canonical_grad_logpi(obs, op, params)

    def step(self, state):
        x = skrock_step(state.z, self._grad, self.coeffs, self.delta, self.noise)
        return ChainState(z=x, iter=state.iter + 1)

    def describe(self):
        return {**super().describe(), "s": self.coeffs.s, "l_s": self.coeffs.l_s}


class SGS(Kernel):
    name = "sgs"
    latent = True

    def __init__(self, obs, op, params, delta, noise, cond_noise=None):
        super().__init__(obs, op, params, delta, noise)
        _check_latent(params)
        self.cond_noise = noise.substream(1) if cond_noise is None else cond_noise

    def step(self, state):
        return sgs_step(state, self.obs, self.op, self.params, self.delta, self.noise, self.cond_noise)


class LsMYULA(Kernel):
    name = "ls-myula"
    latent = True

    def __init__(self, obs, op, params, delta, noise):
        super().__init__(obs, op, params, delta, noise)
        _check_latent(params)

    def step(self, state):
        return ls_myula_step(state, self.obs, self.op, self.params, self.delta, self.noise)


class LsSKROCK(Kernel):
    name = "ls-skrock"
    latent = True

    def __init__(self, obs, op, params, delta, noise, coeffs, literal_k1_squared=False):
        super().__init__(obs, op, params, delta, noise)
        _check_latent(params)
        self.coeffs = coeffs
        self.evals_per_step = coeffs.s
        self.literal_k1_squared = literal_k1_squared

    def step(self, state):
        return ls_skrock_step(state, self.obs, self.op, self.params, self.coeffs, self.delta,
                              self.noise, self.literal_k1_squared)

    def describe(self):
        return {**super().describe(), "s": self.coeffs.s, "l_s": self.coeffs.l_s}


def default_stepsize(name, lip, coeffs=None, frac=1.0):
    """Step-size rule per sampler: 1/L, 1/L_a, or frac * l_s / (L or L_a)."""
    if name == "myula":
        return stepsize_myula(lip.L)
    if name in ("sgs", "ls-myula"):
        return stepsize_myula(lip.L_a)
    if name == "skrock":
        return stepsize_skrock(coeffs, lip.L, frac)
    if name == "ls-skrock":
        return stepsize_skrock(coeffs, lip.L_a, frac)
    raise ValueError(f"unknown sampler {name!r}")


def make_kernel(name, obs, op, params, noise, s=DEFAULT_STAGES, delta_frac=1.0, delta=None,
                eta=DEFAULT_ETA, literal_k1_squared=False):
    if name not in SAMPLERS:
        raise ValueError(f"unknown sampler {name!r}; choose from {SAMPLERS}")
    coeffs = chebyshev_coeffs(s, eta) if name in ("skrock", "ls-skrock") else None
    if delta is None:
        delta = default_stepsize(name, params.lipschitz(obs, op), coeffs, delta_frac)
    if name == "myula":
        return MYULA(obs, op, params, delta, noise)
    if name == "skrock":
        return SKROCK(obs, op, params, delta, noise, coeffs)
    if name == "sgs":
        return SGS(obs, op, params, delta, noise)
    if name == "ls-myula":
        return LsMYULA(obs, op, params, delta, noise)
    return LsSKROCK(obs, op, params, delta, noise, coeffs, literal_k1_squared)


# --- driver -----------------------------------------------------------------

class ObserverError(RuntimeError):
    pass


@dataclass
class ChainResult:
    state: ChainState
    n_iters: int
    n_retained: int
    grad_evals: int
    wall_time: float
    observers: list = field(default_factory=list)


def run_chain(kernel, init, n_iters, burn_in=0, thinning=1, observers=()):
    """Run ``n_iters`` steps and hand retained iterates to ``observers``.

    Iterate ``i`` (1-based) is retained when ``i > burn_in`` and
    ``(i - burn_in - 1) % thinning == 0``. Each observer is called as
    ``observer(i, state)``.
    """
    n_iters = int(n_iters)
    burn_in = int(burn_in)
    thinning = int(thinning)
    if not n_iters > burn_in >= 0:
        raise ValueError("need n_iters > burn_in >= 0")
    if thinning < 1:
        raise ValueError("thinning must be >= 1")
    state = init if isinstance(init, ChainState) else kernel.initial_state(init)
    retained = 0
    t0 = time.perf_counter()
    for i in range(1, n_iters + 1):
        state = kernel.step(state)
        if i > burn_in and (i - burn_in - 1) % thinning == 0:
            retained += 1
            for obs in observers:
                try:
                    obs(i, state)
                except Exception as exc:
                    raise ObserverError(f"observer {obs!r} failed at iteration {i}: {exc}") from exc
    return ChainResult(state=state, n_iters=n_iters, n_retained=retained,
                       grad_evals=n_iters * kernel.evals_per_step,
                       wall_time=time.perf_counter() - t0, observers=list(observers))


__all__ = [
    "SamplerError", "ChebyshevCoeffs", "LipschitzInfo", "ModelParams", "ChainState",
    "chebyshev_T", "chebyshev_dT", "chebyshev_coeffs", "stepsize_myula", "stepsize_skrock",
    "canonical_grad_logpi", "latent_drift", "myula_step", "skrock_step", "sgs_step",
    "ls_myula_step", "ls_skrock_step", "Kernel", "MYULA", "SKROCK", "SGS", "LsMYULA",
    "LsSKROCK", "make_kernel", "default_stepsize", "run_chain", "ChainResult",
]
