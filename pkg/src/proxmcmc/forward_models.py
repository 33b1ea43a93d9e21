"""Linear Gaussian observation models: circulant blur and random-mask inpainting.

Everything the samplers need from the likelihood lives here, including the
exact Gaussian conditional ``x | y, z, rho2`` whose precision is
``A^T A / sigma2 + I / rho2``. Both operators diagonalise that precision
(in Fourier space for the blur, in pixel space for the mask), so means,
draws and traces are all O(d log d) or O(d).
"""
from dataclasses import dataclass, field

import numpy as np

from . import grid
from .grid import GridError


class ForwardModelError(ValueError):
    pass


class LinearForwardOperator:
    """Interface shared by :class:`CirculantBlur` and :class:`Inpainting`."""

    kind = None

    def __init__(self, rows, cols):
        self.rows = int(rows)
        self.cols = int(cols)

    @property
    def shape(self):
        return (self.rows, self.cols)

    @property
    def size(self):
        return self.rows * self.cols

    def apply(self, x):
        raise NotImplementedError

    def adjoint(self, y):
        raise NotImplementedError

    def normal_eigenvalues(self):
        """Eigenvalues of ``A^T A`` in the operator's diagonalising basis."""
        raise NotImplementedError

    def solve_shifted(self, rhs, a, b):
        """Solve ``(a A^T A + b I) x = rhs`` (``rhs`` may carry batch axes)."""
        raise NotImplementedError

    @property
    def observed(self):
        """Boolean grid of observed components."""
        return np.ones(self.shape, dtype=bool)

    @property
    def n_observed(self):
        return int(self.observed.sum())

    def norm_sq(self):
        """Squared operator norm, i.e. the largest eigenvalue of ``A^T A``."""
        return float(np.max(self.normal_eigenvalues()))

    def trace_shifted_inverse(self, a, b):
        """``tr((a A^T A + b I)^{-1})``."""
        return float(np.sum(1.0 / (a * self.normal_eigenvalues() + b)))

    def describe(self):
        raise NotImplementedError


class CirculantBlur(LinearForwardOperator):
    """Convolution with periodic boundaries, diagonalised by the 2D DFT."""

    kind = "circulant_blur"

    def __init__(self, kernel, rows, cols):
        super().__init__(rows, cols)
        kernel = np.asarray(kernel, dtype=np.float64)
        kr, kc = kernel.shape
        if kr % 2 == 0 or kc % 2 == 0:
            raise ForwardModelError("blur kernel must have odd side lengths")
        if kr > rows or kc > cols:
            raise ForwardModelError("blur kernel larger than the image")
        self.kernel = kernel
        padded = np.zeros((rows, cols))
        hr, hc = kr // 2, kc // 2
        for i in range(kr):
            for j in range(kc):
                padded[(i - hr) % rows, (j - hc) % cols] += kernel[i, j]
        self.spectrum = grid.fft2(padded)
        self._abs2 = (self.spectrum * self.spectrum.conj()).real

    def apply(self, x):
        return grid.ifft2(self.spectrum * grid.fft2(x))

    def adjoint(self, y):
        return grid.ifft2(self.spectrum.conj() * grid.fft2(y))

    def normal_eigenvalues(self):
        return self._abs2

    def solve_shifted(self, rhs, a, b):
        return grid.ifft2(grid.fft2(rhs) / (a * self._abs2 + b))

    def describe(self):
        return {"kind": self.kind, "kernel_size": int(self.kernel.shape[0]), "rows": self.rows, "cols": self.cols}


class Inpainting(LinearForwardOperator):
    """Row subset of the identity, stored as a full-size boolean mask.

    ``apply`` returns a full grid with unobserved entries set to zero, so
    ``adjoint(apply(x)) == apply(x)``.
    """

    kind = "inpainting"

    def __init__(self, mask):
        mask = np.asarray(mask, dtype=bool)
        if mask.ndim != 2:
            raise ForwardModelError("mask must be 2D")
        super().__init__(*mask.shape)
        self.mask = mask
        self._w = mask.astype(np.float64)

    @property
    def observed(self):
        return self.mask

    def apply(self, x):
        return np.asarray(x, dtype=np.float64) * self._w

    def adjoint(self, y):
        return np.asarray(y, dtype=np.float64) * self._w

    def normal_eigenvalues(self):
        return self._w

    def solve_shifted(self, rhs, a, b):
        return np.asarray(rhs, dtype=np.float64) / (a * self._w + b)

    def describe(self):
        return {"kind": self.kind, "rows": self.rows, "cols": self.cols, "n_observed": self.n_observed}


def make_uniform_blur(size, rows, cols):
    size = int(size)
    if size < 1 or size % 2 == 0:
        raise ForwardModelError(f"blur size must be an odd positive integer, got {size}")
    if size > min(rows, cols):
        raise ForwardModelError("blur size exceeds image dimensions")
    return CirculantBlur(np.full((size, size), 1.0 / size**2), rows, cols)


def make_inpainting(fraction_observed, rows, cols, n):
    f = float(fraction_observed)
    if not (0.0 < f <= 1.0):
        raise ForwardModelError(f"observed fraction must lie in (0, 1], got {f}")
    d = int(rows) * int(cols)
    m = int(np.floor(f * d + 0.5))
    mask = np.zeros(d, dtype=bool)
    if m == d:
        mask[:] = True
    else:
        mask[n.rng.choice(d, size=m, replace=False)] = True
    return Inpainting(mask.reshape(rows, cols))


@dataclass
class Observation:
    """Noisy data ``y`` (zero at unobserved pixels) and its noise variance."""

    y: np.ndarray
    sigma2: float
    snr_db: float = float("nan")
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64)
        if not self.sigma2 > 0:
            raise ForwardModelError("noise variance must be positive")


def simulate_observation(x, op, snr_db, n):
    """``y = A x + noise`` with variance set by the blurred-signal SNR.

    ``sigma2 = Var(A x) / 10**(snr_db / 10)``, the variance taken over the
    observed components only.
    """
    x = grid.as_grid(x, "x")
    snr_db = float(snr_db)
    if not np.isfinite(snr_db):
        raise ForwardModelError("snr_db must be finite")
    ax = op.apply(x)
    obs_vals = ax[op.observed]
    var = float(obs_vals.var())
    if not var > 0:
        raise ForwardModelError("A x has zero variance; SNR is undefined")
    sigma2 = var / 10.0 ** (snr_db / 10.0)
    noise = n.field(*x.shape)
    y = (ax + np.sqrt(sigma2) * noise) * op.observed
    return Observation(y=y, sigma2=sigma2, snr_db=snr_db)


def likelihood_value(x, obs, op):
    r = (op.apply(x) - obs.y) * op.observed
    val = 0.5 * np.sum(r * r, axis=(-2, -1)) / obs.sigma2
    return float(val) if np.ndim(val) == 0 else val


def likelihood_grad(x, obs, op):
    return op.adjoint(op.apply(x) - obs.y) / obs.sigma2


def lipschitz_f(obs, op):
    """Lipschitz constant of the likelihood gradient, ``||A||^2 / sigma2``."""
    return op.norm_sq() / obs.sigma2


def _check_rho2(rho2):
    if not rho2 > 0:
        raise ForwardModelError(f"rho2 must be positive, got {rho2}")


def conditional_mean(z, obs, op, rho2, y=None):
    """Mean of ``x | y, z, rho2``: ``(A^T A/s2 + I/rho2)^{-1} (A^T y/s2 + z/rho2)``.

    ``y`` overrides ``obs.y`` (used by the perturbation sampler).
    """
    _check_rho2(rho2)
    y = obs.y if y is None else y
    rhs = op.adjoint(y) / obs.sigma2 + np.asarray(z, dtype=np.float64) / rho2
    return op.solve_shifted(rhs, 1.0 / obs.sigma2, 1.0 / rho2)


def conditional_sample(z, obs, op, rho2, n):
    """Exact draw from ``x | y, z, rho2`` by perturbation-optimisation.

    Perturbing the data by its own noise law and the coupling centre by
    ``N(0, rho2 I)`` and then solving for the mean gives a draw with
    covariance exactly ``Q^{-1}``.
    """
    _check_rho2(rho2)
    z = np.asarray(z, dtype=np.float64)
    eps_y = n.normal(z.shape)
    eps_z = n.normal(z.shape)
    y_pert = (obs.y + np.sqrt(obs.sigma2) * eps_y) * op.observed
    z_pert = z + np.sqrt(rho2) * eps_z
    return conditional_mean(z_pert, obs, op, rho2, y=y_pert)


def conditional_trace_cov(obs, op, rho2):
    """``tr(Q^{-1})`` for ``Q = A^T A / sigma2 + I / rho2``."""
    _check_rho2(rho2)
    return op.trace_shifted_inverse(1.0 / obs.sigma2, 1.0 / rho2)


__all__ = [
    "ForwardModelError", "GridError", "LinearForwardOperator", "CirculantBlur", "Inpainting",
    "Observation", "make_uniform_blur", "make_inpainting", "simulate_observation",
    "likelihood_value", "likelihood_grad", "lipschitz_f", "conditional_mean",
    "conditional_sample", "conditional_trace_cov",
]
