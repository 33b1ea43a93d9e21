"""Convex priors, their proximal maps and Moreau-Yosida envelopes.

The imaging prior is isotropic total variation with forward differences and
a replicate (Neumann) boundary. A separable l1 prior is also provided; it
has a closed-form prox and is what the scalar toy models use.
"""
from dataclasses import dataclass

import numpy as np

from . import _kernels

PROX_MAX_ITER = 200
PROX_TOL = 1e-5
# the envelope value is off the sampling path; solve it tightly so that finite
# differences of it are meaningful
ENVELOPE_MAX_ITER = 20000
ENVELOPE_TOL = 1e-12


class PriorError(ValueError):
    pass


def gradient_field(x):
    """Forward differences ``(horizontal, vertical)``; zero on the last column/row."""
    return _kernels.grad(np.asarray(x, dtype=np.float64))


def tv(x):
    """Isotropic total variation."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim > 2:
        return np.array([tv(xi) for xi in x.reshape((-1,) + x.shape[-2:])]).reshape(x.shape[:-2])
    return _kernels.tv(x)


@dataclass
class ProxResult:
    u: np.ndarray
    dual_h: np.ndarray
    dual_v: np.ndarray
    iterations: int
    gap: float
    objective: float


def prox_tv_full(x, w, max_iter=PROX_MAX_ITER, tol=PROX_TOL):
    """Like :func:`prox_tv` but returns the dual iterate and a duality gap."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise PriorError("prox_tv input contains non-finite values")
    if not w > 0:
        raise PriorError(f"prox weight must be positive, got {w}")
    u, ph, pv, it = _kernels.prox_tv(x, w, max_iter, tol)
    gap = _kernels.duality_gap(x, u, ph, pv, w)
    r = x - u
    obj = w * _kernels.tv(u) + 0.5 * float(np.sum(r * r))
    return ProxResult(u, ph, pv, it, gap, obj)


def prox_tv(x, w, max_iter=PROX_MAX_ITER, tol=PROX_TOL):
    """Approximate ``argmin_u w*TV(u) + ||x - u||^2 / 2``.

    Accelerated projected gradient on the dual (step 1/8 in the scaled
    variable). Stops once the relative change of the dual iterate drops
    below ``tol`` or after ``max_iter`` iterations.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim > 2:
        flat = x.reshape((-1,) + x.shape[-2:])
        return np.stack([prox_tv(xi, w, max_iter, tol) for xi in flat]).reshape(x.shape)
    if not np.all(np.isfinite(x)):
        raise PriorError("prox_tv input contains non-finite values")
    if not w > 0:
        raise PriorError(f"prox weight must be positive, got {w}")
    return _kernels.prox_tv(x, w, max_iter, tol)[0]


def l1(x):
    return float(np.abs(x).sum()) if np.ndim(x) <= 2 else np.abs(x).sum(axis=(-2, -1))


def prox_l1(x, w):
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.maximum(np.abs(x) - w, 0.0)


_PENALTIES = {
    "tv": (tv, prox_tv),
    "l1": (l1, lambda x, w: prox_l1(x, w)),
}


@dataclass(frozen=True)
class PriorDescriptor:
    """Weighted prior ``theta * g`` smoothed with Moreau-Yosida parameter ``lam``.

    ``alpha`` is the positive-homogeneity degree of ``g`` (1 for TV and l1),
    which the SAPG theta update relies on.
    """

    theta: float
    lam: float
    kind: str = "tv"
    alpha: float = 1.0

    def __post_init__(self):
        if not self.theta > 0:
            raise PriorError(f"theta must be positive, got {self.theta}")
        if not self.lam > 0:
            raise PriorError(f"lambda must be positive, got {self.lam}")
        if self.kind not in _PENALTIES:
            raise PriorError(f"unknown prior kind {self.kind!r}")

    def g(self, x):
        """Unweighted penalty (TV or l1)."""
        return _PENALTIES[self.kind][0](x)

    def value(self, x):
        return self.theta * self.g(x)

    def prox(self, x):
        """``prox`` of ``theta * g`` with parameter ``lam``."""
        return _PENALTIES[self.kind][1](x, self.theta * self.lam)

    def with_theta(self, theta):
        return PriorDescriptor(theta, self.lam, self.kind, self.alpha)


def my_envelope_value(x, p, max_iter=ENVELOPE_MAX_ITER, tol=ENVELOPE_TOL):
    x = np.asarray(x, dtype=np.float64)
    if p.kind == "tv":
        u = prox_tv(x, p.theta * p.lam, max_iter, tol)
    else:
        u = p.prox(x)
    r = x - u
    return float(p.value(u) + np.sum(r * r) / (2.0 * p.lam))


def my_envelope_grad(x, p):
    """``(x - prox(x)) / lam``; Lipschitz with constant ``1/lam``."""
    x = np.asarray(x, dtype=np.float64)
    return (x - p.prox(x)) / p.lam
