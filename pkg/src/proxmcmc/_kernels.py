"""Hot loops of the TV machinery, in numba and pure-numpy flavours.

Both flavours implement the same arithmetic in the same order up to
floating-point reassociation; ``tests/test_backends.py`` holds them to
1e-10 agreement. Public entry points dispatch on :mod:`._accel`.
"""
import math

import numpy as np

from . import _accel
from ._accel import njit


# --- numpy reference path -------------------------------------------------

def _grad_np(u):
    gh = np.zeros_like(u)
    gv = np.zeros_like(u)
    gh[:, :-1] = u[:, 1:] - u[:, :-1]
    gv[:-1, :] = u[1:, :] - u[:-1, :]
    return gh, gv


def _grad_adj_np(ph, pv):
    # adjoint of the forward-difference gradient (minus the divergence)
    out = np.zeros_like(ph)
    out[:, :-1] -= ph[:, :-1]
    out[:, 1:] += ph[:, :-1]
    out[:-1, :] -= pv[:-1, :]
    out[1:, :] += pv[:-1, :]
    return out


def _tv_np(u):
    gh, gv = _grad_np(u)
    return float(np.sqrt(gh * gh + gv * gv).sum())


def _prox_tv_np(x, w, max_iter, tol):
    rows, cols = x.shape
    ph = np.zeros((rows, cols))
    pv = np.zeros((rows, cols))
    rh = ph.copy()
    rv = pv.copy()
    t = 1.0
    step = 1.0 / (8.0 * w)
    it = 0
    for it in range(1, max_iter + 1):
        u = x - w * _grad_adj_np(rh, rv)
        gh, gv = _grad_np(u)
        qh = rh + step * gh
        qv = rv + step * gv
        scale = np.maximum(1.0, np.sqrt(qh * qh + qv * qv))
        qh /= scale
        qv /= scale
        dh = qh - ph
        dv = qv - pv
        # gradient-based momentum restart (O'Donoghue & Candes)
        if float(((rh - qh) * dh + (rv - qv) * dv).sum()) > 0.0:
            t = 1.0
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        mom = (t - 1.0) / t_next
        num = math.sqrt(float((dh * dh).sum() + (dv * dv).sum()))
        den = math.sqrt(float((qh * qh).sum() + (qv * qv).sum()))
        rh = qh + mom * dh
        rv = qv + mom * dv
        ph = qh
        pv = qv
        t = t_next
        if num <= tol * den:
            break
    u = x - w * _grad_adj_np(ph, pv)
    return u, ph, pv, it


def _gap_np(x, u, ph, pv, w):
    gh, gv = _grad_np(u)
    return float(w * (np.sqrt(gh * gh + gv * gv) - (gh * ph + gv * pv)).sum())


# --- numba path -------------------------------------------------------------

@njit
def _grad_adj_nb(ph, pv, out):
    rows, cols = ph.shape
    for i in range(rows):
        for j in range(cols):
            acc = 0.0
            if j < cols - 1:
                acc -= ph[i, j]
            if j > 0:
                acc += ph[i, j - 1]
            if i < rows - 1:
                acc -= pv[i, j]
            if i > 0:
                acc += pv[i - 1, j]
            out[i, j] = acc


@njit
def _tv_nb(u):
    rows, cols = u.shape
    total = 0.0
    for i in range(rows):
        for j in range(cols):
            gh = u[i, j + 1] - u[i, j] if j < cols - 1 else 0.0
            gv = u[i + 1, j] - u[i, j] if i < rows - 1 else 0.0
            total += math.sqrt(gh * gh + gv * gv)
    return total


@njit
def _prox_tv_nb(x, w, max_iter, tol):
    rows, cols = x.shape
    ph = np.zeros((rows, cols))
    pv = np.zeros((rows, cols))
    rh = np.zeros((rows, cols))
    rv = np.zeros((rows, cols))
    qh_new = np.empty((rows, cols))
    qv_new = np.empty((rows, cols))
    u = np.empty((rows, cols))
    adj = np.empty((rows, cols))
    t = 1.0
    step = 1.0 / (8.0 * w)
    it = 0
    for it in range(1, max_iter + 1):
        _grad_adj_nb(rh, rv, adj)
        for i in range(rows):
            for j in range(cols):
                u[i, j] = x[i, j] - w * adj[i, j]
        num = 0.0
        den = 0.0
        cross = 0.0
        for i in range(rows):
            for j in range(cols):
                gh = u[i, j + 1] - u[i, j] if j < cols - 1 else 0.0
                gv = u[i + 1, j] - u[i, j] if i < rows - 1 else 0.0
                qh = rh[i, j] + step * gh
                qv = rv[i, j] + step * gv
                nrm = math.sqrt(qh * qh + qv * qv)
                if nrm > 1.0:
                    qh /= nrm
                    qv /= nrm
                dh = qh - ph[i, j]
                dv = qv - pv[i, j]
                num += dh * dh + dv * dv
                den += qh * qh + qv * qv
                cross += (rh[i, j] - qh) * dh + (rv[i, j] - qv) * dv
                qh_new[i, j] = qh
                qv_new[i, j] = qv
        if cross > 0.0:
            t = 1.0
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        mom = (t - 1.0) / t_next
        for i in range(rows):
            for j in range(cols):
                qh = qh_new[i, j]
                qv = qv_new[i, j]
                rh[i, j] = qh + mom * (qh - ph[i, j])
                rv[i, j] = qv + mom * (qv - pv[i, j])
                ph[i, j] = qh
                pv[i, j] = qv
        t = t_next
        if math.sqrt(num) <= tol * math.sqrt(den):
            break
    _grad_adj_nb(ph, pv, adj)
    for i in range(rows):
        for j in range(cols):
            u[i, j] = x[i, j] - w * adj[i, j]
    return u, ph, pv, it


@njit
def _gap_nb(x, u, ph, pv, w):
    rows, cols = u.shape
    total = 0.0
    for i in range(rows):
        for j in range(cols):
            gh = u[i, j + 1] - u[i, j] if j < cols - 1 else 0.0
            gv = u[i + 1, j] - u[i, j] if i < rows - 1 else 0.0
            total += math.sqrt(gh * gh + gv * gv) - (gh * ph[i, j] + gv * pv[i, j])
    return w * total


# --- dispatch ---------------------------------------------------------------

def grad(u):
    return _grad_np(u)


def grad_adjoint(ph, pv):
    return _grad_adj_np(ph, pv)


def tv(u):
    if _accel.get_backend() == "numba":
        return float(_tv_nb(np.ascontiguousarray(u, dtype=np.float64)))
    return _tv_np(u)


def prox_tv(x, w, max_iter, tol):
    """Dual solve; returns ``(u, ph, pv, iterations)``."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if _accel.get_backend() == "numba":
        u, ph, pv, it = _prox_tv_nb(x, float(w), int(max_iter), float(tol))
        return u, ph, pv, int(it)
    return _prox_tv_np(x, float(w), int(max_iter), float(tol))


def duality_gap(x, u, ph, pv, w):
    if _accel.get_backend() == "numba":
        return float(_gap_nb(x, np.ascontiguousarray(u), ph, pv, float(w)))
    return _gap_np(x, u, ph, pv, w)
