"""Vectorized numpy versions of the per-row simplex kernels.

Same signatures and semantics as the compiled ``_ckernels`` module; used
when the extension is not built. All inputs are C-contiguous float64.
"""
import numpy as np

W_FLOOR = 1e-12
BETA_FLOOR = 1e-12


def kuma_forward(u, beta):
    w = np.maximum(1.0 - u, W_FLOOR)
    return 1.0 - np.exp(np.log(w) / np.maximum(beta, BETA_FLOOR))


def kuma_partials(u, beta):
    """``(v, dv/du, dv/dbeta)``, the last one per element before the row sum."""
    one_minus = 1.0 - u
    w = np.maximum(one_minus, W_FLOOR)
    b = np.maximum(beta, BETA_FLOOR)
    p = 1.0 / b
    logw = np.log(w)
    wp = np.exp(logw / b)
    dv_du = np.where(one_minus > W_FLOOR, p * wp / w, 0.0)
    dv_db = np.where(beta > BETA_FLOOR, wp * logw / (b * b), 0.0)
    return 1.0 - wp, dv_du, dv_db


def stick_forward(v):
    p, k = v.shape
    s = np.empty((p, k + 1))
    rem = np.ones(p)
    for j in range(k):
        s[:, j] = v[:, j] * rem
        rem = rem * (1.0 - v[:, j])
    s[:, k] = rem
    return s


def stick_backward(v, g):
    p, k = v.shape
    # remaining stick length before each break
    rem = np.empty((p, k + 1))
    rem[:, 0] = 1.0
    for j in range(k):
        rem[:, j + 1] = rem[:, j] * (1.0 - v[:, j])
    gv = np.empty_like(v)
    g_rem = g[:, k].copy()
    for j in range(k - 1, -1, -1):
        gv[:, j] = rem[:, j] * (g[:, j] - g_rem)
        g_rem = g[:, j] * v[:, j] + g_rem * (1.0 - v[:, j])
    return gv


def _entropy_parts(s, p, eps):
    a = np.abs(s) if p == 1.0 else np.abs(s) ** p
    n = a.sum(axis=1, keepdims=True)
    live = n[:, 0] > 0.0
    safe_n = np.where(n > 0.0, n, 1.0)
    q = a / safe_n
    logq = np.log(np.maximum(q, eps))
    return safe_n, live, q, logq


def entropy_forward(s, p, eps):
    _, live, q, logq = _entropy_parts(s, p, eps)
    count = int(live.sum())
    if count == 0:
        return 0.0
    h = -(q * logq).sum(axis=1)
    return float(h[live].sum() / count)


def entropy_value_and_grad(s, p, eps):
    n, live, q, logq = _entropy_parts(s, p, eps)
    count = int(live.sum())
    if count == 0:
        return 0.0, np.zeros_like(s)
    h = -(q * logq).sum(axis=1)
    gq = -(logq + (q > eps)) / count
    ga = (gq - (gq * q).sum(axis=1, keepdims=True)) / n
    if p == 1.0:
        da = np.sign(s)
    else:
        nz = s != 0.0
        da = np.where(nz, p * np.abs(np.where(nz, s, 1.0)) ** (p - 1.0) * np.sign(s), 0.0)
    gs = ga * da
    gs[~live] = 0.0
    return float(h[live].sum() / count), gs


def _angle_parts(a, b, clamp):
    na = np.maximum(np.sqrt((a * a).sum(axis=1)), 1e-300)
    nb = np.maximum(np.sqrt((b * b).sum(axis=1)), 1e-300)
    cos = (a * b).sum(axis=1) / (na * nb)
    lo, hi = -1.0 + clamp, 1.0 - clamp
    inside = (cos >= lo) & (cos <= hi)
    return na, nb, np.clip(cos, lo, hi), inside


def angle_forward(a, b, clamp):
    _, _, cos, _ = _angle_parts(a, b, clamp)
    return float(np.arccos(cos).sum() / a.shape[0])


def angle_value_and_grad(a, b, clamp):
    na, nb, cos, inside = _angle_parts(a, b, clamp)
    n = a.shape[0]
    dtheta = np.where(inside, -1.0 / np.sqrt(1.0 - cos * cos), 0.0) / n
    k = dtheta[:, None]
    ga = k * (b / (na * nb)[:, None] - cos[:, None] * a / (na * na)[:, None])
    gb = k * (a / (na * nb)[:, None] - cos[:, None] * b / (nb * nb)[:, None])
    return float(np.arccos(cos).sum() / n), ga, gb
