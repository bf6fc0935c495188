"""Numerically guarded gate primitives, their analytic gradients, and protected arithmetic.

Gate math runs in standardized feature space. Every pre-sigmoid argument is
clipped to [-60, 60], which keeps the low tail strictly positive (~8.8e-27)
and every gradient finite; the high tail rounds to exactly 1.0 in float64.
The effective steepness is a = softplus(a~) > 0; the pre-softplus parameter
a~ is what search and refinement mutate.
"""

from __future__ import annotations

import numpy as np

SIGMOID_CLIP = 60.0
SOFTPLUS_CLIP = 60.0
EXP_CLIP = 60.0
DIV_EPS = 1e-12
LOG_EPS = 1e-12


def sigmoid(z):
    """Logistic function with the argument clipped to [-60, 60]."""
    z = np.clip(z, -SIGMOID_CLIP, SIGMOID_CLIP)
    return 1.0 / (1.0 + np.exp(-z))


def softplus(a_tilde):
    """softplus(a~) = ln(1 + e^a~), argument clipped to [-60, 60]; always > 0."""
    a_tilde = np.clip(a_tilde, -SOFTPLUS_CLIP, SOFTPLUS_CLIP)
    return np.logaddexp(0.0, a_tilde)


def inv_softplus(a):
    """Inverse of softplus for a > 0, so softplus(inv_softplus(a)) == a."""
    arr = np.asarray(a, dtype=float)
    if np.any(arr <= 0.0):
        raise ValueError("inv_softplus requires a > 0, got %r" % (a,))
    out = np.log(np.expm1(arr))
    return float(out) if np.isscalar(a) or arr.ndim == 0 else out


# --- gate primitives (x, y, z vectorized; a, b scalar) ---

def lgo_soft(x, a, b):
    """Soft gate x * sigma(a * (x - b)): passes x through, damped below the threshold."""
    return x * sigmoid(a * (x - b))


def lgo_hard(x, a, b):
    """Hard threshold gate sigma(a * (x - b)) in (0, 1)."""
    return sigmoid(a * (x - b))


def lgo_pair(x, y, a, b):
    """Pairwise gate (x * y) * sigma(a * ((x - y) - b)): fires when x exceeds y by b."""
    return (x * y) * sigmoid(a * ((x - y) - b))


def lgo_and2(x, y, a, b):
    """Soft conjunction (x * y) * sigma(a * (x - b)) * sigma(a * (y - b)), shared (a, b)."""
    return (x * y) * sigmoid(a * (x - b)) * sigmoid(a * (y - b))


def lgo_or2(x, y, a, b):
    """Soft disjunction (x + y) * (1 - (1 - sx) * (1 - sy)), shared (a, b)."""
    sx = sigmoid(a * (x - b))
    sy = sigmoid(a * (y - b))
    return (x + y) * (1.0 - (1.0 - sx) * (1.0 - sy))


def lgo_and3(x, y, z, a, b):
    """Three-way soft conjunction with one shared (a, b) across all inputs."""
    return (x * y * z) * sigmoid(a * (x - b)) * sigmoid(a * (y - b)) * sigmoid(a * (z - b))


def gate_expr(f, a, b):
    """Gate an arbitrary subexpression value: f * sigma(a * (f - b))."""
    return f * sigmoid(a * (f - b))


def gate_gradients(kind, u, a, b):
    """Analytic (d/da, d/db) of the hard or soft gate at input u.

    kind "hard": g = sigma(a(u-b));      d/da = (u-b) s(1-s),   d/db = -a s(1-s)
    kind "soft": g = u * sigma(a(u-b));  d/da = u(u-b) s(1-s),  d/db = -a u s(1-s)

    Where the pre-sigmoid argument falls outside the clip range the forward
    value is flat, so both gradients are exactly 0 there.
    """
    u = np.asarray(u, dtype=float)
    z = a * (u - b)
    s = sigmoid(z)
    sp = s * (1.0 - s)
    sp = np.where(np.abs(z) >= SIGMOID_CLIP, 0.0, sp)
    if kind == "hard":
        return (u - b) * sp, -a * sp
    if kind == "soft":
        return u * (u - b) * sp, -a * u * sp
    raise ValueError("unknown gate kind %r (expected 'hard' or 'soft')" % (kind,))


# --- protected arithmetic ---

def protected_div(x, y):
    """x / y with the denominator pushed away from 0: y -> sign(y) * max(|y|, 1e-12)."""
    y = np.asarray(y, dtype=float)
    denom = np.where(y >= 0.0, 1.0, -1.0) * np.maximum(np.abs(y), DIV_EPS)
    return x / denom


def protected_inv(x):
    """1 / x, guarded like protected_div."""
    return protected_div(1.0, x)


def protected_log(x):
    """ln(max(x, 1e-12))."""
    return np.log(np.maximum(x, LOG_EPS))


def protected_sqrt(x):
    """sqrt(|x|)."""
    return np.sqrt(np.abs(x))


def protected_exp(x):
    """exp with the argument clipped to [-60, 60], symmetric with the sigmoid guard."""
    return np.exp(np.clip(x, -EXP_CLIP, EXP_CLIP))


def integer_pow(x, k):
    """x ** k for small integer exponents; exponents come from frozen constant slots."""
    return np.asarray(x, dtype=float) ** int(round(k))
