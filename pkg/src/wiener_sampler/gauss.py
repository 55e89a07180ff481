"""Truncated moments of the standard normal.

Scalar versions are numba kernels used inside the operator assembly; the
``*_np`` versions are their vectorised numpy counterparts.
"""
import math

import numpy as np
from scipy.special import erfc

from ._accel import njit

INV_SQRT2 = 1.0 / math.sqrt(2.0)
INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


@njit
def phi(z):
    return INV_SQRT2PI * math.exp(-0.5 * z * z)


@njit
def tail(z):
    """min(Phi(z), 1 - Phi(z)) without cancellation."""
    return 0.5 * math.erfc(abs(z) * INV_SQRT2)


@njit
def mass_from_tails(za, ta, zb, tb):
    """P(za < Z < zb) given tail(za) = ta and tail(zb) = tb."""
    if za >= 0.0:
        return ta - tb
    if zb <= 0.0:
        return tb - ta
    return 1.0 - ta - tb


@njit
def mass(za, zb):
    return mass_from_tails(za, tail(za), zb, tail(zb))


# Narrow intervals: the recursion below loses about (c/r)^3 * eps in the
# higher moments, so expand phi(c + u) = phi(c) sum_n (-1)^n He_n(c) u^n / n!
# instead and integrate term by term.
SERIES_R = 0.25
SERIES_N = 32


_INV_FACT = np.array([1.0 / math.factorial(n) for n in range(SERIES_N + 1)])
_INV_INT = np.array([0.0] + [1.0 / k for k in range(1, SERIES_N + 6)])


@njit
def centered_series(c, r, out):
    inv_fact = _INV_FACT
    inv_int = _INV_INT
    h0 = 1.0
    h1 = c
    r2 = r * r
    s0 = 0.0
    s1 = 0.0
    s2 = 0.0
    s3 = 0.0
    rk = 2.0 * r                # 2 r^(n+1)
    for n in range(SERIES_N):
        if n == 0:
            hn = h0
        elif n == 1:
            hn = h1
        else:
            hn = c * h1 - (n - 1) * h0
            h0 = h1
            h1 = hn
        t = hn * inv_fact[n] * rk
        if n % 2 == 0:
            s0 += t * inv_int[n + 1]
            s2 += t * r2 * inv_int[n + 3]
        else:
            t = -t
            s1 += t * r * inv_int[n + 2]
            s3 += t * r2 * r * inv_int[n + 4]
        rk *= r
        # two consecutive negligible terms: done (He_n alone may vanish)
        if n >= 3 and abs(t) < 1e-18 * s0 and abs(h0 * inv_fact[n - 1]) * rk < 1e-17 * s0:
            break
    p = phi(c)
    out[0] = s0 * p
    out[1] = s1 * p
    out[2] = s2 * p
    out[3] = s3 * p


@njit
def centered_from(za, pa, ta, zb, pb, tb, out):
    """out[q] = int_za^zb (z - c)^q phi(z) dz, q = 0..3, c the midpoint."""
    c = 0.5 * (za + zb)
    r = 0.5 * (zb - za)
    if r < SERIES_R:
        centered_series(c, r, out)
        return
    m0 = mass_from_tails(za, ta, zb, tb)
    m1 = pa - pb - c * m0
    m2 = -r * (pa + pb) + m0 - c * m1
    m3 = r * r * (pa - pb) + 2.0 * m1 - c * m2
    out[0] = m0
    out[1] = m1
    out[2] = m2
    out[3] = m3


@njit
def centered_moments(za, zb, out):
    if zb - za < 2.0 * SERIES_R:
        centered_series(0.5 * (za + zb), 0.5 * (zb - za), out)
    else:
        centered_from(za, phi(za), tail(za), zb, phi(zb), tail(zb), out)


@njit
def truncated_raw(za, zb, deg, out):
    """out[q] = int_za^zb z^q phi(z) dz, q = 0..deg; +-inf endpoints allowed."""
    fa = 0.0
    fb = 0.0
    if math.isfinite(za):
        fa = phi(za)
    if math.isfinite(zb):
        fb = phi(zb)
    out[0] = mass(za, zb)
    for q in range(1, deg + 1):
        val = 0.0
        if fa != 0.0:
            val += za ** (q - 1) * fa
        if fb != 0.0:
            val -= zb ** (q - 1) * fb
        if q >= 2:
            val += (q - 1) * out[q - 2]
        out[q] = val


@njit
def stage_cost_expect(mus, sds, wts, v, beta, mean_y, mean_y2, out):
    """Scalar-loop version of ``expected_stage_cost`` (see below)."""
    m = np.zeros(5)
    c0 = 0.5 * mean_y2 - mean_y * beta
    k0 = v ** 4 / 6.0 - (beta - mean_y) * v * v
    for i in range(mus.size):
        mu = mus[i]
        acc = 0.0
        for k in range(sds.size):
            s = sds[k]
            val = c0 + mean_y * (mu * mu + s * s)
            if v > 0.0:
                za = (-v - mu) / s
                zb = (v - mu) / s
                if za < 9.0 and zb > -9.0:
                    truncated_raw(za, zb, 4, m)
                    e0 = m[0]
                    e2 = mu * mu * m[0] + 2.0 * mu * s * m[1] + s * s * m[2]
                    e4 = (mu ** 4 * m[0] + 4.0 * mu ** 3 * s * m[1]
                          + 6.0 * mu * mu * s * s * m[2] + 4.0 * mu * s ** 3 * m[3]
                          + s ** 4 * m[4])
                    val += k0 * e0 + (beta - mean_y) * e2 - e4 / 6.0
            acc += wts[k] * val
        out[i] = acc


def tail_np(z):
    return 0.5 * erfc(np.abs(z) * INV_SQRT2)


def phi_np(z):
    return INV_SQRT2PI * np.exp(-0.5 * z * z)


def mass_np(za, zb):
    ta, tb = tail_np(za), tail_np(zb)
    return np.where(za >= 0.0, ta - tb, np.where(zb <= 0.0, tb - ta, 1.0 - ta - tb))


def centered_series_np(c, r):
    out = [np.zeros(np.broadcast(c, r).shape) for _ in range(4)]
    h0, h1 = np.ones_like(out[0]), c + out[0]
    fact = 1.0
    for n in range(SERIES_N):
        if n == 0:
            hn = h0
        elif n == 1:
            hn = h1
        else:
            hn = c * h1 - (n - 1) * h0
            h0, h1 = h1, hn
        if n > 0:
            fact *= n
        an = (-1) ** n * hn / fact
        for q in range(4):
            k = q + n
            if k % 2 == 0:
                out[q] = out[q] + an * 2.0 * r ** (k + 1) / (k + 1)
    p = phi_np(c)
    return [o * p for o in out]


def centered_moments_np(za, zb):
    """Vectorised counterpart of ``centered_moments``; returns (M0, M1, M2, M3)."""
    za, zb = np.broadcast_arrays(np.asarray(za, float), np.asarray(zb, float))
    pa, pb = phi_np(za), phi_np(zb)
    c = 0.5 * (za + zb)
    r = 0.5 * (zb - za)
    m0 = mass_np(za, zb)
    m1 = pa - pb - c * m0
    m2 = -r * (pa + pb) + m0 - c * m1
    m3 = r * r * (pa - pb) + 2.0 * m1 - c * m2
    small = r < SERIES_R
    if np.any(small):
        ser = centered_series_np(c, r)
        m0, m1, m2, m3 = (np.where(small, sv, mv) for sv, mv in zip(ser, (m0, m1, m2, m3)))
    return m0, m1, m2, m3


def raw_moments_np(za, zb, deg):
    """int_za^zb z^q phi(z) dz for q = 0..deg; endpoints may be infinite."""
    za = np.asarray(za, dtype=float)
    zb = np.asarray(zb, dtype=float)
    fa = np.where(np.isfinite(za), phi_np(np.where(np.isfinite(za), za, 0.0)), 0.0)
    fb = np.where(np.isfinite(zb), phi_np(np.where(np.isfinite(zb), zb, 0.0)), 0.0)
    za0 = np.where(np.isfinite(za), za, 0.0)
    zb0 = np.where(np.isfinite(zb), zb, 0.0)
    m = [mass_np(za, zb)]
    for q in range(1, deg + 1):
        val = za0 ** (q - 1) * fa - zb0 ** (q - 1) * fb
        if q >= 2:
            val = val + (q - 1) * m[q - 2]
        m.append(val)
    return m


def normal_poly_moments(lo, hi, mu, s, deg):
    """E[X^p ; lo < X < hi] for X ~ N(mu, s^2), p = 0..deg (broadcasting)."""
    mu = np.asarray(mu, dtype=float)
    s = np.asarray(s, dtype=float)
    za = (np.asarray(lo, dtype=float) - mu) / s
    zb = (np.asarray(hi, dtype=float) - mu) / s
    m = raw_moments_np(za, zb, deg)
    out = []
    for p in range(deg + 1):
        acc = 0.0
        for q in range(p + 1):
            acc = acc + math.comb(p, q) * mu ** (p - q) * s ** q * m[q]
        out.append(acc)
    return out


def expected_stage_cost(mu, y, wy, v, beta, mean_y, mean_y2):
    """E[g(mu + W_Y, v, beta)] in closed form over the delay nodes (y, wy)."""
    mu = np.asarray(mu, dtype=float)
    s = np.sqrt(np.asarray(y, dtype=float))
    c0 = 0.5 * mean_y2 - mean_y * beta
    base = c0 + mean_y * (mu * mu)[..., None] + mean_y * y
    if v > 0:
        k0 = v ** 4 / 6.0 - (beta - mean_y) * v * v
        m = normal_poly_moments(-v, v, mu[..., None], s, 4)
        base = base + k0 * m[0] + (beta - mean_y) * m[2] - m[4] / 6.0
    return base @ wy
