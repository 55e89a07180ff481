"""Tabulated functions on a symmetric grid and exact Gaussian-mixture operators.

A grid function is a piecewise cubic (4-point Lagrange stencils on a uniform
grid over [-W, W]) continued by a polynomial tail beyond W. Because the
interpolant is polynomial on each cell, E[f(mu + W_Y)] is computed exactly
cell by cell from truncated normal moments, for every delay node. The map
from nodal values to expectations is linear, so it is assembled once per
(grid, delay) into a dense matrix; kinks at +-v (where a function switches
to a closed-form fill inside the band) are handled by an exact local
correction on the few cells whose stencils straddle +-v.
"""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from . import gauss
from ._accel import USE_NUMBA, njit
from .errors import GridError

EVEN = 1
ODD = -1


def _lagrange_table():
    """B[o, m, p]: coefficient of tau^p in l_m(o + 1/2 + tau), o = 0, 1, 2."""
    P = np.polynomial.Polynomial
    B = np.zeros((3, 4, 4))
    for m in range(4):
        others = [k for k in range(4) if k != m]
        lm = P([1.0])
        for k in others:
            lm = lm * P([-k, 1.0]) / (m - k)
        for o in range(3):
            c = lm(P([o + 0.5, 1.0])).coef
            B[o, m, :len(c)] = c
    return B


LAGRANGE_B = _lagrange_table()


# --------------------------------------------------------------------------
# grid functions

class GridFunction:
    """Even or odd function tabulated on nodes j*h, j = -(nh-1)..nh-1.

    ``tail`` = (a2, a1, a0) gives f(x) = a2 x^2 + a1 x + a0 for x > W; the
    left tail follows by parity.
    """

    def __init__(self, h, half_values, parity, tail):
        self.h = float(h)
        self.half = np.asarray(half_values, dtype=float)
        self.parity = int(parity)
        self.tail = tuple(float(a) for a in tail)
        if self.parity == ODD:
            self.half[0] = 0.0

    @property
    def nh(self):
        return self.half.size

    @property
    def w_max(self):
        return (self.nh - 1) * self.h

    @property
    def nodes(self):
        j = np.arange(-(self.nh - 1), self.nh)
        return j * self.h

    @property
    def values(self):
        left = self.parity * self.half[:0:-1]
        return np.concatenate([left, self.half])

    def _stencil(self, x):
        nh, h = self.nh, self.h
        J = np.clip(np.floor(x / h), -(nh - 1), nh - 2).astype(np.int64)
        S = np.clip(J - 1, -(nh - 1), nh - 4)
        t = x / h - S
        full = self.values
        vals = np.stack([full[S + m + nh - 1] for m in range(4)])
        return t, vals

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        ax = np.abs(x)
        out = np.empty_like(x)
        inside = ax <= self.w_max
        if np.any(inside):
            t, vals = self._stencil(x[inside])
            l0 = -(t - 1) * (t - 2) * (t - 3) / 6.0
            l1 = t * (t - 2) * (t - 3) / 2.0
            l2 = -t * (t - 1) * (t - 3) / 2.0
            l3 = t * (t - 1) * (t - 2) / 6.0
            out[inside] = l0 * vals[0] + l1 * vals[1] + l2 * vals[2] + l3 * vals[3]
        if not np.all(inside):
            a2, a1, a0 = self.tail
            xo = ax[~inside]
            sg = np.where(x[~inside] < 0, self.parity, 1.0)
            out[~inside] = sg * (a2 * xo * xo + a1 * xo + a0)
        return out if out.ndim else float(out)

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        ax = np.abs(x)
        out = np.empty_like(x)
        inside = ax <= self.w_max
        if np.any(inside):
            t, vals = self._stencil(x[inside])
            d0 = -(3 * t * t - 12 * t + 11) / 6.0
            d1 = (3 * t * t - 10 * t + 6) / 2.0
            d2 = -(3 * t * t - 8 * t + 3) / 2.0
            d3 = (3 * t * t - 6 * t + 2) / 6.0
            out[inside] = (d0 * vals[0] + d1 * vals[1] + d2 * vals[2] + d3 * vals[3]) / self.h
        if not np.all(inside):
            a2, a1, _ = self.tail
            xo = ax[~inside]
            sg = np.where(x[~inside] < 0, -self.parity, 1.0)
            out[~inside] = sg * (2 * a2 * xo + a1)
        return out if out.ndim else float(out)

    def __sub__(self, other):
        if other.parity != self.parity or other.nh != self.nh or other.h != self.h:
            raise ValueError("grid functions live on different grids")
        tail = tuple(a - b for a, b in zip(self.tail, other.tail))
        return GridFunction(self.h, self.half - other.half, self.parity, tail)


def tail_fit_matrix(h, nh, parity, frac=0.1):
    """Linear map from half-grid values to tail coefficients (a2, a1, a0).

    Even functions get a quadratic, odd ones a linear tail, least-squares
    fitted on the outer ``frac`` of nodes and pinned to the boundary value.
    """
    n_fit = max(int(round(frac * nh)), 4)
    idx = np.arange(nh - n_fit, nh)
    x = idx * h
    W = (nh - 1) * h
    if parity == EVEN:
        A = np.stack([x * x - W * W, x - W], axis=1)
    else:
        A = (x - W)[:, None]
    P = np.linalg.pinv(A)           # coefficients = P @ (f[idx] - f[W])
    L = np.zeros((3, nh))
    coef = np.zeros((2, nh))
    coef[:P.shape[0], idx] = P
    coef[:P.shape[0], nh - 1] -= P.sum(axis=1)
    if parity == EVEN:
        L[0], L[1] = coef[0], coef[1]
    else:
        L[1] = coef[0]
    L[2] = -L[0] * W * W - L[1] * W
    L[2, nh - 1] += 1.0
    return L


# --------------------------------------------------------------------------
# kernels: full-cell operator assembly

@njit
def _assemble_cells_nb(mus, sds, wts, h, nh, parity, nsig, B, out):
    cm = np.zeros(4)
    for i in range(mus.size):
        mu = mus[i]
        for k in range(sds.size):
            s = sds[k]
            wk = wts[k]
            J0 = max(int(math.floor((mu - nsig * s) / h)), -(nh - 1))
            J1 = min(int(math.floor((mu + nsig * s) / h)), nh - 2)
            if J0 > J1:
                continue
            e = s / h
            narrow = 0.5 / e < gauss.SERIES_R
            zb = (J0 * h - mu) / s
            pb = 0.0
            tb = 0.0
            if not narrow:
                pb = gauss.phi(zb)
                tb = gauss.tail(zb)
            for J in range(J0, J1 + 1):
                za, pa, ta = zb, pb, tb
                zb = ((J + 1) * h - mu) / s
                if narrow:
                    gauss.centered_series(0.5 * (za + zb), 0.5 * (zb - za), cm)
                else:
                    pb = gauss.phi(zb)
                    tb = gauss.tail(zb)
                    gauss.centered_from(za, pa, ta, zb, pb, tb, cm)
                t0 = cm[0]
                t1 = e * cm[1]
                t2 = e * e * cm[2]
                t3 = e * e * e * cm[3]
                S = min(max(J - 1, -(nh - 1)), nh - 4)
                o = J - S
                for m in range(4):
                    val = wk * (B[o, m, 0] * t0 + B[o, m, 1] * t1
                                + B[o, m, 2] * t2 + B[o, m, 3] * t3)
                    node = S + m
                    if node < 0:
                        out[i, -node] += parity * val
                    else:
                        out[i, node] += val


def _assemble_cells_np(mus, sds, wts, h, nh, parity, nsig, B, out, chunk=64):
    nfull = 2 * nh - 1
    for k in range(sds.size):
        s, wk = sds[k], wts[k]
        e = s / h
        for r0 in range(0, mus.size, chunk):
            mu = mus[r0:r0 + chunk, None]
            J0 = max(int(math.floor((mu.min() - nsig * s) / h)), -(nh - 1))
            J1 = min(int(math.floor((mu.max() + nsig * s) / h)), nh - 2)
            if J0 > J1:
                continue
            J = np.arange(J0, J1 + 1)
            lo = J * h
            za = (lo - mu) / s
            zb = (lo + h - mu) / s
            win = (np.floor((mu - nsig * s) / h) <= J) & (J <= np.floor((mu + nsig * s) / h))
            m0, m1, m2, m3 = gauss.centered_moments_np(za, zb)
            T = (m0, e * m1, e * e * m2, e ** 3 * m3)
            S = np.clip(J - 1, -(nh - 1), nh - 4)
            o = J - S
            acc = np.zeros((mu.shape[0], nfull))
            for m in range(4):
                coef = [B[o, m, p] for p in range(4)]
                val = wk * win * (coef[0] * T[0] + coef[1] * T[1]
                                  + coef[2] * T[2] + coef[3] * T[3])
                np.add.at(acc, (slice(None), S + m + nh - 1), val)
            out[r0:r0 + chunk] += acc[:, nh - 1:]
            out[r0:r0 + chunk, 1:] += parity * acc[:, nh - 2::-1]


# --------------------------------------------------------------------------
# kernels: kink correction for restricted expectations

def _kink_cells(v, h, nh):
    """Cells (full-grid left indices) whose stencils mix nodes on both sides of +-v."""
    c = int(math.ceil(v / h)) - 1
    while (c + 1) * h < v:
        c += 1
    while c >= 0 and c * h >= v:
        c -= 1
    cells = set(range(c - 1, c + 2)) | set(range(-c - 2, -c + 1))
    return np.array(sorted(J for J in cells if -(nh - 1) <= J <= nh - 2), dtype=np.int64)


@njit
def _piece_basis(lo, hi, xmid, mu, s, h, o, B, cm, res):
    za = (lo - mu) / s
    zb = (hi - mu) / s
    gauss.centered_moments(za, zb, cm)
    d = (0.5 * (lo + hi) - xmid) / h
    e = s / h
    q0 = cm[0]
    q1 = e * cm[1]
    q2 = e * e * cm[2]
    q3 = e * e * e * cm[3]
    t0 = q0
    t1 = d * q0 + q1
    t2 = d * d * q0 + 2.0 * d * q1 + q2
    t3 = d * d * d * q0 + 3.0 * d * d * q1 + 3.0 * d * q2 + q3
    for m in range(4):
        res[m] = B[o, m, 0] * t0 + B[o, m, 1] * t1 + B[o, m, 2] * t2 + B[o, m, 3] * t3


@njit
def _kink_correction_nb(mus, sds, wts, h, nh, parity, v, f_half, fill, cells, nsig, B, out):
    cm = np.zeros(4)
    res = np.zeros(4)
    d_in = np.zeros(4)
    d_out = np.zeros(4)
    for ci in range(cells.size):
        J = cells[ci]
        S = min(max(J - 1, -(nh - 1)), nh - 4)
        o = J - S
        a = J * h
        b = (J + 1) * h
        xmid = (J + 0.5) * h
        nonzero = False
        for m in range(4):
            node = S + m
            fv = f_half[-node] * parity if node < 0 else f_half[node]
            xn = node * h
            fl = fill[0] + xn * (fill[1] + xn * (fill[2] + xn * fill[3]))
            if abs(node) * h < v:
                d_out[m] = fv - fl      # weights the part of the cell outside the band
                d_in[m] = 0.0
            else:
                d_out[m] = 0.0
                d_in[m] = fl - fv
            if d_out[m] != 0.0 or d_in[m] != 0.0:
                nonzero = True
        if not nonzero:
            continue
        in_lo = max(a, -v)
        in_hi = min(b, v)
        for i in range(mus.size):
            mu = mus[i]
            acc = 0.0
            for k in range(sds.size):
                s = sds[k]
                if b < mu - nsig * s or a > mu + nsig * s:
                    continue
                tot = 0.0
                if in_lo < in_hi:
                    _piece_basis(in_lo, in_hi, xmid, mu, s, h, o, B, cm, res)
                    for m in range(4):
                        tot += d_in[m] * res[m]
                if a < -v:
                    _piece_basis(a, min(b, -v), xmid, mu, s, h, o, B, cm, res)
                    for m in range(4):
                        tot += d_out[m] * res[m]
                if b > v:
                    _piece_basis(max(a, v), b, xmid, mu, s, h, o, B, cm, res)
                    for m in range(4):
                        tot += d_out[m] * res[m]
                acc += wts[k] * tot
            out[i] += acc


def _piece_basis_np(lo, hi, xmid, mu, s, h, o):
    m0, m1, m2, m3 = gauss.centered_moments_np((lo - mu) / s, (hi - mu) / s)
    d = (0.5 * (lo + hi) - xmid) / h
    e = s / h
    q1, q2, q3 = e * m1, e * e * m2, e ** 3 * m3
    t = (m0, d * m0 + q1, d * d * m0 + 2 * d * q1 + q2,
         d ** 3 * m0 + 3 * d * d * q1 + 3 * d * q2 + q3)
    return [sum(LAGRANGE_B[o, m, p] * t[p] for p in range(4)) for m in range(4)]


def _kink_correction_np(mus, sds, wts, h, nh, parity, v, f_half, fill, cells, nsig, B, out):
    mu = mus[:, None]
    s = sds[None, :]
    for J in cells:
        S = min(max(J - 1, -(nh - 1)), nh - 4)
        o = J - S
        a, b, xmid = J * h, (J + 1) * h, (J + 0.5) * h
        d_in = np.zeros(4)
        d_out = np.zeros(4)
        for m in range(4):
            node = S + m
            fv = f_half[-node] * parity if node < 0 else f_half[node]
            xn = node * h
            fl = fill[0] + xn * (fill[1] + xn * (fill[2] + xn * fill[3]))
            if abs(node) * h < v:
                d_out[m] = fv - fl
            else:
                d_in[m] = fl - fv
        if not (d_in.any() or d_out.any()):
            continue
        win = ~((b < mu - nsig * s) | (a > mu + nsig * s))
        tot = np.zeros((mus.size, sds.size))
        pieces = []
        if max(a, -v) < min(b, v):
            pieces.append((max(a, -v), min(b, v), d_in))
        if a < -v:
            pieces.append((a, min(b, -v), d_out))
        if b > v:
            pieces.append((max(a, v), b, d_out))
        for lo, hi, dv in pieces:
            basis = _piece_basis_np(lo, hi, xmid, mu, s, h, o)
            for m in range(4):
                if dv[m] != 0.0:
                    tot += dv[m] * basis[m]
        out += (np.where(win, tot, 0.0)) @ wts


# --------------------------------------------------------------------------

class Discretization:
    """Grid plus exact expectation operators for one delay distribution.

    ``K[parity]`` maps half-grid nodal values (with tail extrapolation) to
    E[f(x_i + W_Y)] at the half-grid nodes x_i = i*h, i = 0..nh-1.
    """

    def __init__(self, delay, w_max, n_grid=2001, nsig=8.0, min_weight=1e-16,
                 use_numba=None):
        if n_grid < 9 or n_grid % 2 == 0:
            raise GridError("n_grid must be odd and at least 9")
        if not w_max > 0:
            raise GridError("w_max must be positive")
        self.delay = delay
        self.w_max = float(w_max)
        self.n_grid = int(n_grid)
        self.nh = (self.n_grid + 1) // 2
        self.h = self.w_max / (self.nh - 1)
        self.nsig = float(nsig)
        self.use_numba = USE_NUMBA if use_numba is None else bool(use_numba)
        y, w = delay.quad_nodes
        keep = w >= min_weight
        self.y = np.ascontiguousarray(y[keep], dtype=float)
        self.wy = np.ascontiguousarray(w[keep] / w[keep].sum(), dtype=float)
        self.sd = np.sqrt(self.y)
        self.mean_y, self.mean_y2 = delay.moments()
        self.x = np.arange(self.nh) * self.h
        self.tail_L = {p: tail_fit_matrix(self.h, self.nh, p) for p in (EVEN, ODD)}
        self.K = {p: self._assemble(p) for p in (EVEN, ODD)}

    def _cells_operator(self, parity, mus):
        out = np.zeros((mus.size, self.nh))
        args = (np.ascontiguousarray(mus, dtype=float), self.sd, self.wy, self.h,
                self.nh, float(parity), self.nsig, LAGRANGE_B, out)
        if self.use_numba:
            _assemble_cells_nb(*args)
        else:
            _assemble_cells_np(*args)
        return out

    def _tail_moments(self, parity, mus):
        W = self.w_max
        mu = mus[:, None]
        right = gauss.normal_poly_moments(W, np.inf, mu, self.sd, 2)
        left = gauss.normal_poly_moments(-np.inf, -W, mu, self.sd, 2)
        T = np.stack([(right[p] + parity * (-1) ** p * left[p]) @ self.wy for p in (2, 1, 0)],
                     axis=1)
        return T

    def _assemble(self, parity):
        K = self._cells_operator(parity, self.x)
        K += self._tail_moments(parity, self.x) @ self.tail_L[parity]
        return K

    # -- operators --------------------------------------------------------

    def make_function(self, half_values, parity):
        half = np.asarray(half_values, dtype=float)
        if not np.all(np.isfinite(half)):
            raise GridError("non-finite tabulated values")
        return GridFunction(self.h, half, parity, self.tail_L[parity] @ half)

    def expect(self, f_half, parity, rows=None):
        K = self.K[parity] if rows is None else self.K[parity][rows]
        return K @ f_half

    def restricted_expect(self, f_half, parity, v, fill, rows=None):
        """E[f~(x_i + W_Y)] where f~ = fill (a cubic in x) on |x| < v, f elsewhere."""
        f_half = np.asarray(f_half, dtype=float)
        if v <= 0:
            return self.expect(f_half, parity, rows)
        if v + 4 * self.h >= self.w_max:
            raise GridError(f"threshold {v:.6g} too close to grid edge {self.w_max:.6g}")
        fill = np.zeros(4) + np.asarray(tuple(fill) + (0.0,) * (4 - len(fill)), dtype=float)
        inside = self.x < v
        t = np.where(inside, np.polyval(fill[::-1], self.x), f_half)
        base = self.expect(t, parity, rows)
        mus = self.x if rows is None else np.atleast_1d(self.x[rows])
        corr = np.zeros(mus.size)
        cells = _kink_cells(v, self.h, self.nh)
        args = (np.ascontiguousarray(mus), self.sd, self.wy, self.h, self.nh, float(parity),
                float(v), f_half, fill, cells, self.nsig, LAGRANGE_B, corr)
        if self.use_numba:
            _kink_correction_nb(*args)
        else:
            _kink_correction_np(*args)
        return base + (corr if np.ndim(base) else corr[0])

    def expected_stage_cost(self, v, beta, rows=None):
        mus = self.x if rows is None else np.atleast_1d(self.x[rows])
        if self.use_numba:
            out = np.empty(mus.size)
            gauss.stage_cost_expect(np.ascontiguousarray(mus), self.sd, self.wy, float(v),
                                    float(beta), self.mean_y, self.mean_y2, out)
        else:
            out = gauss.expected_stage_cost(mus, self.y, self.wy, v, beta,
                                            self.mean_y, self.mean_y2)
        return out if rows is None or np.ndim(rows) else out[0]


def grid_extent(delay, k2, nsig=8.0):
    """Default half-width sqrt(3*k2) + nsig*sqrt(q99(Y))."""
    return math.sqrt(3.0 * k2) + nsig * math.sqrt(delay.quantile(0.99))


@lru_cache(maxsize=16)
def discretization(delay, w_max, n_grid=2001, nsig=8.0, use_numba=None):
    return Discretization(delay, w_max, n_grid=n_grid, nsig=nsig, use_numba=use_numba)
