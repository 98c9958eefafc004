"""Numba kernels for ray integrals on the periodic grid and their exact transposes.

A ray sample sits at fractional grid position ``base + (t_j v + dev_j)/h`` and
carries quadrature weight ``tw_j`` (times an optional per-sample factor). Both
kernels use identical interpolation weights, so the scatter is the exact
transpose of the gather. The gather splits directions into chunks and the
scatter splits time slices; every output entry is summed in a fixed order, so
results do not depend on the thread count.
"""

import os

import numba
import numpy as np

if "NUMBA_THREADING_LAYER" not in os.environ:
    numba.config.THREADING_LAYER = "omp"

LINEAR = 1
CUBIC = 3


@numba.njit(cache=True, inline="always")
def _taps(p, order, w):
    """Fill ``w`` with interpolation weights; return the index of the first tap."""
    i0 = np.floor(p)
    f = p - i0
    if order == LINEAR:
        w[0] = 1.0 - f
        w[1] = f
        return int(i0)
    f2 = f * f
    f3 = f2 * f
    w[0] = 0.5 * (-f3 + 2.0 * f2 - f)
    w[1] = 0.5 * (3.0 * f3 - 5.0 * f2 + 2.0)
    w[2] = 0.5 * (-3.0 * f3 + 4.0 * f2 + f)
    w[3] = 0.5 * (f3 - f2)
    return int(i0) - 1


@numba.njit(cache=True)
def _gather_chunk(field, dirs, times, tw, base, dev, has_dev, sw, has_sw, inv_h, order, v0, v1, out):
    nt = field.shape[0]
    n = field.shape[1]
    ntap = 2 if order == LINEAR else 4
    wx = np.empty(4)
    wy = np.empty(4)
    wz = np.empty(4)
    for v in range(v0, v1):
        for b in range(base.shape[0]):
            acc = 0.0
            for j in range(nt):
                px = base[b, 0] + times[j] * dirs[v, 0] * inv_h
                py = base[b, 1] + times[j] * dirs[v, 1] * inv_h
                pz = base[b, 2] + times[j] * dirs[v, 2] * inv_h
                if has_dev:
                    px += dev[v, b, j, 0] * inv_h
                    py += dev[v, b, j, 1] * inv_h
                    pz += dev[v, b, j, 2] * inv_h
                ix = _taps(px, order, wx)
                iy = _taps(py, order, wy)
                iz = _taps(pz, order, wz)
                s = 0.0
                for a in range(ntap):
                    xa = (ix + a) % n
                    sa = 0.0
                    for c in range(ntap):
                        yc = (iy + c) % n
                        sc = 0.0
                        for e in range(ntap):
                            sc += wz[e] * field[j, xa, yc, (iz + e) % n]
                        sa += wy[c] * sc
                    s += wx[a] * sa
                if has_sw:
                    s *= sw[v, b, j]
                acc += tw[j] * s
            out[b, v] = acc


@numba.njit(cache=True)
def _scatter_chunk(data, dirs, dweights, times, tw, base, dev, has_dev, sw, has_sw, inv_h, order, j0, j1, out):
    n = out.shape[1]
    ntap = 2 if order == LINEAR else 4
    wx = np.empty(4)
    wy = np.empty(4)
    wz = np.empty(4)
    for j in range(j0, j1):
        for v in range(dirs.shape[0]):
            for b in range(base.shape[0]):
                d = data[b, v] * dweights[v]
                if d == 0.0:
                    continue
                px = base[b, 0] + times[j] * dirs[v, 0] * inv_h
                py = base[b, 1] + times[j] * dirs[v, 1] * inv_h
                pz = base[b, 2] + times[j] * dirs[v, 2] * inv_h
                if has_dev:
                    px += dev[v, b, j, 0] * inv_h
                    py += dev[v, b, j, 1] * inv_h
                    pz += dev[v, b, j, 2] * inv_h
                ix = _taps(px, order, wx)
                iy = _taps(py, order, wy)
                iz = _taps(pz, order, wz)
                s = tw[j] * d
                if has_sw:
                    s *= sw[v, b, j]
                for a in range(ntap):
                    xa = (ix + a) % n
                    sa = s * wx[a]
                    for c in range(ntap):
                        yc = (iy + c) % n
                        sc = sa * wy[c]
                        for e in range(ntap):
                            out[j, xa, yc, (iz + e) % n] += sc * wz[e]


@numba.njit(cache=True, inline="always")
def _wrap(i, n):
    i = i % n
    return i, (i + 1) if i + 1 < n else 0


@numba.njit(cache=True)
def _gather_linear(field, dirs, times, tw, base, dev, has_dev, sw, has_sw, inv_h, v0, v1, out):
    nt = field.shape[0]
    n = field.shape[1]
    for v in range(v0, v1):
        for b in range(base.shape[0]):
            acc = 0.0
            for j in range(nt):
                px = base[b, 0] + times[j] * dirs[v, 0] * inv_h
                py = base[b, 1] + times[j] * dirs[v, 1] * inv_h
                pz = base[b, 2] + times[j] * dirs[v, 2] * inv_h
                if has_dev:
                    px += dev[v, b, j, 0] * inv_h
                    py += dev[v, b, j, 1] * inv_h
                    pz += dev[v, b, j, 2] * inv_h
                fx = np.floor(px)
                fy = np.floor(py)
                fz = np.floor(pz)
                ax = px - fx
                ay = py - fy
                az = pz - fz
                x0, x1 = _wrap(int(fx), n)
                y0, y1 = _wrap(int(fy), n)
                z0, z1 = _wrap(int(fz), n)
                c00 = (1.0 - az) * field[j, x0, y0, z0] + az * field[j, x0, y0, z1]
                c01 = (1.0 - az) * field[j, x0, y1, z0] + az * field[j, x0, y1, z1]
                c10 = (1.0 - az) * field[j, x1, y0, z0] + az * field[j, x1, y0, z1]
                c11 = (1.0 - az) * field[j, x1, y1, z0] + az * field[j, x1, y1, z1]
                s = (1.0 - ax) * ((1.0 - ay) * c00 + ay * c01) + ax * ((1.0 - ay) * c10 + ay * c11)
                if has_sw:
                    s *= sw[v, b, j]
                acc += tw[j] * s
            out[b, v] = acc


@numba.njit(cache=True)
def _scatter_linear(data, dirs, dweights, times, tw, base, dev, has_dev, sw, has_sw, inv_h, j0, j1, out):
    n = out.shape[1]
    for j in range(j0, j1):
        for v in range(dirs.shape[0]):
            for b in range(base.shape[0]):
                d = data[b, v] * dweights[v]
                if d == 0.0:
                    continue
                px = base[b, 0] + times[j] * dirs[v, 0] * inv_h
                py = base[b, 1] + times[j] * dirs[v, 1] * inv_h
                pz = base[b, 2] + times[j] * dirs[v, 2] * inv_h
                if has_dev:
                    px += dev[v, b, j, 0] * inv_h
                    py += dev[v, b, j, 1] * inv_h
                    pz += dev[v, b, j, 2] * inv_h
                fx = np.floor(px)
                fy = np.floor(py)
                fz = np.floor(pz)
                ax = px - fx
                ay = py - fy
                az = pz - fz
                x0, x1 = _wrap(int(fx), n)
                y0, y1 = _wrap(int(fy), n)
                z0, z1 = _wrap(int(fz), n)
                s = tw[j] * d
                if has_sw:
                    s *= sw[v, b, j]
                sx0 = s * (1.0 - ax)
                sx1 = s * ax
                s00 = sx0 * (1.0 - ay)
                s01 = sx0 * ay
                s10 = sx1 * (1.0 - ay)
                s11 = sx1 * ay
                out[j, x0, y0, z0] += s00 * (1.0 - az)
                out[j, x0, y0, z1] += s00 * az
                out[j, x0, y1, z0] += s01 * (1.0 - az)
                out[j, x0, y1, z1] += s01 * az
                out[j, x1, y0, z0] += s10 * (1.0 - az)
                out[j, x1, y0, z1] += s10 * az
                out[j, x1, y1, z0] += s11 * (1.0 - az)
                out[j, x1, y1, z1] += s11 * az


@numba.njit(cache=True, parallel=True)
def gather(field, dirs, times, tw, base, dev, has_dev, sw, has_sw, inv_h, order, nchunk):
    nd = dirs.shape[0]
    out = np.zeros((base.shape[0], nd))
    for k in numba.prange(nchunk):
        v0 = (k * nd) // nchunk
        v1 = ((k + 1) * nd) // nchunk
        if order == LINEAR:
            _gather_linear(field, dirs, times, tw, base, dev, has_dev, sw, has_sw, inv_h, v0, v1, out)
        else:
            _gather_chunk(field, dirs, times, tw, base, dev, has_dev, sw, has_sw, inv_h, order, v0, v1, out)
    return out


@numba.njit(cache=True, parallel=True)
def scatter(data, dirs, dweights, times, tw, base, dev, has_dev, sw, has_sw, inv_h, order, nt, n):
    # each time slice is owned by one task, so the sum order never depends on threads
    out = np.zeros((nt, n, n, n))
    for j in numba.prange(nt):
        if order == LINEAR:
            _scatter_linear(data, dirs, dweights, times, tw, base, dev, has_dev, sw, has_sw, inv_h, j, j + 1, out)
        else:
            _scatter_chunk(data, dirs, dweights, times, tw, base, dev, has_dev, sw, has_sw, inv_h, order, j, j + 1, out)
    return out


TRACE_OK = 0
TRACE_TURNING = 1
TRACE_SINGULAR = 2


@numba.njit(cache=True, inline="always")
def _raise_index(amp, kv, ph, t, x, cov, G, dp):
    """``G = g^{-1} cov`` and ``dp = d_x p`` at ``(t, x)``; returns ``det g``."""
    m = amp.shape[0]
    a = np.empty((4, 5))
    for i in range(4):
        for j in range(4):
            a[i, j] = 0.0
        a[i, 4] = cov[i]
    a[0, 0] = -1.0
    a[1, 1] = 1.0
    a[2, 2] = 1.0
    a[3, 3] = 1.0
    sn = np.empty(m)
    for q in range(m):
        phase = ph[q] + t * kv[q, 0] + x[0] * kv[q, 1] + x[1] * kv[q, 2] + x[2] * kv[q, 3]
        cq = np.cos(phase)
        sn[q] = np.sin(phase)
        for i in range(4):
            for j in range(4):
                a[i, j] += cq * amp[q, i, j]
    det = 1.0
    for col in range(4):
        piv = col
        for r in range(col + 1, 4):
            if abs(a[r, col]) > abs(a[piv, col]):
                piv = r
        if piv != col:
            det = -det
            for j in range(5):
                tmp = a[col, j]
                a[col, j] = a[piv, j]
                a[piv, j] = tmp
        det *= a[col, col]
        if a[col, col] == 0.0:
            return 0.0
        for r in range(col + 1, 4):
            f = a[r, col] / a[col, col]
            for j in range(col, 5):
                a[r, j] -= f * a[col, j]
    for i in range(3, -1, -1):
        s = a[i, 4]
        for j in range(i + 1, 4):
            s -= a[i, j] * G[j]
        G[i] = s / a[i, i]
    for u in range(4):
        dp[u] = 0.0
    for q in range(m):
        s = 0.0
        for i in range(4):
            for j in range(4):
                s += G[i] * amp[q, i, j] * G[j]
        s *= 0.5 * sn[q]
        for u in range(4):
            dp[u] += s * kv[q, u]
    return det


@numba.njit(cache=True, inline="always")
def _trace_rhs(amp, kv, ph, t, x, cov, kx, kc, G, dp):
    det = _raise_index(amp, kv, ph, t, x, cov, G, dp)
    if not det < -1e-12:
        return TRACE_SINGULAR
    g0 = G[0]
    if abs(g0) < 0.1:
        return TRACE_TURNING
    for i in range(3):
        kx[i] = G[i + 1] / g0
    for i in range(4):
        kc[i] = -dp[i] / g0
    return TRACE_OK


@numba.njit(cache=True, parallel=True)
def trace(amp, kv, ph, y, cov0, times, substeps):
    """RK4 in coordinate time for null bicharacteristics of ``eta + h``.

    Returns positions (nt, N, 3), covectors (nt, N, 4), the Hamiltonian and
    ``dt/ds`` at every sample (nt, N), and a per-ray status.
    """
    nt = times.shape[0]
    nr = y.shape[0]
    xs = np.empty((nt, nr, 3))
    cs = np.empty((nt, nr, 4))
    ham = np.zeros((nt, nr))
    g0 = np.ones((nt, nr))
    status = np.zeros(nr, dtype=np.int64)
    for r in numba.prange(nr):
        x = y[r].copy()
        c = cov0[r].copy()
        xt = np.empty(3)
        ct = np.empty(4)
        kx = np.empty((4, 3))
        kc = np.empty((4, 4))
        G = np.empty(4)
        dp = np.empty(4)
        xs[0, r] = x
        cs[0, r] = c
        _raise_index(amp, kv, ph, times[0], x, c, G, dp)
        ham[0, r] = 0.5 * (c[0] * G[0] + c[1] * G[1] + c[2] * G[2] + c[3] * G[3])
        g0[0, r] = G[0]
        for j in range(nt - 1):
            if status[r] != TRACE_OK:
                break
            dt = (times[j + 1] - times[j]) / substeps
            t = times[j]
            for _ in range(substeps):
                for stage in range(4):
                    fac = 0.0 if stage == 0 else (dt if stage == 3 else 0.5 * dt)
                    ts = t + fac
                    for i in range(3):
                        xt[i] = x[i] + (fac * kx[stage - 1, i] if stage > 0 else 0.0)
                    for i in range(4):
                        ct[i] = c[i] + (fac * kc[stage - 1, i] if stage > 0 else 0.0)
                    st = _trace_rhs(amp, kv, ph, ts, xt, ct, kx[stage], kc[stage], G, dp)
                    if st != TRACE_OK:
                        status[r] = st
                        break
                if status[r] != TRACE_OK:
                    break
                for i in range(3):
                    x[i] += dt / 6.0 * (kx[0, i] + 2.0 * kx[1, i] + 2.0 * kx[2, i] + kx[3, i])
                for i in range(4):
                    c[i] += dt / 6.0 * (kc[0, i] + 2.0 * kc[1, i] + 2.0 * kc[2, i] + kc[3, i])
                t += dt
            xs[j + 1, r] = x
            cs[j + 1, r] = c
            _raise_index(amp, kv, ph, times[j + 1], x, c, G, dp)
            ham[j + 1, r] = 0.5 * (c[0] * G[0] + c[1] * G[1] + c[2] * G[2] + c[3] * G[3])
            g0[j + 1, r] = G[0]
    return xs, cs, ham, g0, status
