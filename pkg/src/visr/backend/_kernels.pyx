# cython: language_level=3
"""Compiled twin of `kernels_py`: identical signatures and semantics.

Matrix products still go through numpy (BLAS); the C loops cover the parts
numpy cannot vectorize — the integrate-and-fire scan, the LSTM recurrence,
the depthwise FIR window, and the edit-distance DP table.
"""

import numpy as np

cimport cython
cimport numpy as cnp
from libc.math cimport exp as c_exp
from libc.math cimport tanh as c_tanh

cnp.import_array()

BACKEND_NAME = "ext"


# ---------------------------------------------------------------------------
# Continuous integrate-and-fire
# ---------------------------------------------------------------------------

@cython.boundscheck(False)
@cython.wraparound(False)
def cif_forward(double[:, ::1] h, double[::1] alpha, double beta,
                double residue_threshold, int force_count):
    """See kernels_py.cif_forward; bit-identical arithmetic order."""
    cdef Py_ssize_t T = h.shape[0]
    cdef Py_ssize_t D = h.shape[1]
    cdef bint forced = force_count >= 0
    cdef Py_ssize_t t, d, n
    cdef double a, acc, use

    # pass 1: count fired vectors so the outputs can be allocated exactly
    cdef cnp.ndarray[cnp.int32_t, ndim=1] fires_np = np.zeros(T, dtype=np.int32)
    cdef int[::1] fires = fires_np
    n = 0
    acc = 0.0
    for t in range(T):
        a = alpha[t]
        while acc + a >= beta and not (forced and n >= force_count):
            use = beta - acc
            n += 1
            fires[t] += 1
            a -= use
            acc = 0.0
        acc += a
    cdef Py_ssize_t total = n
    if forced:
        total = force_count
    elif acc >= residue_threshold:
        total = n + 1

    cdef cnp.ndarray[cnp.float64_t, ndim=2] fired_np = np.zeros((total, D))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] weights_np = np.zeros((total, T))
    if total == 0:
        return fired_np, weights_np, fires_np
    cdef double[:, ::1] fired = fired_np
    cdef double[:, ::1] weights = weights_np

    # pass 2: replay, accumulating the pending vector in its output row
    cdef Py_ssize_t r = 0
    n = 0
    acc = 0.0
    for t in range(T):
        a = alpha[t]
        while acc + a >= beta and not (forced and n >= force_count):
            use = beta - acc
            weights[r, t] = use
            for d in range(D):
                fired[r, d] = fired[r, d] + use * h[t, d]
            n += 1
            r += 1
            a -= use
            acc = 0.0
        acc += a
        if r < total:
            weights[r, t] += a
            for d in range(D):
                fired[r, d] = fired[r, d] + a * h[t, d]
    return fired_np, weights_np, fires_np


@cython.boundscheck(False)
@cython.wraparound(False)
def cif_backward(object g_fired, object h, object weights, object fires_per_frame):
    """See kernels_py.cif_backward."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] dh = np.ascontiguousarray(weights).T @ np.ascontiguousarray(g_fired)
    cdef Py_ssize_t n = weights.shape[0]
    cdef Py_ssize_t T = weights.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dalpha_np = np.zeros(T)
    if n == 0:
        return dh, dalpha_np
    cdef cnp.ndarray[cnp.float64_t, ndim=2] m_np = np.ascontiguousarray(g_fired) @ np.ascontiguousarray(h).T
    cdef double[:, ::1] m = m_np
    cdef double[::1] dalpha = dalpha_np
    cdef int[::1] fires = np.ascontiguousarray(fires_per_frame, dtype=np.int32)
    cdef Py_ssize_t t, pend_row, first_row, k
    cdef Py_ssize_t after = 0
    for t in range(T):
        after += fires[t]
    cdef double gacc = 0.0
    cdef double ga, m_pend
    for t in range(T - 1, -1, -1):
        pend_row = after
        m_pend = m[pend_row, t] if pend_row < n else 0.0
        ga = gacc + m_pend
        k = fires[t]
        dalpha[t] = ga
        if k > 0:
            first_row = pend_row - k
            gacc = ga - m[first_row, t]
        after -= k
    return dh, dalpha_np


# ---------------------------------------------------------------------------
# LSTM recurrence (gate order i, f, g, o; h0 = c0 = 0)
# ---------------------------------------------------------------------------

cdef inline double c_sigmoid(double x) noexcept nogil:
    return 1.0 / (1.0 + c_exp(-x))


@cython.boundscheck(False)
@cython.wraparound(False)
def lstm_forward(double[:, ::1] xw, double[:, ::1] w_hh):
    """See kernels_py.lstm_forward (transcendentals via libm, so results can
    differ from the numpy backend in the last few ulps)."""
    cdef Py_ssize_t K = xw.shape[0]
    cdef Py_ssize_t H = w_hh.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] hs_np = np.zeros((K, H))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] cs_np = np.zeros((K, H))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] acts_np = np.zeros((K, 4 * H))
    cdef double[:, ::1] hs = hs_np
    cdef double[:, ::1] cs = cs_np
    cdef double[:, ::1] acts = acts_np
    cdef cnp.ndarray[cnp.float64_t, ndim=1] z_np = np.zeros(4 * H)
    cdef double[::1] z = z_np
    cdef Py_ssize_t t, j, d
    cdef double acc, iv, fv, gv, ov, cv
    for t in range(K):
        for j in range(4 * H):
            acc = xw[t, j]
            if t > 0:
                for d in range(H):
                    acc += w_hh[j, d] * hs[t - 1, d]
            z[j] = acc
        for d in range(H):
            iv = c_sigmoid(z[d])
            fv = c_sigmoid(z[H + d])
            gv = c_tanh(z[2 * H + d])
            ov = c_sigmoid(z[3 * H + d])
            cv = fv * (cs[t - 1, d] if t > 0 else 0.0) + iv * gv
            cs[t, d] = cv
            hs[t, d] = ov * c_tanh(cv)
            acts[t, d] = iv
            acts[t, H + d] = fv
            acts[t, 2 * H + d] = gv
            acts[t, 3 * H + d] = ov
    return hs_np, cs_np, acts_np


@cython.boundscheck(False)
@cython.wraparound(False)
def lstm_backward(double[:, ::1] g_hs, double[:, ::1] w_hh,
                  double[:, ::1] hs, double[:, ::1] cs, double[:, ::1] acts):
    """See kernels_py.lstm_backward; returns pre-activation grads dz [K, 4H]."""
    cdef Py_ssize_t K = g_hs.shape[0]
    cdef Py_ssize_t H = g_hs.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] dz_np = np.zeros((K, 4 * H))
    cdef double[:, ::1] dz = dz_np
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dh_np = np.zeros(H)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dc_np = np.zeros(H)
    cdef double[::1] dh = dh_np
    cdef double[::1] dc = dc_np
    cdef Py_ssize_t t, d, j
    cdef double iv, fv, gv, ov, tc, dhv, dcv, di, dg, df, do, c_prev, acc
    for t in range(K - 1, -1, -1):
        for d in range(H):
            iv = acts[t, d]
            fv = acts[t, H + d]
            gv = acts[t, 2 * H + d]
            ov = acts[t, 3 * H + d]
            tc = c_tanh(cs[t, d])
            c_prev = cs[t - 1, d] if t > 0 else 0.0
            dhv = dh[d] + g_hs[t, d]
            do = dhv * tc
            dcv = dc[d] + dhv * ov * (1.0 - tc * tc)
            di = dcv * gv
            dg = dcv * iv
            df = dcv * c_prev
            dz[t, d] = di * iv * (1.0 - iv)
            dz[t, H + d] = df * fv * (1.0 - fv)
            dz[t, 2 * H + d] = dg * (1.0 - gv * gv)
            dz[t, 3 * H + d] = do * ov * (1.0 - ov)
            dc[d] = dcv * fv
        for d in range(H):
            acc = 0.0
            for j in range(4 * H):
                acc += dz[t, j] * w_hh[j, d]
            dh[d] = acc
    return dz_np


# ---------------------------------------------------------------------------
# DFSMN memory branch: depthwise FIR over the time axis, centered window
# ---------------------------------------------------------------------------

@cython.boundscheck(False)
@cython.wraparound(False)
def dfsmn_forward(double[:, ::1] x, double[:, ::1] kern):
    """See kernels_py.dfsmn_forward."""
    cdef Py_ssize_t T = x.shape[0]
    cdef Py_ssize_t D = x.shape[1]
    cdef Py_ssize_t KW = kern.shape[1]
    cdef Py_ssize_t half = KW // 2
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out_np = np.zeros((T, D))
    cdef double[:, ::1] out = out_np
    cdef Py_ssize_t t, d, j, s
    cdef double acc
    for t in range(T):
        for d in range(D):
            acc = 0.0
            for j in range(KW):
                s = t + j - half
                if 0 <= s < T:
                    acc += kern[d, j] * x[s, d]
            out[t, d] = acc
    return out_np


@cython.boundscheck(False)
@cython.wraparound(False)
def dfsmn_backward(double[:, ::1] g, double[:, ::1] x, double[:, ::1] kern):
    """See kernels_py.dfsmn_backward; returns (dx, dkern)."""
    cdef Py_ssize_t T = x.shape[0]
    cdef Py_ssize_t D = x.shape[1]
    cdef Py_ssize_t KW = kern.shape[1]
    cdef Py_ssize_t half = KW // 2
    cdef cnp.ndarray[cnp.float64_t, ndim=2] dx_np = np.zeros((T, D))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] dk_np = np.zeros((D, KW))
    cdef double[:, ::1] dx = dx_np
    cdef double[:, ::1] dk = dk_np
    cdef Py_ssize_t t, d, j, s
    cdef double acc
    for t in range(T):
        for d in range(D):
            for j in range(KW):
                s = t + j - half
                if 0 <= s < T:
                    dk[d, j] += g[t, d] * x[s, d]
    for t in range(T):
        for d in range(D):
            acc = 0.0
            for j in range(KW):
                s = t + j - half
                if 0 <= s < T:
                    acc += g[s, d] * kern[d, KW - 1 - j]
            dx[t, d] = acc
    return dx_np, dk_np


# ---------------------------------------------------------------------------
# Word-level Levenshtein alignment
# ---------------------------------------------------------------------------

OP_MATCH, OP_SUB, OP_DEL, OP_INS = 0, 1, 2, 3


@cython.boundscheck(False)
@cython.wraparound(False)
def levenshtein_ops(object ref, object hyp):
    """See kernels_py.levenshtein_ops; identical tie-breaking."""
    cdef cnp.ndarray[cnp.int64_t, ndim=1] r_np = np.ascontiguousarray(ref, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] h_np = np.ascontiguousarray(hyp, dtype=np.int64)
    cdef long long[::1] r = r_np
    cdef long long[::1] hy = h_np
    cdef Py_ssize_t R = r.shape[0]
    cdef Py_ssize_t H = hy.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=2] dp_np = np.zeros((R + 1, H + 1), dtype=np.int64)
    cdef long long[:, ::1] dp = dp_np
    cdef Py_ssize_t i, j
    cdef long long d, u, l, best
    for i in range(R + 1):
        dp[i, 0] = i
    for j in range(H + 1):
        dp[0, j] = j
    for i in range(1, R + 1):
        for j in range(1, H + 1):
            d = dp[i - 1, j - 1] + (0 if r[i - 1] == hy[j - 1] else 1)
            u = dp[i - 1, j] + 1
            l = dp[i, j - 1] + 1
            best = d
            if u < best:
                best = u
            if l < best:
                best = l
            dp[i, j] = best
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] ops_np = np.zeros(R + H, dtype=np.uint8)
    cdef unsigned char[::1] ops = ops_np
    cdef Py_ssize_t pos = R + H
    i = R
    j = H
    while i > 0 or j > 0:
        if i > 0 and j > 0:
            d = dp[i - 1, j - 1] + (0 if r[i - 1] == hy[j - 1] else 1)
            if d == dp[i, j]:
                pos -= 1
                ops[pos] = OP_MATCH if r[i - 1] == hy[j - 1] else OP_SUB
                i -= 1
                j -= 1
                continue
        if i > 0 and dp[i - 1, j] + 1 == dp[i, j]:
            pos -= 1
            ops[pos] = OP_DEL
            i -= 1
            continue
        pos -= 1
        ops[pos] = OP_INS
        j -= 1
    return int(dp[R, H]), ops_np[pos:].copy()
