"""Pure-numpy implementations of the sequential hot kernels.

Same signatures as the compiled `_kernels` extension; one of the two is
selected at import time by `visr.backend`. Everything here is plain
numpy on float64 arrays, no autodiff awareness: the tape ops in
`visr.nn.tensor` wrap these pairs of forward/backward functions.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "py"


# ---------------------------------------------------------------------------
# Continuous integrate-and-fire
# ---------------------------------------------------------------------------

def cif_forward(h, alpha, beta, residue_threshold, force_count):
    """Accumulate per-frame weights and fire one vector per threshold crossing.

    h: [T, D] frame states, alpha: [T] nonnegative weights.
    force_count >= 0 pins the number of fired vectors (training mode: alpha
    is pre-scaled so it sums to force_count); force_count == -1 fires freely
    and keeps a trailing accumulation only if it reaches residue_threshold.

    Returns (fired [N, D], weights [N, T], fires_per_frame int32 [T]).
    weights[n, t] is the portion of alpha[t] integrated into fired vector n,
    so fired = weights @ h exactly; the backward pass replays this structure.
    """
    T, D = h.shape
    forced = force_count >= 0
    rows: list[np.ndarray] = []
    fired: list[np.ndarray] = []
    fires_per_frame = np.zeros(T, dtype=np.int32)

    acc = 0.0
    pend = np.zeros(D)
    wrow = np.zeros(T)
    for t in range(T):
        a = float(alpha[t])
        while acc + a >= beta and not (forced and len(fired) >= force_count):
            use = beta - acc
            wrow[t] = use
            fired.append(pend + use * h[t])
            rows.append(wrow)
            fires_per_frame[t] += 1
            a -= use
            acc = 0.0
            pend = np.zeros(D)
            wrow = np.zeros(T)
        acc += a
        pend = pend + a * h[t]
        wrow[t] += a

    if forced:
        while len(fired) < force_count:
            fired.append(pend)
            rows.append(wrow)
            acc = 0.0
            pend = np.zeros(D)
            wrow = np.zeros(T)
    elif acc >= residue_threshold:
        fired.append(pend)
        rows.append(wrow)

    n = len(fired)
    out = np.array(fired) if n else np.zeros((0, D))
    weights = np.array(rows) if n else np.zeros((0, T))
    return out, weights, fires_per_frame


def cif_backward(g_fired, h, weights, fires_per_frame):
    """Gradients of the fired vectors w.r.t. h and alpha.

    Within a fixed firing pattern the weights are affine in alpha, so the
    backward pass replays the recorded pattern in reverse, carrying the
    adjoint of the running accumulator across frames.
    """
    n, T = weights.shape
    dh = weights.T @ g_fired
    dalpha = np.zeros(T)
    if n == 0:
        return dh, dalpha

    # m[i, t] = d loss / d weights[i, t]
    m = g_fired @ h.T
    fires_after = np.cumsum(fires_per_frame)
    gacc = 0.0
    for t in range(T - 1, -1, -1):
        pend_row = int(fires_after[t])
        m_pend = m[pend_row, t] if pend_row < n else 0.0
        ga = gacc + m_pend
        k = int(fires_per_frame[t])
        if k == 0:
            dalpha[t] = ga
        else:
            first_row = pend_row - k
            dalpha[t] = ga
            gacc = ga - m[first_row, t]
    return dh, dalpha


# ---------------------------------------------------------------------------
# LSTM recurrence (gate order i, f, g, o; h0 = c0 = 0)
# ---------------------------------------------------------------------------

def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def lstm_forward(xw, w_hh):
    """Run the recurrence given precomputed input projections.

    xw: [K, 4H] rows of W_ih @ x_t + b; w_hh: [4H, H].
    Returns (hs [K, H], cs [K, H], acts [K, 4H]) with acts holding the
    post-activation gates (i, f, g, o) needed by the backward pass.
    """
    K = xw.shape[0]
    H = w_hh.shape[1]
    hs = np.zeros((K, H))
    cs = np.zeros((K, H))
    acts = np.zeros((K, 4 * H))
    h = np.zeros(H)
    c = np.zeros(H)
    for t in range(K):
        z = xw[t] + w_hh @ h
        i = _sigmoid(z[:H])
        f = _sigmoid(z[H:2 * H])
        g = np.tanh(z[2 * H:3 * H])
        o = _sigmoid(z[3 * H:])
        c = f * c + i * g
        h = o * np.tanh(c)
        hs[t] = h
        cs[t] = c
        acts[t, :H] = i
        acts[t, H:2 * H] = f
        acts[t, 2 * H:3 * H] = g
        acts[t, 3 * H:] = o
    return hs, cs, acts


def lstm_backward(g_hs, w_hh, hs, cs, acts):
    """Backprop through time; returns pre-activation gate grads dz [K, 4H].

    The caller finishes with BLAS: dxw = dz, dW_hh = dz[1:].T @ hs[:-1].
    """
    K, H = g_hs.shape
    dz = np.zeros((K, 4 * H))
    dh = np.zeros(H)
    dc = np.zeros(H)
    for t in range(K - 1, -1, -1):
        i = acts[t, :H]
        f = acts[t, H:2 * H]
        g = acts[t, 2 * H:3 * H]
        o = acts[t, 3 * H:]
        c = cs[t]
        c_prev = cs[t - 1] if t > 0 else np.zeros(H)
        tc = np.tanh(c)
        dh = dh + g_hs[t]
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dz[t, :H] = di * i * (1.0 - i)
        dz[t, H:2 * H] = df * f * (1.0 - f)
        dz[t, 2 * H:3 * H] = dg * (1.0 - g * g)
        dz[t, 3 * H:] = do * o * (1.0 - o)
        dh = dz[t] @ w_hh
        dc = dc * f
    return dz


# ---------------------------------------------------------------------------
# DFSMN memory branch: depthwise FIR over the time axis, centered window
# ---------------------------------------------------------------------------

def dfsmn_forward(x, kern):
    """out[t, d] = sum_j kern[d, j] * x[t + j - half, d], zero-padded.

    x: [T, D], kern: [D, KW] with KW odd.
    """
    T, D = x.shape
    KW = kern.shape[1]
    half = KW // 2
    xp = np.zeros((T + KW - 1, D))
    xp[half:half + T] = x
    win = np.lib.stride_tricks.sliding_window_view(xp, KW, axis=0)  # [T, D, KW]
    return np.einsum("tdj,dj->td", win, kern)


def dfsmn_backward(g, x, kern):
    T, D = x.shape
    KW = kern.shape[1]
    half = KW // 2
    xp = np.zeros((T + KW - 1, D))
    xp[half:half + T] = x
    win = np.lib.stride_tricks.sliding_window_view(xp, KW, axis=0)
    dkern = np.einsum("tdj,td->dj", win, g)
    gp = np.zeros((T + KW - 1, D))
    gp[half:half + T] = g
    gwin = np.lib.stride_tricks.sliding_window_view(gp, KW, axis=0)
    dx = np.einsum("tdj,dj->td", gwin, kern[:, ::-1])
    return dx, dkern


# ---------------------------------------------------------------------------
# Word-level Levenshtein alignment
# ---------------------------------------------------------------------------

OP_MATCH, OP_SUB, OP_DEL, OP_INS = 0, 1, 2, 3


def levenshtein_ops(ref, hyp):
    """Edit distance with backtrace between two int32 id sequences.

    Returns (distance, ops uint8 array) where ops walks ref/hyp left to
    right with codes 0=match, 1=substitution, 2=deletion (ref word lost),
    3=insertion. Ties prefer diagonal, then deletion, then insertion, which
    keeps the alignment deterministic.
    """
    R = len(ref)
    H = len(hyp)
    dp = np.zeros((R + 1, H + 1), dtype=np.int64)
    dp[:, 0] = np.arange(R + 1)
    dp[0, :] = np.arange(H + 1)
    for i in range(1, R + 1):
        prev = dp[i - 1]
        cur = dp[i]
        ri = ref[i - 1]
        for j in range(1, H + 1):
            d = prev[j - 1] + (0 if ri == hyp[j - 1] else 1)
            u = prev[j] + 1
            l = cur[j - 1] + 1
            cur[j] = min(d, u, l)
    ops = []
    i, j = R, H
    while i > 0 or j > 0:
        if i > 0 and j > 0:
            step = dp[i - 1, j - 1] + (0 if ref[i - 1] == hyp[j - 1] else 1)
            if step == dp[i, j]:
                ops.append(OP_MATCH if ref[i - 1] == hyp[j - 1] else OP_SUB)
                i -= 1
                j -= 1
                continue
        if i > 0 and dp[i - 1, j] + 1 == dp[i, j]:
            ops.append(OP_DEL)
            i -= 1
            continue
        ops.append(OP_INS)
        j -= 1
    ops.reverse()
    return int(dp[R, H]), np.array(ops, dtype=np.uint8)
