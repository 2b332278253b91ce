"""Hot inner loops: LSTM time recurrence (forward/backward) and forward kinematics.

Every kernel has two implementations: an explicit-loop version compiled with
``numba.njit`` and a vectorized pure-numpy version. Numba is used when it is
importable and ``IMUPOSE_DISABLE_NUMBA`` is unset or "0". The two paths
compute the same math but are not bitwise-equal to each other; each is
deterministic on its own.
"""
import math
import os

import numpy as np

_disabled = os.environ.get("IMUPOSE_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")

try:
    if _disabled:
        raise ImportError
    import numba

    NUMBA_ENABLED = True
except ImportError:
    numba = None
    NUMBA_ENABLED = False


def backend():
    return "numba" if NUMBA_ENABLED else "numpy"


def _sigmoid(z):
    # tanh form: no overflow warnings for large |z|
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _lstm_recurrence_numpy(xproj, w_hh, h0, c0):
    """Run one LSTM layer over time.

    xproj: (T, B, 4H) input projection incl. bias, gate order (i, f, g, o).
    w_hh: (4H, H) recurrent weights.
    Returns hs, cs (T, B, H) and post-activation gates acts (T, B, 4H).
    """
    T, B, G = xproj.shape
    H = G // 4
    hs = np.empty((T, B, H))
    cs = np.empty((T, B, H))
    acts = np.empty((T, B, G))
    h = h0.copy()
    c = c0.copy()
    for t in range(T):
        z = xproj[t] + np.dot(h, w_hh.T)
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H:2 * H])
        g = np.tanh(z[:, 2 * H:3 * H])
        o = _sigmoid(z[:, 3 * H:])
        c = f * c + i * g
        h = o * np.tanh(c)
        acts[t, :, :H] = i
        acts[t, :, H:2 * H] = f
        acts[t, :, 2 * H:3 * H] = g
        acts[t, :, 3 * H:] = o
        hs[t] = h
        cs[t] = c
    return hs, cs, acts


def _lstm_recurrence_backward_numpy(dhs, acts, cs, c0, w_hh, dh_last, dc_last):
    """Backpropagate through one LSTM layer's recurrence.

    dhs: (T, B, H) upstream gradient on every hidden output.
    w_hh: (4H, H) recurrent weights (untransposed).
    Returns dz (T, B, 4H) pre-activation gate gradients, dh0, dc0.
    """
    T, B, H = dhs.shape
    dz = np.empty((T, B, 4 * H))
    dh = dh_last.copy()
    dc = dc_last.copy()
    for t in range(T - 1, -1, -1):
        i = acts[t, :, :H]
        f = acts[t, :, H:2 * H]
        g = acts[t, :, 2 * H:3 * H]
        o = acts[t, :, 3 * H:]
        if t > 0:
            c_prev = cs[t - 1]
        else:
            c_prev = c0
        tc = np.tanh(cs[t])
        dh_t = dhs[t] + dh
        dc_t = dc + dh_t * o * (1.0 - tc * tc)
        dz[t, :, :H] = dc_t * g * i * (1.0 - i)
        dz[t, :, H:2 * H] = dc_t * c_prev * f * (1.0 - f)
        dz[t, :, 2 * H:3 * H] = dc_t * i * (1.0 - g * g)
        dz[t, :, 3 * H:] = dh_t * tc * o * (1.0 - o)
        dh = np.dot(dz[t], w_hh)
        dc = dc_t * f
    return dz, dh, dc


def _lstm_recurrence_loop(xproj, w_hh, h0, c0):
    T, B, G = xproj.shape
    H = G // 4
    hs = np.empty((T, B, H))
    cs = np.empty((T, B, H))
    acts = np.empty((T, B, G))
    h = h0.copy()
    c = c0.copy()
    for t in range(T):
        z = np.dot(h, w_hh.T)
        for b in range(B):
            for k in range(H):
                # scalar exp is cheaper than scalar tanh here
                i = 1.0 / (1.0 + math.exp(-(z[b, k] + xproj[t, b, k])))
                f = 1.0 / (1.0 + math.exp(-(z[b, H + k] + xproj[t, b, H + k])))
                g = math.tanh(z[b, 2 * H + k] + xproj[t, b, 2 * H + k])
                o = 1.0 / (1.0 + math.exp(-(z[b, 3 * H + k] + xproj[t, b, 3 * H + k])))
                cn = f * c[b, k] + i * g
                hn = o * math.tanh(cn)
                acts[t, b, k] = i
                acts[t, b, H + k] = f
                acts[t, b, 2 * H + k] = g
                acts[t, b, 3 * H + k] = o
                c[b, k] = cn
                h[b, k] = hn
                cs[t, b, k] = cn
                hs[t, b, k] = hn
    return hs, cs, acts


def _lstm_recurrence_backward_loop(dhs, acts, cs, c0, w_hh, dh_last, dc_last):
    T, B, H = dhs.shape
    dz = np.empty((T, B, 4 * H))
    dzt = np.empty((B, 4 * H))
    dh = dh_last.copy()
    dc = dc_last.copy()
    for t in range(T - 1, -1, -1):
        for b in range(B):
            for k in range(H):
                i = acts[t, b, k]
                f = acts[t, b, H + k]
                g = acts[t, b, 2 * H + k]
                o = acts[t, b, 3 * H + k]
                c_prev = cs[t - 1, b, k] if t > 0 else c0[b, k]
                tc = math.tanh(cs[t, b, k])
                dh_t = dhs[t, b, k] + dh[b, k]
                dc_t = dc[b, k] + dh_t * o * (1.0 - tc * tc)
                dzt[b, k] = dc_t * g * i * (1.0 - i)
                dzt[b, H + k] = dc_t * c_prev * f * (1.0 - f)
                dzt[b, 2 * H + k] = dc_t * i * (1.0 - g * g)
                dzt[b, 3 * H + k] = dh_t * tc * o * (1.0 - o)
                dc[b, k] = dc_t * f
        dz[t] = dzt
        dh = np.dot(dzt, w_hh)
    return dz, dh, dc


# lstm_recurrence(xproj (T, B, 4H) incl. bias, w_hh (4H, H), h0, c0 (B, H))
# -> hs, cs (T, B, H), post-activation gates (T, B, 4H); gate order (i, f, g, o).
# lstm_recurrence_backward(dhs, acts, cs, c0, w_hh (4H, H), dh_last, dc_last)
# -> pre-activation gate grads dz (T, B, 4H), dh0, dc0.
if NUMBA_ENABLED:
    lstm_recurrence = numba.njit(cache=True, nogil=True)(_lstm_recurrence_loop)
    lstm_recurrence_backward = numba.njit(cache=True, nogil=True)(_lstm_recurrence_backward_loop)
else:
    lstm_recurrence = _lstm_recurrence_numpy
    lstm_recurrence_backward = _lstm_recurrence_backward_numpy


# fk_positions(rotations (F, J, 3, 3), parents (J,) with root -1, offsets (J, 3))
# -> (F, J, 3) joint positions with the root pinned at the origin.
def _fk_positions_loop(rotations, parents, offsets):
    F, J = rotations.shape[0], rotations.shape[1]
    out = np.zeros((F, J, 3))
    for n in range(F):
        for j in range(J):
            p = parents[j]
            if p < 0:
                continue
            for a in range(3):
                acc = 0.0
                for b in range(3):
                    acc += rotations[n, p, a, b] * offsets[j, b]
                out[n, j, a] = out[n, p, a] + acc
    return out


def _fk_positions_numpy(rotations, parents, offsets):
    F, J = rotations.shape[0], rotations.shape[1]
    out = np.zeros((F, J, 3))
    for j in range(J):
        p = parents[j]
        if p < 0:
            continue
        out[:, j] = out[:, p] + rotations[:, p] @ offsets[j]
    return out


if NUMBA_ENABLED:
    fk_positions = numba.njit(cache=True, nogil=True)(_fk_positions_loop)
else:
    fk_positions = _fk_positions_numpy
