"""Compiled inner loops for the LSTM forward and backward passes.

These kernels carry the per-timestep recurrence, which dominates runtime.
They operate on raw float64 arrays; all shape/validity checking lives in
`network`, which is the only caller. Gate packing along the 4p axis is
(i, f, g, o) everywhere.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def lstm_layer_forward(w_ih, w_hh, b_ih, b_hh, h0, c0, x, tanh_candidate):
    """Run one LSTM layer over a (T, d) sequence.

    Returns (hfull, cfull, gi, gf, gg, go) where hfull/cfull have shape
    (T+1, p) with row 0 holding the initial state, and the gate arrays have
    shape (T, p). hfull[1:] is the layer's hidden output sequence.
    """
    T = x.shape[0]
    p = h0.shape[0]
    # Input projections for the whole sequence in one BLAS call.
    pre_in = np.dot(x, w_ih.T)
    hfull = np.empty((T + 1, p))
    cfull = np.empty((T + 1, p))
    gi = np.empty((T, p))
    gf = np.empty((T, p))
    gg = np.empty((T, p))
    go = np.empty((T, p))
    hfull[0] = h0
    cfull[0] = c0
    for t in range(T):
        rec = np.dot(w_hh, hfull[t])
        for j in range(p):
            ai = pre_in[t, j] + b_ih[j] + b_hh[j] + rec[j]
            af = pre_in[t, p + j] + b_ih[p + j] + b_hh[p + j] + rec[p + j]
            ag = pre_in[t, 2 * p + j] + b_ih[2 * p + j] + b_hh[2 * p + j] + rec[2 * p + j]
            ao = pre_in[t, 3 * p + j] + b_ih[3 * p + j] + b_hh[3 * p + j] + rec[3 * p + j]
            i_ = 1.0 / (1.0 + math.exp(-ai))
            f_ = 1.0 / (1.0 + math.exp(-af))
            if tanh_candidate:
                g_ = math.tanh(ag)
            else:
                g_ = 1.0 / (1.0 + math.exp(-ag))
            o_ = 1.0 / (1.0 + math.exp(-ao))
            c_ = f_ * cfull[t, j] + i_ * g_
            gi[t, j] = i_
            gf[t, j] = f_
            gg[t, j] = g_
            go[t, j] = o_
            cfull[t + 1, j] = c_
            hfull[t + 1, j] = o_ * math.tanh(c_)
    return hfull, cfull, gi, gf, gg, go


@njit(cache=True)
def lstm_layer_backward(w_ih, w_hh, x, hfull, cfull, gi, gf, gg, go, dh_out, tanh_candidate):
    """Backpropagate through one LSTM layer.

    dh_out is the (T, p) upstream gradient on the hidden output sequence.
    Returns (dw_ih, dw_hh, db, dh0, dc0, dx); db applies to both bias
    vectors since they enter the pre-activation as a plain sum.
    """
    T = x.shape[0]
    p = hfull.shape[1]
    dpre = np.empty((T, 4 * p))
    dh = np.zeros(p)
    dc = np.zeros(p)
    for t in range(T - 1, -1, -1):
        for j in range(p):
            dh_j = dh_out[t, j] + dh[j]
            tc = math.tanh(cfull[t + 1, j])
            do = dh_j * tc
            dc_j = dc[j] + dh_j * go[t, j] * (1.0 - tc * tc)
            di = dc_j * gg[t, j]
            df = dc_j * cfull[t, j]
            dg = dc_j * gi[t, j]
            dc[j] = dc_j * gf[t, j]
            dpre[t, j] = di * gi[t, j] * (1.0 - gi[t, j])
            dpre[t, p + j] = df * gf[t, j] * (1.0 - gf[t, j])
            if tanh_candidate:
                dpre[t, 2 * p + j] = dg * (1.0 - gg[t, j] * gg[t, j])
            else:
                dpre[t, 2 * p + j] = dg * gg[t, j] * (1.0 - gg[t, j])
            dpre[t, 3 * p + j] = do * go[t, j] * (1.0 - go[t, j])
        dh = np.dot(w_hh.T, dpre[t])
    dw_ih = np.dot(dpre.T, x)
    dw_hh = np.dot(dpre.T, hfull[:T])
    db = np.zeros(4 * p)
    for t in range(T):
        for a in range(4 * p):
            db[a] += dpre[t, a]
    dx = np.dot(dpre, w_ih)
    return dw_ih, dw_hh, db, dh, dc, dx
