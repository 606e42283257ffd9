"""Compiled per-step kernels: belief transition, posterior reweight, entropy,
and the LSTM forward pass. Must agree with numpy_backend to round-off."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, tanh

cnp.import_array()

NAME = "cython"


def transition_apply(cnp.ndarray[double, ndim=1] probs,
                     cnp.ndarray[double, ndim=2] matrix1d,
                     int k):
    cdef cnp.ndarray[double, ndim=1] out = np.empty(k * k * k)
    cdef cnp.ndarray[double, ndim=1] tmp = np.empty(k * k * k)
    cdef double[:] src = probs
    cdef double[:] dst = out
    cdef double[:] mid = tmp
    cdef double[:, :] t1 = matrix1d
    cdef int a, b, c, m
    cdef double acc

    # axis 0
    for a in range(k):
        for b in range(k):
            for c in range(k):
                acc = 0.0
                for m in range(k):
                    acc += t1[a, m] * src[(m * k + b) * k + c]
                mid[(a * k + b) * k + c] = acc
    # axis 1
    for a in range(k):
        for b in range(k):
            for c in range(k):
                acc = 0.0
                for m in range(k):
                    acc += t1[b, m] * mid[(a * k + m) * k + c]
                dst[(a * k + b) * k + c] = acc
    # axis 2
    for a in range(k):
        for b in range(k):
            for c in range(k):
                acc = 0.0
                for m in range(k):
                    acc += t1[c, m] * dst[(a * k + b) * k + m]
                mid[(a * k + b) * k + c] = acc
    out[:] = tmp
    return out


def posterior_update(cnp.ndarray[double, ndim=1] pred,
                     cnp.ndarray[double, ndim=1] loglik):
    cdef int n = pred.shape[0]
    cdef cnp.ndarray[double, ndim=1] out = np.empty(n)
    cdef double[:] p = pred
    cdef double[:] ll = loglik
    cdef double[:] w = out
    cdef int i
    cdef double shift = ll[0]
    cdef double total = 0.0

    for i in range(1, n):
        if ll[i] > shift:
            shift = ll[i]
    if not (shift == shift and shift != float("inf") and shift != float("-inf")):
        out[:] = 1.0 / n
        return out, True
    for i in range(n):
        w[i] = p[i] * exp(ll[i] - shift)
        total += w[i]
    if not (total == total) or total <= 0.0:
        out[:] = 1.0 / n
        return out, True
    for i in range(n):
        w[i] /= total
    return out, False


def entropy(cnp.ndarray[double, ndim=1] probs):
    cdef double[:] p = probs
    cdef double acc = 0.0
    cdef int i
    for i in range(p.shape[0]):
        if p[i] > 0.0:
            acc -= p[i] * log(p[i])
    return acc


cdef inline double _sigmoid(double x):
    cdef double e
    if x >= 0.0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


def lstm_forward(cnp.ndarray[double, ndim=2] w_ih,
                 cnp.ndarray[double, ndim=2] w_hh,
                 cnp.ndarray[double, ndim=1] b_ih,
                 cnp.ndarray[double, ndim=1] b_hh,
                 cnp.ndarray[double, ndim=2] w_out,
                 cnp.ndarray[double, ndim=1] b_out,
                 cnp.ndarray[double, ndim=2] window,
                 int horizon):
    cdef int hidden = w_hh.shape[1]
    cdef int d = w_ih.shape[1]
    cdef int w_len = window.shape[0]
    cdef cnp.ndarray[double, ndim=1] h_arr = np.zeros(hidden)
    cdef cnp.ndarray[double, ndim=1] c_arr = np.zeros(hidden)
    cdef cnp.ndarray[double, ndim=1] h_final = np.empty(hidden)
    cdef cnp.ndarray[double, ndim=1] ents = np.empty(horizon)
    cdef cnp.ndarray[double, ndim=1] logits = np.empty(horizon)
    cdef cnp.ndarray[double, ndim=1] z_arr = np.empty(4 * hidden)
    cdef cnp.ndarray[double, ndim=1] fb_arr = np.empty(d)
    cdef double[:] h = h_arr
    cdef double[:] c = c_arr
    cdef double[:] z = z_arr
    cdef double[:] fb = fb_arr
    cdef double[:, :] wih = w_ih
    cdef double[:, :] whh = w_hh
    cdef double[:] bih = b_ih
    cdef double[:] bhh = b_hh
    cdef double[:, :] wout = w_out
    cdef double[:] bout = b_out
    cdef double[:, :] win = window
    cdef int t, j, m, step
    cdef double acc, ig, fg, gg, og, e_pred, l_pred

    for t in range(w_len):
        _step(wih, whh, bih, bhh, win[t], h, c, z, hidden, d)
    h_final[:] = h_arr

    for j in range(d):
        fb[j] = win[w_len - 1, j]
    for step in range(horizon):
        e_pred = bout[0]
        l_pred = bout[1]
        for j in range(hidden):
            e_pred += wout[0, j] * h[j]
            l_pred += wout[1, j] * h[j]
        ents[step] = e_pred
        logits[step] = l_pred
        if step + 1 < horizon:
            fb[0] = e_pred
            _step(wih, whh, bih, bhh, fb, h, c, z, hidden, d)
    return h_final, ents, logits


cdef void _step(double[:, :] wih, double[:, :] whh, double[:] bih, double[:] bhh,
                double[:] x, double[:] h, double[:] c, double[:] z,
                int hidden, int d) noexcept:
    cdef int j, m
    cdef double acc, ig, fg, gg, og
    for j in range(4 * hidden):
        acc = bih[j] + bhh[j]
        for m in range(d):
            acc += wih[j, m] * x[m]
        for m in range(hidden):
            acc += whh[j, m] * h[m]
        z[j] = acc
    for j in range(hidden):
        ig = _sigmoid(z[j])
        fg = _sigmoid(z[hidden + j])
        gg = tanh(z[2 * hidden + j])
        og = _sigmoid(z[3 * hidden + j])
        c[j] = fg * c[j] + ig * gg
        h[j] = og * tanh(c[j])
