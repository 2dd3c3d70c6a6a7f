"""Pure numpy implementation of the symbolic bound pass (fallback backend)."""
from __future__ import annotations

import numpy as np


def _concretize(coef, const, flo, fhi):
    if coef.shape[1] == 0:
        return const.copy(), const.copy()
    pos = np.maximum(coef, 0.0)
    neg = np.minimum(coef, 0.0)
    low = const + pos @ flo + neg @ fhi
    high = const + pos @ fhi + neg @ flo
    return low, high


def symbolic_pass(wpos, wneg, biases, lo, hi, free, phases=None, prior_l=None, prior_u=None):
    """Forward symbolic interval propagation.

    ``wpos``/``wneg`` are the positive and negative parts of each layer's
    weights; every layer but the last is followed by a ReLU.  Each neuron
    keeps a lower and an upper affine form over the free inputs, unstable
    ReLUs are relaxed (chord above, slope 0 or 1 below) and concrete bounds
    are intersected with plain interval arithmetic, ``prior_*`` bounds and
    the fixed ReLU ``phases`` (+1 active, -1 inactive, 0 free).

    Returns ``(pre_l, pre_u, out_l, out_u, forms, feasible)`` where ``pre_*``
    hold the hidden pre-activation bounds per layer and ``forms`` is
    ``(lower_coef, lower_const, upper_coef, upper_const)`` for the last layer.
    """
    n_layers = len(biases)
    flo = lo[free]
    fhi = hi[free]
    d = free.size
    n_in = lo.size
    lc = np.zeros((n_in, d))
    lc[free, np.arange(d)] = 1.0
    lk = lo.copy()
    lk[free] = 0.0
    uc = lc.copy()
    uk = lk.copy()
    pl = lo.copy()
    pu = hi.copy()
    pre_l, pre_u = [], []
    feasible = True
    for t in range(n_layers):
        wp, wn, b = wpos[t], wneg[t], biases[t]
        plc = wp @ lc + wn @ uc
        plk = wp @ lk + wn @ uk + b
        puc = wp @ uc + wn @ lc
        puk = wp @ uk + wn @ lk + b
        lL, uL = _concretize(plc, plk, flo, fhi)
        lU, uU = _concretize(puc, puk, flo, fhi)
        il = wp @ pl + wn @ pu + b
        iu = wp @ pu + wn @ pl + b
        l = np.maximum(lL, il)
        u = np.minimum(uU, iu)
        if t == n_layers - 1:
            return pre_l, pre_u, l, u, (plc, plk, puc, puk), feasible
        if prior_l is not None:
            l = np.maximum(l, prior_l[t])
            u = np.minimum(u, prior_u[t])
        if phases is not None:
            ph = phases[t]
            l = np.where(ph > 0, np.maximum(l, 0.0), l)
            u = np.where(ph < 0, np.minimum(u, 0.0), u)
        if np.any(l > u):
            feasible = False
        pre_l.append(l)
        pre_u.append(u)

        dead = u <= 0.0
        live = l >= 0.0
        unstable = ~(dead | live)
        # upper form: chord from (lower of the upper form, 0) to (u, u)
        lam = np.ones_like(u)
        shift = np.zeros_like(u)
        chord = unstable & (lU < 0.0)
        lam[chord] = u[chord] / (u[chord] - lU[chord])
        shift[chord] = -lam[chord] * lU[chord]
        # lower form: keep when provably non-negative, else slope 0 or 1
        alpha = np.ones_like(u)
        low_relax = unstable & (lL < 0.0)
        alpha[low_relax & (uL <= 0.0)] = 0.0
        pick = low_relax & (uL > 0.0)
        alpha[pick] = np.where(u[pick] > -l[pick], 1.0, 0.0)
        lam[dead] = 0.0
        shift[dead] = 0.0
        alpha[dead] = 0.0
        lc = plc * alpha[:, None]
        lk = plk * alpha
        uc = puc * lam[:, None]
        uk = puk * lam + shift
        pl = np.where(dead, 0.0, np.maximum(l, 0.0))
        pu = np.where(dead, 0.0, np.maximum(u, 0.0))
    raise AssertionError("unreachable")
