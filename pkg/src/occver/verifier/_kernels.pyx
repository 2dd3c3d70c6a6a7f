# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled symbolic bound pass; mirrors ``_reference.symbolic_pass`` exactly.

Loops skip zero weights, which matters for the very sparse occlusion layers,
and neurons whose symbolic bounds are identically zero (inactive at this node).
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef void _concretize(double[:, ::1] coef, double[::1] const, double[::1] flo,
                      double[::1] fhi, double[::1] low, double[::1] high) noexcept nogil:
    cdef Py_ssize_t r, j
    cdef Py_ssize_t k = coef.shape[0]
    cdef Py_ssize_t d = coef.shape[1]
    cdef double s_lo, s_hi, cf
    for r in range(k):
        s_lo = const[r]
        s_hi = const[r]
        for j in range(d):
            cf = coef[r, j]
            if cf > 0.0:
                s_lo += cf * flo[j]
                s_hi += cf * fhi[j]
            elif cf < 0.0:
                s_lo += cf * fhi[j]
                s_hi += cf * flo[j]
        low[r] = s_lo
        high[r] = s_hi


def symbolic_pass(list wpos, list wneg, list biases, const double[::1] lo, const double[::1] hi,
                  const cnp.intp_t[::1] free, list phases=None, list prior_l=None, list prior_u=None):
    cdef Py_ssize_t n_layers = len(biases)
    cdef Py_ssize_t d = free.shape[0]
    cdef Py_ssize_t n_in = lo.shape[0]
    cdef Py_ssize_t t, r, j, q, k, n_prev
    cdef const double[:, ::1] wp
    cdef const double[:, ::1] wn
    cdef const double[::1] b
    cdef double[:, ::1] lc
    cdef double[::1] lk
    cdef double[:, ::1] uc
    cdef double[::1] uk
    cdef double[::1] pl
    cdef double[::1] pu
    cdef double[:, ::1] plc
    cdef double[::1] plk
    cdef double[:, ::1] puc
    cdef double[::1] puk
    cdef double[::1] lL, uL, lU, uU, l, u, il, iu
    cdef double[::1] flo = np.empty(d)
    cdef double[::1] fhi = np.empty(d)
    cdef const double[::1] prl
    cdef const double[::1] pru
    cdef const signed char[::1] ph
    cdef double w, lam, shift, alpha, vl, vu
    cdef unsigned char[::1] skip = np.zeros(n_in, dtype=np.uint8)
    cdef bint feasible = True
    cdef bint has_prior = prior_l is not None
    cdef bint has_phase = phases is not None

    for q in range(d):
        flo[q] = lo[free[q]]
        fhi[q] = hi[free[q]]
    lc_arr = np.zeros((n_in, d))
    lc = lc_arr
    lk_arr = np.asarray(lo).copy()
    lk = lk_arr
    for q in range(d):
        lc[free[q], q] = 1.0
        lk[free[q]] = 0.0
    uc = lc_arr.copy()
    uk = lk_arr.copy()
    pl = np.asarray(lo).copy()
    pu = np.asarray(hi).copy()
    pre_l = []
    pre_u = []

    for t in range(n_layers):
        wp = wpos[t]
        wn = wneg[t]
        b = biases[t]
        k = wp.shape[0]
        n_prev = wp.shape[1]
        plc_arr = np.zeros((k, d))
        puc_arr = np.zeros((k, d))
        plc = plc_arr
        puc = puc_arr
        plk_arr = np.asarray(b).copy()
        puk_arr = np.asarray(b).copy()
        plk = plk_arr
        puk = puk_arr
        il_arr = np.asarray(b).copy()
        iu_arr = np.asarray(b).copy()
        il = il_arr
        iu = iu_arr
        with nogil:
            for r in range(k):
                for j in range(n_prev):
                    if skip[j]:
                        continue
                    w = wp[r, j]
                    if w != 0.0:
                        for q in range(d):
                            plc[r, q] += w * lc[j, q]
                            puc[r, q] += w * uc[j, q]
                        plk[r] += w * lk[j]
                        puk[r] += w * uk[j]
                        il[r] += w * pl[j]
                        iu[r] += w * pu[j]
                    w = wn[r, j]
                    if w != 0.0:
                        for q in range(d):
                            plc[r, q] += w * uc[j, q]
                            puc[r, q] += w * lc[j, q]
                        plk[r] += w * uk[j]
                        puk[r] += w * lk[j]
                        il[r] += w * pu[j]
                        iu[r] += w * pl[j]
        lL = np.empty(k)
        uL = np.empty(k)
        lU = np.empty(k)
        uU = np.empty(k)
        _concretize(plc, plk, flo, fhi, lL, uL)
        _concretize(puc, puk, flo, fhi, lU, uU)
        l_arr = np.empty(k)
        u_arr = np.empty(k)
        l = l_arr
        u = u_arr
        for r in range(k):
            l[r] = lL[r] if lL[r] > il[r] else il[r]
            u[r] = uU[r] if uU[r] < iu[r] else iu[r]
        if t == n_layers - 1:
            return pre_l, pre_u, l_arr, u_arr, (plc_arr, plk_arr, puc_arr, puk_arr), feasible
        if has_prior:
            prl = prior_l[t]
            pru = prior_u[t]
            for r in range(k):
                if prl[r] > l[r]:
                    l[r] = prl[r]
                if pru[r] < u[r]:
                    u[r] = pru[r]
        if has_phase:
            ph = phases[t]
            for r in range(k):
                if ph[r] > 0 and l[r] < 0.0:
                    l[r] = 0.0
                elif ph[r] < 0 and u[r] > 0.0:
                    u[r] = 0.0
        for r in range(k):
            if l[r] > u[r]:
                feasible = False
        pre_l.append(l_arr)
        pre_u.append(u_arr)

        lc_arr = plc_arr
        uc_arr = puc_arr
        lc = lc_arr
        uc = uc_arr
        lk = plk
        uk = puk
        pl = np.empty(k)
        pu = np.empty(k)
        skip = np.zeros(k, dtype=np.uint8)
        for r in range(k):
            vl = l[r]
            vu = u[r]
            if vu <= 0.0:
                lam = 0.0
                shift = 0.0
                alpha = 0.0
                pl[r] = 0.0
                pu[r] = 0.0
                skip[r] = 1
            elif vl >= 0.0:
                lam = 1.0
                shift = 0.0
                alpha = 1.0
                pl[r] = vl
                pu[r] = vu
            else:
                if lU[r] < 0.0:
                    lam = vu / (vu - lU[r])
                    shift = -lam * lU[r]
                else:
                    lam = 1.0
                    shift = 0.0
                if lL[r] >= 0.0:
                    alpha = 1.0
                elif uL[r] <= 0.0:
                    alpha = 0.0
                else:
                    alpha = 1.0 if vu > -vl else 0.0
                pl[r] = 0.0
                pu[r] = vu
            for q in range(d):
                lc[r, q] = lc[r, q] * alpha
                uc[r, q] = uc[r, q] * lam
            lk[r] = lk[r] * alpha
            uk[r] = uk[r] * lam + shift
    raise AssertionError("unreachable")
