# cython: boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled per-client training kernels.

Mirrors ``fedcache._accel.fallback`` operation for operation: fused
edge-loop aggregation, small dense GEMMs, summed batch gradients and the
scaled-storage l2 decay. Results agree with the fallback to float64
rounding.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log1p

cnp.import_array()


cdef class CorePlan:
    cdef public cnp.int64_t[::1] eu_u, ei_u      # edges sorted by (user, item)
    cdef public cnp.int64_t[::1] eu_i, ei_i      # edges sorted by (item, user)
    cdef public double[::1] cf_u, cf_i
    cdef public cnp.int64_t[::1] au, ai
    cdef public Py_ssize_t n_au, n_ai, n_edges


def make_plan(ceu, cei, coeff, au, ai):
    cdef CorePlan plan = CorePlan()
    ceu = np.ascontiguousarray(ceu, dtype=np.int64)
    cei = np.ascontiguousarray(cei, dtype=np.int64)
    coeff = np.ascontiguousarray(coeff, dtype=np.float64)
    by_item = np.lexsort((ceu, cei))
    plan.eu_u = ceu
    plan.ei_u = cei
    plan.cf_u = coeff
    plan.eu_i = np.ascontiguousarray(ceu[by_item])
    plan.ei_i = np.ascontiguousarray(cei[by_item])
    plan.cf_i = np.ascontiguousarray(coeff[by_item])
    plan.au = np.ascontiguousarray(au, dtype=np.int64)
    plan.ai = np.ascontiguousarray(ai, dtype=np.int64)
    plan.n_au = len(plan.au)
    plan.n_ai = len(plan.ai)
    plan.n_edges = len(ceu)
    return plan


cdef void _agg_users(double[:, ::1] out, double[:, ::1] item_layer, CorePlan plan) noexcept:
    # out[u, :] += coeff * item_layer[i, :] over edges in (user, item) order
    cdef Py_ssize_t e, c, d = out.shape[1]
    cdef Py_ssize_t u, i
    cdef double cf
    for e in range(plan.n_edges):
        u = plan.eu_u[e]
        i = plan.ei_u[e]
        cf = plan.cf_u[e]
        for c in range(d):
            out[u, c] += cf * item_layer[i, c]


cdef void _agg_items(double[:, ::1] out, double[:, ::1] user_layer, CorePlan plan) noexcept:
    cdef Py_ssize_t e, c, d = out.shape[1]
    cdef Py_ssize_t u, i
    cdef double cf
    for e in range(plan.n_edges):
        u = plan.eu_i[e]
        i = plan.ei_i[e]
        cf = plan.cf_i[e]
        for c in range(d):
            out[i, c] += cf * user_layer[u, c]


cdef void _gemm_nt(double[:, ::1] out, double[:, ::1] a, double[:, ::1] b) noexcept:
    # out = a @ b.T, a is (n, d), b is (d, d)
    cdef Py_ssize_t n = a.shape[0], d = a.shape[1]
    cdef Py_ssize_t r, c, t
    cdef double acc
    for r in range(n):
        for c in range(d):
            acc = 0.0
            for t in range(d):
                acc += a[r, t] * b[c, t]
            out[r, c] = acc


cdef void _gemm_nn(double[:, ::1] out, double[:, ::1] a, double[:, ::1] b) noexcept:
    # out = a @ b
    cdef Py_ssize_t n = a.shape[0], d = a.shape[1]
    cdef Py_ssize_t r, c, t
    cdef double acc
    for r in range(n):
        for c in range(d):
            acc = 0.0
            for t in range(d):
                acc += a[r, t] * b[t, c]
            out[r, c] = acc


cdef void _acc_outer(double[:, ::1] out, double[:, ::1] a, double[:, ::1] b) noexcept:
    # out += a.T @ b, a and b are (n, d)
    cdef Py_ssize_t n = a.shape[0], d = a.shape[1]
    cdef Py_ssize_t r, c1, c2
    cdef double av
    for r in range(n):
        for c1 in range(d):
            av = a[r, c1]
            if av != 0.0:
                for c2 in range(d):
                    out[c1, c2] += av * b[r, c2]


cdef _forward(double[:, ::1] xu, double[:, ::1] xi, double[:, :, ::1] W, CorePlan plan):
    cdef Py_ssize_t K = W.shape[0]
    cdef Py_ssize_t d = xu.shape[1]
    uu = [np.asarray(xu)]
    ii = [np.asarray(xi)]
    agg_u, agg_i = [], []
    cdef double[:, ::1] mu, mi, nu, ni
    cdef Py_ssize_t k
    for k in range(K):
        mu = np.zeros((plan.n_au, d))
        mi = np.zeros((plan.n_ai, d))
        _agg_users(mu, ii[k], plan)
        _agg_items(mi, uu[k], plan)
        agg_u.append(np.asarray(mu))
        agg_i.append(np.asarray(mi))
        nu = np.empty((plan.n_au, d))
        ni = np.empty((plan.n_ai, d))
        _gemm_nt(nu, mu, W[k])
        _gemm_nt(ni, mi, W[k])
        uu.append(np.asarray(nu))
        ii.append(np.asarray(ni))
    return uu, ii, agg_u, agg_i


def propagate_layers(xu, xi, W, plan):
    xu = np.ascontiguousarray(xu, dtype=np.float64)
    xi = np.ascontiguousarray(xi, dtype=np.float64)
    W = np.ascontiguousarray(W, dtype=np.float64)
    uu, ii, _, _ = _forward(xu, xi, W, plan)
    return uu, ii


def propagate_combine(xu, xi, W, beta, plan):
    xu = np.ascontiguousarray(xu, dtype=np.float64)
    xi = np.ascontiguousarray(xi, dtype=np.float64)
    W = np.ascontiguousarray(W, dtype=np.float64)
    uu, ii, _, _ = _forward(xu, xi, W, plan)
    pu = sum(b * layer for b, layer in zip(beta, uu))
    pi = sum(b * layer for b, layer in zip(beta, ii))
    return pu, pi


def sgd_batch_step(MU_arr, MI_arr, W_arr, beta_arr, double scale, CorePlan plan,
                   t_u_arr, t_i_arr, t_j_arr, t_jc_arr,
                   double lr, double l2, bint update_w):
    """One summed-gradient SGD step; see the fallback for the contract."""
    cdef double[:, ::1] MU = MU_arr
    cdef double[:, ::1] MI = MI_arr
    cdef double[:, :, ::1] W = W_arr
    cdef double[::1] beta = np.ascontiguousarray(beta_arr, dtype=np.float64)
    cdef cnp.int64_t[::1] t_u = np.ascontiguousarray(t_u_arr, dtype=np.int64)
    cdef cnp.int64_t[::1] t_i = np.ascontiguousarray(t_i_arr, dtype=np.int64)
    cdef cnp.int64_t[::1] t_j = np.ascontiguousarray(t_j_arr, dtype=np.int64)
    cdef cnp.int64_t[::1] t_jc = np.ascontiguousarray(t_jc_arr, dtype=np.int64)
    cdef Py_ssize_t K = W.shape[0]
    cdef Py_ssize_t d = MU.shape[1]
    cdef Py_ssize_t T = t_u.shape[0]
    cdef Py_ssize_t n_au = plan.n_au, n_ai = plan.n_ai
    cdef Py_ssize_t t, c, k, r

    # Gather current true values on the active rows.
    xu_np = np.empty((n_au, d))
    xi_np = np.empty((n_ai, d))
    cdef double[:, ::1] xu = xu_np
    cdef double[:, ::1] xi = xi_np
    for r in range(n_au):
        for c in range(d):
            xu[r, c] = scale * MU[plan.au[r], c]
    for r in range(n_ai):
        for c in range(d):
            xi[r, c] = scale * MI[plan.ai[r], c]

    uu, ii, agg_u, agg_i = _forward(xu, xi, W, plan)

    pu_np = np.zeros((n_au, d))
    pi_np = np.zeros((n_ai, d))
    cdef double[:, ::1] pu = pu_np
    cdef double[:, ::1] pi = pi_np
    cdef double[:, ::1] layer
    cdef double b
    for k in range(K + 1):
        b = beta[k]
        layer = uu[k]
        for r in range(n_au):
            for c in range(d):
                pu[r, c] += b * layer[r, c]
        layer = ii[k]
        for r in range(n_ai):
            for c in range(d):
                pi[r, c] += b * layer[r, c]

    # Scores and per-triple multipliers.
    p_neg_np = np.empty((T, d))
    cdef double[:, ::1] p_neg = p_neg_np
    cdef double beta0 = beta[0]
    for t in range(T):
        if t_jc[t] >= 0:
            for c in range(d):
                p_neg[t, c] = pi[t_jc[t], c]
        else:
            for c in range(d):
                p_neg[t, c] = beta0 * scale * MI[t_j[t], c]

    s_np = np.empty(T)
    cdef double[::1] s = s_np
    cdef double loss = 0.0, x, inv_batch = 1.0 / T
    cdef Py_ssize_t urow, irow
    for t in range(T):
        urow = t_u[t]
        irow = t_i[t]
        x = 0.0
        for c in range(d):
            x += pu[urow, c] * (pi[irow, c] - p_neg[t, c])
        if x > 0.0:
            loss += log1p(exp(-x))
        else:
            loss += -x + log1p(exp(x))
        # Ranking terms are averaged over the batch (the l2 pull is not).
        s[t] = inv_batch / (1.0 + exp(x))

    # Gradients w.r.t. the combined finals.
    gu_np = np.zeros((n_au, d))
    gi_np = np.zeros((n_ai, d))
    cdef double[:, ::1] gu = gu_np
    cdef double[:, ::1] gi = gi_np
    cdef double sv
    for t in range(T):
        urow = t_u[t]
        irow = t_i[t]
        sv = s[t]
        for c in range(d):
            gu[urow, c] += sv * (p_neg[t, c] - pi[irow, c])
            gi[irow, c] -= sv * pu[urow, c]
        if t_jc[t] >= 0:
            irow = t_jc[t]
            for c in range(d):
                gi[irow, c] += sv * pu[urow, c]

    # Backward through the layer recursion.
    du_np = beta[K] * gu_np
    di_np = beta[K] * gi_np
    cdef double[:, ::1] du = du_np
    cdef double[:, ::1] di = di_np
    gw_np = np.zeros((K, d, d)) if K else np.zeros((0, d, d))
    cdef double[:, :, ::1] gw = gw_np
    cdef double[:, ::1] tmp_u, tmp_i, ndu, ndi
    for k in range(K - 1, -1, -1):
        _acc_outer(gw[k], du, agg_u[k])
        _acc_outer(gw[k], di, agg_i[k])
        tmp_i = np.empty((n_ai, d))
        _gemm_nn(tmp_i, di, W[k])          # di @ W[k]
        tmp_u = np.empty((n_au, d))
        _gemm_nn(tmp_u, du, W[k])
        ndu_np = beta[k] * gu_np
        ndi_np = beta[k] * gi_np
        ndu = ndu_np
        ndi = ndi_np
        _agg_users(ndu, tmp_i, plan)
        _agg_items(ndi, tmp_u, plan)
        du_np, di_np = ndu_np, ndi_np
        du, di = ndu, ndi

    # Apply the update under the scaled-storage convention.
    cdef double new_scale = scale * (1.0 - 2.0 * l2 * lr)
    if new_scale <= 0.0:
        raise ValueError("l2 decay factor is not positive; lower lr or l2")
    cdef double step = lr / new_scale
    for r in range(n_au):
        urow = plan.au[r]
        for c in range(d):
            MU[urow, c] -= step * du[r, c]
    for r in range(n_ai):
        irow = plan.ai[r]
        for c in range(d):
            MI[irow, c] -= step * di[r, c]
    cdef double coef
    for t in range(T):
        if t_jc[t] < 0:
            irow = t_j[t]
            urow = t_u[t]
            coef = step * beta0 * s[t]
            for c in range(d):
                MI[irow, c] -= coef * pu[urow, c]
    if update_w and K:
        for k in range(K):
            for r in range(d):
                for c in range(d):
                    W[k, r, c] -= lr * gw[k, r, c]
    return new_scale, loss
