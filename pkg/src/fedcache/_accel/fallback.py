"""Pure-numpy implementation of the per-client training kernels.

Semantics are shared with the compiled backend: parameters are stored
scaled (true value = scale * stored) so the full-matrix l2 decay of one
SGD step costs O(1); batch gradients are summed, not averaged. The two
backends agree to float64 rounding, not bit-for-bit.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

name = "numpy"


class Plan:
    """Per-client immutable propagation structure (compact index space)."""

    __slots__ = ("adj", "adj_t", "au", "ai", "n_au", "n_ai")

    def __init__(self, adj, adj_t, au, ai):
        self.adj = adj
        self.adj_t = adj_t
        self.au = au
        self.ai = ai
        self.n_au = adj.shape[0]
        self.n_ai = adj.shape[1]


def make_plan(ceu, cei, coeff, au, ai):
    adj = sp.csr_matrix((coeff, (ceu, cei)), shape=(len(au), len(ai)))
    return Plan(adj, adj.T.tocsr(), np.asarray(au, dtype=np.int64),
                np.asarray(ai, dtype=np.int64))


def _forward(xu, xi, W, plan):
    """Layer embeddings and pre-weight aggregates on the active rows."""
    uu, ii = [xu], [xi]
    agg_u, agg_i = [], []
    for k in range(W.shape[0]):
        mu = plan.adj @ ii[k]
        mi = plan.adj_t @ uu[k]
        agg_u.append(mu)
        agg_i.append(mi)
        uu.append(mu @ W[k].T)
        ii.append(mi @ W[k].T)
    return uu, ii, agg_u, agg_i


def propagate_layers(xu, xi, W, plan):
    uu, ii, _, _ = _forward(xu, xi, W, plan)
    return uu, ii


def propagate_combine(xu, xi, W, beta, plan):
    uu, ii, _, _ = _forward(xu, xi, W, plan)
    pu = sum(b * layer for b, layer in zip(beta, uu))
    pi = sum(b * layer for b, layer in zip(beta, ii))
    return pu, pi


def sgd_batch_step(MU, MI, W, beta, scale, plan, t_u, t_i, t_j, t_jc,
                   lr, l2, update_w):
    """One summed-gradient SGD step over a batch of triples.

    ``t_u``/``t_i``/``t_jc`` are compact indices (negative ``t_jc`` means
    the negative item is isolated in the local graph); ``t_j`` are global
    item ids. Returns (new_scale, batch ranking loss before the update).
    """
    K = W.shape[0]
    xu = scale * MU[plan.au]
    xi = scale * MI[plan.ai]
    uu, ii, agg_u, agg_i = _forward(xu, xi, W, plan)
    pu = sum(b * layer for b, layer in zip(beta, uu))
    pi = sum(b * layer for b, layer in zip(beta, ii))

    p_u = pu[t_u]
    p_pos = pi[t_i]
    active = t_jc >= 0
    p_neg = beta[0] * scale * MI[t_j]
    if active.any():
        p_neg[active] = pi[t_jc[active]]

    x = np.einsum("td,td->t", p_u, p_pos - p_neg)
    loss = float(np.sum(np.logaddexp(0.0, -x)))
    # Ranking terms are averaged over the batch (the l2 pull is not),
    # so step size does not depend on batch size.
    s = (1.0 / len(x)) / (1.0 + np.exp(x))  # sigmoid(-x) / batch

    gu = np.zeros_like(pu)
    gi = np.zeros_like(pi)
    su = s[:, None] * (p_neg - p_pos)
    sv = s[:, None] * p_u
    np.add.at(gu, t_u, su)
    np.subtract.at(gi, t_i, sv)
    if active.any():
        np.add.at(gi, t_jc[active], sv[active])

    du = beta[K] * gu
    di = beta[K] * gi
    gw = np.zeros_like(W)
    for k in range(K - 1, -1, -1):
        gw[k] = du.T @ agg_u[k] + di.T @ agg_i[k]
        du, di = (
            beta[k] * gu + plan.adj @ (di @ W[k]),
            beta[k] * gi + plan.adj_t @ (du @ W[k]),
        )

    new_scale = scale * (1.0 - 2.0 * l2 * lr)
    if new_scale <= 0.0:
        raise ValueError("l2 decay factor is not positive; lower lr or l2")
    step = lr / new_scale
    MU[plan.au] -= step * du
    MI[plan.ai] -= step * di
    inactive = ~active
    if inactive.any():
        np.subtract.at(MI, t_j[inactive],
                       (step * beta[0]) * sv[inactive])
    if update_w and K:
        W -= lr * gw
    return new_scale, loss
