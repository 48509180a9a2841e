"""Light graph convolutional collaborative filtering.

Embeddings live in two float64 matrices (users x d, items x d). One
propagation layer aggregates the normalized neighbor embeddings through
a per-layer weight matrix; there is no self-connection and no
nonlinearity, so K layers with identity weights equal K applications of
the normalized bipartite adjacency. Final representations are the
beta-weighted sum of the per-layer embeddings, scores are dot products,
and training minimizes the pairwise ranking loss

    L = -sum ln sigmoid(y_ui - y_uj) + l2 * ||P0||_F^2

over sampled (user, positive, negative) triples, where ||P0|| runs over
both layer-0 embedding matrices.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import _accel
from .errors import DataError, TrainingDivergedError
from .graph import InteractionGraph

CHECKPOINT_MAGIC = b"FEDCACHE"
CHECKPOINT_VERSION = 1

EMBED_INIT_STD = 0.1


@dataclass
class TrainConfig:
    """Local-training hyperparameters."""

    dim: int = 64
    layers: int = 3
    lr: float = 0.01
    l2: float = 1e-4
    batch_size: int = 2048
    local_epochs: int = 5
    neg_samples: int = 1
    seed: int = 0
    optimizer: str = "sgd"
    freeze_weights: bool = False
    beta: Optional[tuple] = None  # None -> uniform 1/(layers+1)

    def __post_init__(self):
        if min(self.dim, self.layers + 1, self.batch_size, self.local_epochs,
               self.neg_samples) <= 0 or self.lr < 0 or self.l2 < 0:
            raise ValueError("TrainConfig fields must be positive (l2/lr nonnegative)")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.beta is not None:
            if len(self.beta) != self.layers + 1:
                raise ValueError("beta must have layers+1 entries")
            if any(b < 0 for b in self.beta):
                raise ValueError("beta entries must be nonnegative")

    def beta_vector(self) -> np.ndarray:
        if self.beta is None:
            return np.full(self.layers + 1, 1.0 / (self.layers + 1))
        return np.asarray(self.beta, dtype=np.float64)


@dataclass
class ModelParams:
    """Trainable state: layer-0 embeddings, per-layer weights, layer mix."""

    user_emb0: np.ndarray  # (num_users, d)
    item_emb0: np.ndarray  # (num_items, d)
    weights: list  # K matrices, each (d, d)
    beta: np.ndarray  # (K+1,), nonnegative

    @property
    def num_users(self):
        return self.user_emb0.shape[0]

    @property
    def num_items(self):
        return self.item_emb0.shape[0]

    @property
    def dim(self):
        return self.user_emb0.shape[1]

    @property
    def layers(self):
        return len(self.weights)

    def arrays(self):
        """All parameter arrays in canonical flatten order."""
        return [self.user_emb0, self.item_emb0, *self.weights, self.beta]

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.user_emb0.copy(),
            self.item_emb0.copy(),
            [w.copy() for w in self.weights],
            self.beta.copy(),
        )

    def l2_norm(self) -> float:
        """Global L2 norm over all flattened parameters."""
        return math.sqrt(sum(float(np.vdot(a, a)) for a in self.arrays()))

    def all_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())

    def allclose(self, other, rtol=1e-12, atol=1e-12) -> bool:
        return all(
            np.allclose(a, b, rtol=rtol, atol=atol)
            for a, b in zip(self.arrays(), other.arrays())
        )


@dataclass
class Gradients:
    """Gradients of the ranking loss w.r.t. every parameter."""

    user_emb0: np.ndarray
    item_emb0: np.ndarray
    weights: list
    beta: np.ndarray

    def arrays(self):
        return [self.user_emb0, self.item_emb0, *self.weights, self.beta]


class BprTriple(NamedTuple):
    user: int
    pos: int
    neg: int


class TripleBatch:
    """Column layout for a sequence of (user, positive, negative) triples."""

    def __init__(self, users, pos, neg):
        self.users = np.asarray(users, dtype=np.int64)
        self.pos = np.asarray(pos, dtype=np.int64)
        self.neg = np.asarray(neg, dtype=np.int64)

    def __len__(self):
        return len(self.users)

    def __getitem__(self, t) -> BprTriple:
        return BprTriple(int(self.users[t]), int(self.pos[t]), int(self.neg[t]))

    def slice(self, lo, hi) -> "TripleBatch":
        return TripleBatch(self.users[lo:hi], self.pos[lo:hi], self.neg[lo:hi])

    @staticmethod
    def concat(batches) -> "TripleBatch":
        return TripleBatch(
            np.concatenate([b.users for b in batches]),
            np.concatenate([b.pos for b in batches]),
            np.concatenate([b.neg for b in batches]),
        )


@dataclass
class PropagatedEmbeddings:
    """Per-layer embedding matrices p^(0..K) plus combined finals."""

    user_layers: list  # K+1 arrays (num_users, d)
    item_layers: list
    final_user: Optional[np.ndarray] = None
    final_item: Optional[np.ndarray] = None

    @property
    def layers(self):
        return len(self.user_layers) - 1


def init_params(num_users, num_items, cfg: TrainConfig, seed=None) -> ModelParams:
    """Normal(0, 0.1^2) embeddings, identity weights, uniform beta."""
    if num_users <= 0 or num_items <= 0:
        raise ValueError("dimensions must be positive")
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    user = rng.normal(0.0, EMBED_INIT_STD, size=(num_users, cfg.dim))
    item = rng.normal(0.0, EMBED_INIT_STD, size=(num_items, cfg.dim))
    weights = [np.eye(cfg.dim) for _ in range(cfg.layers)]
    return ModelParams(user, item, weights, cfg.beta_vector())


def propagate(params: ModelParams, g: InteractionGraph) -> PropagatedEmbeddings:
    """Reference K-layer propagation over the full graph.

    p_u^(k+1) = sum_{i in N_u} coeff(u,i) * p_i^(k) @ W_k^T and
    symmetrically for items; degree-0 nodes produce zero vectors at
    every layer >= 1.
    """
    if params.num_users != g.num_users or params.num_items != g.num_items:
        raise ValueError("parameter shapes do not match graph")
    adj = g.norm_adjacency()
    users = [params.user_emb0]
    items = [params.item_emb0]
    for k in range(params.layers):
        wt = params.weights[k].T
        users.append((adj @ items[k]) @ wt)
        items.append((adj.T @ users[k]) @ wt)
    return PropagatedEmbeddings(users, items)


def combine_layers(pe: PropagatedEmbeddings, beta) -> tuple:
    """Final representations P = sum_k beta_k p^(k); cached on ``pe``."""
    beta = np.asarray(beta, dtype=np.float64)
    if len(beta) != len(pe.user_layers):
        raise ValueError("beta length must be layers+1")
    final_u = sum(b * layer for b, layer in zip(beta, pe.user_layers))
    final_i = sum(b * layer for b, layer in zip(beta, pe.item_layers))
    pe.final_user, pe.final_item = final_u, final_i
    return final_u, final_i


def score(p_u: np.ndarray, p_i: np.ndarray) -> float:
    """Predicted preference: dot product of final representations."""
    return float(np.dot(p_u, p_i))


def _softplus(x):
    # log(1 + exp(x)) without overflow
    return np.logaddexp(0.0, x)


def bpr_loss(params: ModelParams, g: InteractionGraph, triples: TripleBatch) -> float:
    """Pairwise ranking loss over the given triples (see module docstring).

    The regularizer is l2-free here; use ``bpr_loss_value`` when a
    nonzero coefficient applies.
    """
    return bpr_loss_value(params, g, triples, l2=0.0)


def bpr_loss_value(params, g, triples: TripleBatch, l2: float) -> float:
    pe = propagate(params, g)
    pu, pi = combine_layers(pe, params.beta)
    x = np.einsum("td,td->t", pu[triples.users], pi[triples.pos] - pi[triples.neg])
    reg = l2 * (float(np.vdot(params.user_emb0, params.user_emb0))
                + float(np.vdot(params.item_emb0, params.item_emb0)))
    return float(np.sum(_softplus(-x))) + reg


def bpr_gradients(params, g, triples: TripleBatch, l2: float) -> Gradients:
    """Analytic gradient of ``bpr_loss_value`` w.r.t. every parameter.

    Backpropagates through the layer recursion; the beta gradient is
    reported even though training keeps beta fixed.
    """
    adj = g.norm_adjacency()
    K = params.layers
    pe = propagate(params, g)
    pu, pi = combine_layers(pe, params.beta)

    x = np.einsum("td,td->t", pu[triples.users], pi[triples.pos] - pi[triples.neg])
    s = 1.0 / (1.0 + np.exp(x))  # sigmoid(-x) = -dL/dx

    gu_final = np.zeros_like(pu)
    gi_final = np.zeros_like(pi)
    np.add.at(gu_final, triples.users, s[:, None] * (pi[triples.neg] - pi[triples.pos]))
    np.add.at(gi_final, triples.pos, -s[:, None] * pu[triples.users])
    np.add.at(gi_final, triples.neg, s[:, None] * pu[triples.users])

    beta = params.beta
    gbeta = np.zeros(K + 1)
    gw = [np.zeros_like(w) for w in params.weights]
    du = beta[K] * gu_final
    di = beta[K] * gi_final
    gbeta[K] = float(np.vdot(gu_final, pe.user_layers[K])) + float(
        np.vdot(gi_final, pe.item_layers[K]))
    for k in range(K - 1, -1, -1):
        agg_u = adj @ pe.item_layers[k]  # pre-weight user aggregate
        agg_i = adj.T @ pe.user_layers[k]
        gw[k] = du.T @ agg_u + di.T @ agg_i
        du, di = (
            beta[k] * gu_final + adj @ (di @ params.weights[k]),
            beta[k] * gi_final + adj.T @ (du @ params.weights[k]),
        )
        gbeta[k] = float(np.vdot(gu_final, pe.user_layers[k])) + float(
            np.vdot(gi_final, pe.item_layers[k]))
    return Gradients(
        user_emb0=du + 2.0 * l2 * params.user_emb0,
        item_emb0=di + 2.0 * l2 * params.item_emb0,
        weights=gw,
        beta=gbeta,
    )


def sample_triples(g: InteractionGraph, rng, count, neg_samples=1) -> TripleBatch:
    """Uniform positives over train edges, rejection-sampled negatives.

    Each sampled positive contributes ``neg_samples`` triples (grouped
    consecutively). Positives whose user already interacted with every
    item are dropped, so the result may be shorter than
    ``count * neg_samples``.
    """
    if g.num_edges == 0:
        raise ValueError("cannot sample triples from an empty graph")
    pos_idx = rng.integers(0, g.num_edges, size=count)
    users = g.edge_users[pos_idx]
    pos = g.edge_items[pos_idx]
    open_slots = g.user_degree[users] < g.num_items
    users = np.repeat(users[open_slots], neg_samples)
    pos = np.repeat(pos[open_slots], neg_samples)

    neg = rng.integers(0, g.num_items, size=len(users))
    pending = np.flatnonzero(g.has_edges(users, neg))
    while len(pending):
        draw = rng.integers(0, g.num_items, size=len(pending))
        neg[pending] = draw
        pending = pending[g.has_edges(users[pending], draw)]
    return TripleBatch(users, pos, neg)


class LocalTrainer:
    """Mini-batch SGD on one client's local graph through a kernel backend.

    Parameter storage uses a scale factor so the full-matrix l2 decay is
    O(1) per step: true value = scale * stored. Only rows touched by a
    batch are rewritten; everything else decays through the scalar.
    """

    def __init__(self, params: ModelParams, g: InteractionGraph, cfg: TrainConfig,
                 backend=None):
        self.backend = backend if backend is not None else _accel.active_backend()
        self.cfg = cfg
        self.g = g
        self.au = g.active_users()
        self.ai = g.active_items()
        ceu = np.searchsorted(self.au, g.edge_users).astype(np.int64)
        cei = np.searchsorted(self.ai, g.edge_items).astype(np.int64)
        self.plan = self.backend.make_plan(
            ceu, cei, g.edge_coeff.astype(np.float64), self.au, self.ai)
        self.MU = np.ascontiguousarray(params.user_emb0, dtype=np.float64).copy()
        self.MI = np.ascontiguousarray(params.item_emb0, dtype=np.float64).copy()
        self.W = np.ascontiguousarray(np.stack(params.weights), dtype=np.float64) \
            if params.layers else np.zeros((0, params.dim, params.dim))
        self.beta = params.beta.astype(np.float64).copy()
        self.scale = 1.0
        self._user_compact = np.full(g.num_users, -1, dtype=np.int64)
        self._user_compact[self.au] = np.arange(len(self.au))
        self._item_compact = np.full(g.num_items, -1, dtype=np.int64)
        self._item_compact[self.ai] = np.arange(len(self.ai))

    def step(self, batch: TripleBatch, lr, l2) -> float:
        """One SGD step on the summed batch gradient; returns the batch loss
        (ranking terms only, evaluated before the update)."""
        t_u = self._user_compact[batch.users]
        t_i = self._item_compact[batch.pos]
        t_jc = self._item_compact[batch.neg]
        new_scale, loss = self.backend.sgd_batch_step(
            self.MU, self.MI, self.W, self.beta, self.scale, self.plan,
            t_u, t_i, batch.neg, t_jc, lr, l2,
            not self.cfg.freeze_weights,
        )
        self.scale = new_scale
        return loss

    def forward_final(self):
        """Final combined representations on the active rows."""
        xu = self.scale * self.MU[self.au]
        xi = self.scale * self.MI[self.ai]
        return self.backend.propagate_combine(xu, xi, self.W, self.beta, self.plan)

    def ranking_loss(self, batch: TripleBatch) -> float:
        """Softplus ranking terms at the current parameters (no regularizer)."""
        pu_act, pi_act = self.forward_final()
        t_u = self._user_compact[batch.users]
        t_i = self._item_compact[batch.pos]
        p_u = pu_act[t_u]
        p_pos = pi_act[t_i]
        p_neg = self.beta[0] * self.scale * self.MI[batch.neg]
        t_jc = self._item_compact[batch.neg]
        act = t_jc >= 0
        if act.any():
            p_neg[act] = pi_act[t_jc[act]]
        x = np.einsum("td,td->t", p_u, p_pos - p_neg)
        return float(np.sum(_softplus(-x)))

    def eval_loss(self, batch: TripleBatch, l2) -> float:
        reg = l2 * self.scale * self.scale * (
            float(np.vdot(self.MU, self.MU)) + float(np.vdot(self.MI, self.MI)))
        return self.ranking_loss(batch) + reg

    def materialize(self) -> ModelParams:
        user = self.MU if self.scale == 1.0 else self.scale * self.MU
        item = self.MI if self.scale == 1.0 else self.scale * self.MI
        return ModelParams(
            user_emb0=np.ascontiguousarray(user),
            item_emb0=np.ascontiguousarray(item),
            weights=[self.W[k].copy() for k in range(self.W.shape[0])],
            beta=self.beta.copy(),
        )


def _train_local_adam(params, g, cfg, rng):
    """Adam variant: reference gradients, dense moment estimates.

    Noticeably slower than the sgd kernel path; intended for small or
    exploratory runs.
    """
    b1, b2, eps = 0.9, 0.999, 1e-8
    cur = params.copy()
    moments = [(np.zeros_like(a), np.zeros_like(a)) for a in cur.arrays()[:-1]]
    t = 0
    last = None
    for _ in range(cfg.local_epochs):
        epoch = sample_triples(g, rng, count=g.num_edges, neg_samples=cfg.neg_samples)
        for lo in range(0, len(epoch), cfg.batch_size):
            batch = epoch.slice(lo, lo + cfg.batch_size)
            grads = bpr_gradients(cur, g, batch, l2=0.0)
            inv = 1.0 / len(batch)  # ranking terms averaged over the batch
            garr = [inv * grads.user_emb0 + 2.0 * cfg.l2 * cur.user_emb0,
                    inv * grads.item_emb0 + 2.0 * cfg.l2 * cur.item_emb0,
                    *(inv * w for w in grads.weights)]
            if cfg.freeze_weights:
                garr = garr[:2] + [np.zeros_like(w) for w in grads.weights]
            t += 1
            for a, gr, (m, v) in zip(cur.arrays()[:-1], garr, moments):
                m *= b1
                m += (1 - b1) * gr
                v *= b2
                v += (1 - b2) * gr * gr
                mhat = m / (1 - b1 ** t)
                vhat = v / (1 - b2 ** t)
                a -= cfg.lr * mhat / (np.sqrt(vhat) + eps)
            if not np.isfinite(cur.user_emb0).all():
                raise TrainingDivergedError("non-finite parameters during adam training")
        last = epoch
    final_loss = bpr_loss_value(cur, g, last, l2=cfg.l2)
    if not math.isfinite(final_loss):
        raise TrainingDivergedError("non-finite final loss")
    return cur, final_loss


def train_local(params: ModelParams, g: InteractionGraph, cfg: TrainConfig,
                rng=None, backend=None):
    """Run ``local_epochs`` of mini-batch updates; returns (params', loss).

    Each epoch samples ``num_edges`` positives (one triple per negative
    sample) and applies one summed-gradient step per ``batch_size``
    chunk. The returned loss is the full ranking loss of the final
    parameters on the last epoch's triples plus the l2 term.
    """
    if g.num_edges == 0:
        raise ValueError("train_local requires a nonempty local graph")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    if cfg.optimizer == "adam":
        return _train_local_adam(params, g, cfg, rng)

    trainer = LocalTrainer(params, g, cfg, backend)
    last = None
    for _ in range(cfg.local_epochs):
        epoch = sample_triples(g, rng, count=g.num_edges, neg_samples=cfg.neg_samples)
        for lo in range(0, len(epoch), cfg.batch_size):
            loss = trainer.step(epoch.slice(lo, lo + cfg.batch_size), cfg.lr, cfg.l2)
            if not math.isfinite(loss):
                raise TrainingDivergedError("non-finite batch loss")
        last = epoch
    final_loss = trainer.eval_loss(last, cfg.l2)
    if not math.isfinite(final_loss):
        raise TrainingDivergedError("non-finite final loss")
    return trainer.materialize(), final_loss


def recommend_local(params: ModelParams, g: InteractionGraph, m_list,
                    backend=None) -> list:
    """Top-``m_list`` unseen items for the local graph's user(s).

    Scores are computed per active user over all items outside that
    user's neighborhood, ties broken by ascending item id. When the
    local graph holds several users the per-user rankings are merged by
    occurrence count (same tie rule), keeping one list per client.
    """
    backend = backend if backend is not None else _accel.active_backend()
    users = g.active_users()
    if len(users) == 0 or m_list <= 0:
        return []
    ai = g.active_items()
    ceu = np.searchsorted(users, g.edge_users).astype(np.int64)
    cei = np.searchsorted(ai, g.edge_items).astype(np.int64)
    plan = backend.make_plan(ceu, cei, g.edge_coeff.astype(np.float64),
                             users, ai)
    W = np.ascontiguousarray(np.stack(params.weights), dtype=np.float64) \
        if params.layers else np.zeros((0, params.dim, params.dim))
    pu_act, pi_act = backend.propagate_combine(
        np.ascontiguousarray(params.user_emb0[users]),
        np.ascontiguousarray(params.item_emb0[ai]),
        W, params.beta.astype(np.float64), plan)

    per_user = []
    base = params.beta[0] * params.item_emb0  # finals of locally isolated items
    for row, u in enumerate(users):
        pu = pu_act[row]
        scores = base @ pu
        scores[ai] = pi_act @ pu
        candidates = np.ones(g.num_items, dtype=bool)
        candidates[g.user_neighbors(u)] = False
        cand_ids = np.flatnonzero(candidates)
        if len(cand_ids) == 0:
            per_user.append([])
            continue
        cand_scores = scores[cand_ids]
        order = np.lexsort((cand_ids, -cand_scores))
        per_user.append([int(cand_ids[t]) for t in order[:m_list]])

    if len(per_user) == 1:
        return per_user[0]
    counts = {}
    for lst in per_user:
        for it in lst:
            counts[it] = counts.get(it, 0) + 1
    ranked = sorted(counts, key=lambda it: (-counts[it], it))
    return ranked[:m_list]


def save_params(params: ModelParams, path) -> None:
    """Binary checkpoint: magic, version, dims, then little-endian float64."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack(
            "<IIIII", CHECKPOINT_VERSION, params.dim, params.layers,
            params.num_users, params.num_items))
        fh.write(np.ascontiguousarray(params.user_emb0, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(params.item_emb0, dtype="<f8").tobytes())
        for w in params.weights:
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(params.beta, dtype="<f8").tobytes())


def load_params(path) -> ModelParams:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise DataError("not a parameter checkpoint (bad magic)", path=path)
        version, d, k, num_users, num_items = struct.unpack("<IIIII", fh.read(20))
        if version != CHECKPOINT_VERSION:
            raise DataError(f"unsupported checkpoint version {version}", path=path)

        def read_mat(rows, cols):
            buf = fh.read(rows * cols * 8)
            if len(buf) != rows * cols * 8:
                raise DataError("truncated checkpoint", path=path)
            return np.frombuffer(buf, dtype="<f8").reshape(rows, cols).astype(np.float64)

        user = read_mat(num_users, d)
        item = read_mat(num_items, d)
        weights = [read_mat(d, d) for _ in range(k)]
        beta = read_mat(1, k + 1)[0]
        if fh.read(1):
            raise DataError("trailing bytes after checkpoint payload", path=path)
    return ModelParams(user, item, weights, beta)
