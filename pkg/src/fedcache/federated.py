"""Federated round orchestration and loss-weighted aggregation.

Each round samples a subset of clients, hands every one an immutable
snapshot of the global model, trains locally, and folds the returned
parameters back with the fairness-weighted averaging rule

    delta_c = G * (w_bar - w_c)
    theta_c = L_c^q * delta_c
    h_c     = q * L_c^(q-1) * ||delta_c||^2 + G * L_c^q
    w_bar'  = w_bar - sum_c theta_c / sum_c h_c

where L_c is the client's final local ranking loss. At q = 0 this is
the plain average of the client parameters. Client updates are summed
in ascending client id so results do not depend on execution order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from . import seeds
from .data import SplitStreams
from .errors import AggregationError
from .graph import InteractionGraph, build_graph
from .model import ModelParams, TrainConfig, init_params, recommend_local, train_local

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClientState:
    """One simulated device: its users and their training edges."""

    client_id: int
    user_ids: np.ndarray
    local_graph: InteractionGraph


@dataclass
class ClientUpdate:
    """Everything a client uploads: parameters, list, final local loss."""

    client_id: int
    params: ModelParams
    rec_list: list
    local_loss: float


@dataclass
class AggregationConfig:
    """Server-side knobs for sampling and aggregation."""

    q: float = 0.0
    lipschitz: float = 1.0
    clients_per_round: int = 0  # 0 -> every client, every round
    global_epochs: int = 10
    seed: int = 0
    users_per_client: int = 1

    def __post_init__(self):
        if self.q < 0:
            raise ValueError("q must be nonnegative")
        if self.lipschitz <= 0:
            raise ValueError("lipschitz constant must be positive")
        if self.clients_per_round < 0 or self.global_epochs < 0:
            raise ValueError("counts must be nonnegative")
        if self.users_per_client <= 0:
            raise ValueError("users_per_client must be positive")


@dataclass
class GlobalState:
    """Server view after a round: model, round index, pooled lists."""

    params: ModelParams
    round_index: int
    pool: list


@dataclass
class RoundLogRow:
    round_index: int
    client_ids: list
    mean_local_loss: float
    global_norm: float

    def as_csv(self) -> str:
        ids = ";".join(str(c) for c in self.client_ids)
        return f"{self.round_index},{ids},{self.mean_local_loss:.10g},{self.global_norm:.10g}"


ROUND_LOG_HEADER = "round,clients,mean_local_loss,global_norm"


def build_clients(split: SplitStreams, users_per_client=1) -> list:
    """Partition users into clients; each holds only its own train edges.

    The default puts one user on each device. Local graphs share the
    global id space, so every other node is simply isolated there.
    """
    ds = split.dataset
    states = []
    user_ids = np.arange(ds.num_users)
    for cid, lo in enumerate(range(0, ds.num_users, users_per_client)):
        chunk = user_ids[lo:lo + users_per_client]
        items = {int(u): split.train_items(u) for u in chunk}
        states.append(ClientState(
            client_id=cid,
            user_ids=chunk,
            local_graph=build_graph(items, ds.num_users, ds.num_items),
        ))
    return states


def sample_clients(clients, c, rng) -> list:
    """Uniform sample without replacement, returned in ascending id order."""
    if c > len(clients):
        raise ValueError(f"cannot sample {c} of {len(clients)} clients")
    if c == len(clients):
        return sorted(clients, key=lambda s: s.client_id)
    picked = rng.choice(len(clients), size=c, replace=False)
    return sorted((clients[i] for i in picked), key=lambda s: s.client_id)


def client_round(state: ClientState, w_bar: ModelParams, cfg: TrainConfig,
                 m_list, rng=None, backend=None) -> ClientUpdate:
    """Download w_bar, train locally, recommend; w_bar is not mutated."""
    if state.local_graph.num_edges == 0:
        return ClientUpdate(state.client_id, w_bar.copy(), [], 0.0)
    params, loss = train_local(w_bar, state.local_graph, cfg, rng=rng, backend=backend)
    rec = recommend_local(params, state.local_graph, m_list, backend=backend)
    return ClientUpdate(state.client_id, params, rec, loss)


def qfedavg_aggregate(w_bar: ModelParams, updates, cfg: AggregationConfig) -> ModelParams:
    """Fold client updates into a new global model (see module docstring).

    ``updates`` may be a list (canonicalized by client id here) or an
    already-ascending iterable, which is consumed in a single streaming
    pass. Updates with negative or non-finite loss are rejected; with
    q > 0 a zero-loss client contributes nothing.
    """
    if isinstance(updates, (list, tuple)):
        ordered: Iterable[ClientUpdate] = sorted(updates, key=lambda u: u.client_id)
    else:
        ordered = updates

    q, G = cfg.q, cfg.lipschitz
    num = [np.zeros_like(a) for a in w_bar.arrays()]
    den = 0.0
    seen = 0
    last_id = None
    for upd in ordered:
        if last_id is not None and upd.client_id <= last_id:
            raise AggregationError("streamed updates must arrive in ascending client id")
        last_id = upd.client_id
        L = upd.local_loss
        if not np.isfinite(L) or L < 0:
            log.warning("rejecting update from client %d (loss=%r)", upd.client_id, L)
            continue
        seen += 1
        deltas = [G * (a - b) for a, b in zip(w_bar.arrays(), upd.params.arrays())]
        if q == 0.0:
            for acc, dlt in zip(num, deltas):
                acc += dlt
            den += G
            continue
        if L == 0.0:
            continue  # L^q = 0: no pull, no weight
        lq = L ** q
        sq = sum(float(np.vdot(dlt, dlt)) for dlt in deltas)
        for acc, dlt in zip(num, deltas):
            acc += lq * dlt
        den += q * L ** (q - 1.0) * sq + G * lq
    if seen == 0:
        raise AggregationError("no usable client updates")
    if den == 0.0:
        log.warning("aggregation weight sum is zero; keeping the global model")
        return w_bar.copy()

    new_arrays = [a - acc / den for a, acc in zip(w_bar.arrays(), num)]
    out = ModelParams(new_arrays[0], new_arrays[1],
                      new_arrays[2:-1], new_arrays[-1])
    if not out.all_finite():
        raise AggregationError("aggregated model has non-finite parameters")
    return out


def run_federation(clients, cfg_train: TrainConfig, cfg_agg: AggregationConfig,
                   m_list, initial: Optional[ModelParams] = None, backend=None,
                   log_rows: Optional[list] = None):
    """Run ``global_epochs`` rounds; returns (final model, last round's pool).

    Fully deterministic given the aggregation seed: per-round and
    per-client generators are derived from it, so client execution order
    cannot change the outcome. A failed (rejected) client simply drops
    out of that round's sums.
    """
    if not clients:
        raise ValueError("run_federation requires at least one client")
    g0 = clients[0].local_graph
    root = cfg_agg.seed
    w_bar = initial if initial is not None else init_params(
        g0.num_users, g0.num_items, cfg_train, seed=seeds.derive_seq(root, "init"))

    c = cfg_agg.clients_per_round or len(clients)
    pool = []
    for rnd in range(1, cfg_agg.global_epochs + 1):
        selected = sample_clients(clients, c, seeds.derive_rng(root, "sample", rnd))
        round_lists = []
        losses = []

        def updates():
            for state in selected:
                upd = client_round(
                    state, w_bar, cfg_train, m_list,
                    rng=seeds.derive_rng(root, "client", rnd, state.client_id),
                    backend=backend)
                losses.append(upd.local_loss)
                round_lists.append(upd.rec_list)
                yield upd

        w_bar = qfedavg_aggregate(w_bar, updates(), cfg_agg)
        pool = round_lists
        if log_rows is not None:
            log_rows.append(RoundLogRow(
                round_index=rnd,
                client_ids=[s.client_id for s in selected],
                mean_local_loss=float(np.mean(losses)) if losses else 0.0,
                global_norm=w_bar.l2_norm(),
            ))
    return w_bar, pool
