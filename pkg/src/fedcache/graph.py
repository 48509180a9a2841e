"""Bipartite user-item interaction graph with symmetric degree normalization.

Neighbor lists are stored sorted ascending (CSR layout) so iteration
order is reproducible and membership checks are binary searches. Each
edge (u, i) carries the coefficient 1/(sqrt(|N_u|) * sqrt(|N_i|)) used
by the propagation rule; the coefficient is only defined on edges, so
degree-0 nodes never cause a division by zero.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp


class InteractionGraph:
    """Immutable deduplicated bipartite adjacency over dense ids."""

    def __init__(self, num_users, num_items, edge_users, edge_items):
        self.num_users = int(num_users)
        self.num_items = int(num_items)
        eu = np.asarray(edge_users, dtype=np.int64)
        ei = np.asarray(edge_items, dtype=np.int64)
        if len(eu) and (eu.min() < 0 or eu.max() >= num_users):
            raise ValueError("user id out of range")
        if len(ei) and (ei.min() < 0 or ei.max() >= num_items):
            raise ValueError("item id out of range")

        # Deduplicate and sort by (user, item).
        keys = eu * num_items + ei
        keys = np.unique(keys)
        self.edge_users = keys // num_items
        self.edge_items = keys % num_items
        self._edge_keys = keys

        self.user_degree = np.bincount(self.edge_users, minlength=num_users).astype(np.int64)
        self.item_degree = np.bincount(self.edge_items, minlength=num_items).astype(np.int64)
        self.user_ptr = np.concatenate(([0], np.cumsum(self.user_degree)))
        order_by_item = np.lexsort((self.edge_users, self.edge_items))
        self.item_ptr = np.concatenate(([0], np.cumsum(self.item_degree)))
        self.item_users_flat = self.edge_users[order_by_item]
        self._order_by_item = order_by_item

        du = self.user_degree[self.edge_users]
        di = self.item_degree[self.edge_items]
        self.edge_coeff = 1.0 / (np.sqrt(du) * np.sqrt(di))
        self._norm_adj = None

    @property
    def num_edges(self):
        return len(self.edge_users)

    def user_neighbors(self, u) -> np.ndarray:
        """Sorted item ids adjacent to user u."""
        return self.edge_items[self.user_ptr[u]:self.user_ptr[u + 1]]

    def item_neighbors(self, i) -> np.ndarray:
        """Sorted user ids adjacent to item i."""
        return self.item_users_flat[self.item_ptr[i]:self.item_ptr[i + 1]]

    def has_edge(self, u, i) -> bool:
        nb = self.user_neighbors(u)
        pos = np.searchsorted(nb, i)
        return pos < len(nb) and nb[pos] == i

    def has_edges(self, users, items) -> np.ndarray:
        """Vectorized membership test for (user, item) pairs."""
        keys = np.asarray(users, dtype=np.int64) * self.num_items + np.asarray(items, dtype=np.int64)
        if not len(self._edge_keys):
            return np.zeros(len(keys), dtype=bool)
        pos = np.minimum(np.searchsorted(self._edge_keys, keys), len(self._edge_keys) - 1)
        return self._edge_keys[pos] == keys

    def norm_coeff(self, u, i) -> float:
        """1/(sqrt(|N_u|)*sqrt(|N_i|)) for an existing edge (u, i)."""
        if not self.has_edge(u, i):
            raise ValueError(f"({u}, {i}) is not an edge; norm_coeff is defined on edges only")
        return float(1.0 / (np.sqrt(self.user_degree[u]) * np.sqrt(self.item_degree[i])))

    def norm_adjacency(self) -> sp.csr_matrix:
        """num_users x num_items CSR holding the edge coefficients."""
        if self._norm_adj is None:
            self._norm_adj = sp.csr_matrix(
                (self.edge_coeff, (self.edge_users, self.edge_items)),
                shape=(self.num_users, self.num_items),
            )
        return self._norm_adj

    def active_users(self) -> np.ndarray:
        return np.flatnonzero(self.user_degree > 0)

    def active_items(self) -> np.ndarray:
        return np.flatnonzero(self.item_degree > 0)

    def dump_edges(self, fh) -> None:
        """Debug dump, one "u i" line per edge in (u, i) order."""
        for u, i in zip(self.edge_users, self.edge_items):
            fh.write(f"{u} {i}\n")


def build_graph(train_items_per_user, num_users, num_items) -> InteractionGraph:
    """Build the deduplicated bipartite graph from per-user item lists.

    ``train_items_per_user`` maps user id -> iterable of item ids (a dict
    or a full per-user sequence). Users absent from the mapping are
    isolated (degree 0), which the propagation rule treats as empty sums.
    """
    if isinstance(train_items_per_user, dict):
        pairs = train_items_per_user.items()
    else:
        pairs = enumerate(train_items_per_user)
    users, items = [], []
    for u, its in pairs:
        for i in its:
            users.append(u)
            items.append(i)
    return InteractionGraph(num_users, num_items, users, items)
