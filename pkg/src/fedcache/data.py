"""Rating-file loading, id densification and chronological splitting.

Rated items double as content requests: every parsed event is both a
training interaction and one entry of the replayable demand trace.
Supported input formats:

* ``ml100k``: one event per line, fields separated by a single TAB,
  order ``user item rating timestamp``.
* ``ml1m``: same field order, fields separated by the two-character
  token ``::``.

All internal structures use dense 0-based ids; the raw<->dense maps are
kept on the dataset for reporting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import DataError

FORMAT_SEPARATORS = {"ml100k": "\t", "ml1m": "::"}

RATING_MIN = 0
RATING_MAX = 5

CANONICAL_HEADER = "user,item,rating,ts"


class RatingEvent(NamedTuple):
    """One user->item interaction; also one content request."""

    user: int
    item: int
    rating: int
    ts: int


@dataclass(frozen=True)
class IdMap:
    """Bijection between raw file ids and dense 0-based ids."""

    raw_ids: np.ndarray  # dense -> raw, shape (n,)
    dense: dict  # raw -> dense

    def __len__(self):
        return len(self.raw_ids)

    def to_dense(self, raw):
        return self.dense[raw]

    def to_raw(self, dense):
        return int(self.raw_ids[dense])

    def __eq__(self, other):
        if not isinstance(other, IdMap):
            return NotImplemented
        return np.array_equal(self.raw_ids, other.raw_ids)


@dataclass(frozen=True)
class Dataset:
    """Column-oriented event table with dense contiguous ids.

    ``users/items/ratings/ts`` are parallel int64 arrays in file order.
    """

    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    ts: np.ndarray
    num_users: int
    num_items: int
    user_map: IdMap
    item_map: IdMap

    def __len__(self):
        return len(self.users)

    def __iter__(self) -> Iterator[RatingEvent]:
        for u, i, r, t in zip(self.users, self.items, self.ratings, self.ts):
            yield RatingEvent(int(u), int(i), int(r), int(t))

    def event(self, idx) -> RatingEvent:
        return RatingEvent(
            int(self.users[idx]), int(self.items[idx]),
            int(self.ratings[idx]), int(self.ts[idx]),
        )

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.num_users == other.num_users
            and self.num_items == other.num_items
            and np.array_equal(self.users, other.users)
            and np.array_equal(self.items, other.items)
            and np.array_equal(self.ratings, other.ratings)
            and np.array_equal(self.ts, other.ts)
            and self.user_map == other.user_map
            and self.item_map == other.item_map
        )


class RequestStream:
    """Chronologically ordered sequence of requests (a Dataset slice)."""

    def __init__(self, dataset: Dataset, indices: np.ndarray):
        self._ds = dataset
        self.indices = indices
        self.users = dataset.users[indices]
        self.items = dataset.items[indices]
        self.ts = dataset.ts[indices]

    def __len__(self):
        return len(self.indices)

    def __iter__(self) -> Iterator[RatingEvent]:
        for idx in self.indices:
            yield self._ds.event(idx)


@dataclass(frozen=True)
class SplitStreams:
    """Per-user chronological train lists plus one global test stream."""

    dataset: Dataset
    train_indices: list  # per-user int64 arrays, chronological
    test: RequestStream
    train_fraction: float

    def train_items(self, user) -> np.ndarray:
        return self.dataset.items[self.train_indices[user]]

    def train_events(self, user) -> list:
        return [self.dataset.event(i) for i in self.train_indices[user]]

    @property
    def train_event_count(self):
        return sum(len(ix) for ix in self.train_indices)


def _densify(raw: list) -> tuple[np.ndarray, IdMap]:
    """Map raw ids to dense 0-based ids in order of first appearance."""
    dense_of = {}
    raw_ids = []
    out = np.empty(len(raw), dtype=np.int64)
    for pos, r in enumerate(raw):
        d = dense_of.get(r)
        if d is None:
            d = len(raw_ids)
            dense_of[r] = d
            raw_ids.append(r)
        out[pos] = d
    return out, IdMap(np.asarray(raw_ids, dtype=np.int64), dense_of)


def load_ratings(path, fmt: str) -> Dataset:
    """Parse a rating file into a Dataset with dense contiguous ids.

    Event order equals file order; duplicate (user, item) pairs are kept
    as distinct events. Malformed lines raise DataError with the
    1-based line number.
    """
    if fmt not in FORMAT_SEPARATORS:
        raise DataError(f"unknown format {fmt!r}; expected one of {sorted(FORMAT_SEPARATORS)}")
    sep = FORMAT_SEPARATORS[fmt]

    raw_users, raw_items = [], []
    ratings, stamps = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            parts = line.split(sep)
            if len(parts) != 4:
                raise DataError(
                    f"expected 4 {fmt} fields, got {len(parts)}", path=path, line=lineno
                )
            try:
                u, i, r, t = (int(p) for p in parts)
            except ValueError:
                raise DataError("non-integer field", path=path, line=lineno) from None
            if not RATING_MIN <= r <= RATING_MAX:
                raise DataError(
                    f"rating {r} outside scale [{RATING_MIN}, {RATING_MAX}]",
                    path=path, line=lineno,
                )
            raw_users.append(u)
            raw_items.append(i)
            ratings.append(r)
            stamps.append(t)

    if not raw_users:
        raise DataError("file holds no events", path=path)

    users, user_map = _densify(raw_users)
    items, item_map = _densify(raw_items)
    return Dataset(
        users=users,
        items=items,
        ratings=np.asarray(ratings, dtype=np.int64),
        ts=np.asarray(stamps, dtype=np.int64),
        num_users=len(user_map),
        num_items=len(item_map),
        user_map=user_map,
        item_map=item_map,
    )


def split_chronological(ds: Dataset, train_fraction: float) -> SplitStreams:
    """Per-user chronological split: earliest ceil(f*n_u) events train.

    Ties on timestamp keep input order (stable). The test stream is
    re-sorted globally by (timestamp, input position). An empty global
    test stream is an error; individual users may land entirely in one
    partition.
    """
    if not 0.0 < train_fraction < 1.0:
        raise DataError(f"train_fraction {train_fraction} outside (0, 1)")

    # Stable global order by (ts, input position): one argsort serves
    # both the per-user split and the final test ordering.
    order = np.argsort(ds.ts, kind="stable")
    test_mask = np.zeros(len(ds), dtype=bool)
    train_indices = []
    # Regroup by user while preserving the chronological order inside
    # each group (stable sort on the already ts-ordered sequence).
    by_user = order[np.argsort(ds.users[order], kind="stable")]
    bounds = np.searchsorted(ds.users[by_user], np.arange(ds.num_users + 1))
    for u in range(ds.num_users):
        ev = by_user[bounds[u]:bounds[u + 1]]
        n_train = math.ceil(train_fraction * len(ev))
        train_indices.append(ev[:n_train])
        test_mask[ev[n_train:]] = True

    test_idx = order[test_mask[order]]
    if len(test_idx) == 0:
        raise DataError("chronological split produced an empty test stream")
    return SplitStreams(
        dataset=ds,
        train_indices=train_indices,
        test=RequestStream(ds, test_idx),
        train_fraction=train_fraction,
    )


def dump_canonical(ds: Dataset, path) -> None:
    """Write the canonical dump: header then dense rows sorted by (ts, user, item)."""
    order = np.lexsort((ds.items, ds.users, ds.ts))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(CANONICAL_HEADER + "\n")
        for idx in order:
            fh.write(f"{ds.users[idx]},{ds.items[idx]},{ds.ratings[idx]},{ds.ts[idx]}\n")


def load_canonical(path) -> Dataset:
    """Parse a canonical dump back into a Dataset (ids are already dense)."""
    users, items, ratings, stamps = [], [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != CANONICAL_HEADER:
            raise DataError(f"bad canonical header {header!r}", path=path, line=1)
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise DataError("expected 4 comma-separated fields", path=path, line=lineno)
            try:
                u, i, r, t = (int(p) for p in parts)
            except ValueError:
                raise DataError("non-integer field", path=path, line=lineno) from None
            users.append(u)
            items.append(i)
            ratings.append(r)
            stamps.append(t)
    if not users:
        raise DataError("file holds no events", path=path)
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    num_users = int(users.max()) + 1
    num_items = int(items.max()) + 1
    identity_u = IdMap(np.arange(num_users, dtype=np.int64), {i: i for i in range(num_users)})
    identity_i = IdMap(np.arange(num_items, dtype=np.int64), {i: i for i in range(num_items)})
    return Dataset(
        users=users,
        items=items,
        ratings=np.asarray(ratings, dtype=np.int64),
        ts=np.asarray(stamps, dtype=np.int64),
        num_users=num_users,
        num_items=num_items,
        user_map=identity_u,
        item_map=identity_i,
    )
