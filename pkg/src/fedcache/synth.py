"""Seeded synthetic rating traces with MovieLens-like structure.

Used when no real dataset is on disk: items carry a heavy-tailed base
popularity, users have latent genre affinities and rate each item at
most once, and timestamps are independent of item identity so request
popularity is stationary between the train and test periods. Files are
written in the tab-separated four-column format.

Run as a module to materialize a trace:

    python -m fedcache.synth /tmp/trace.tsv --users 943 --items 1682 \
        --events 100000 --seed 7
"""

from __future__ import annotations

import argparse

import numpy as np

from .seeds import derive_rng

TS_LO = 874724710
TS_HI = 893286638

GENRES = 8


def generate_events(num_users=943, num_items=1682, num_events=100000,
                    seed=7, min_per_user=20):
    """Return (users, items, ratings, ts) int64 arrays, one event each.

    Every user gets at least ``min_per_user`` distinct items; activity
    beyond the minimum is spread with lognormal weights.
    """
    if num_events < num_users * min_per_user:
        raise ValueError("not enough events for the per-user minimum")
    rng = derive_rng(seed, "synth")

    genre_of = rng.integers(0, GENRES, size=num_items)
    base_pop = 1.0 / np.arange(1, num_items + 1) ** 0.85
    base_pop = base_pop[rng.permutation(num_items)]

    activity = rng.lognormal(0.0, 0.7, size=num_users)
    extra = rng.multinomial(num_events - num_users * min_per_user,
                            activity / activity.sum())
    counts = np.minimum(min_per_user + extra, num_items)
    # Clamping can only lose events for absurd configurations; keep the
    # invariant |events| == num_events by topping up the slack users.
    shortfall = num_events - counts.sum()
    while shortfall > 0:
        room = np.flatnonzero(counts < num_items)
        take = room[:shortfall]
        counts[take] += 1
        shortfall -= len(take)

    users_col, items_col = [], []
    for u in range(num_users):
        aff = rng.dirichlet(np.full(GENRES, 0.3))
        w = base_pop * (0.25 + aff[genre_of])
        # Gumbel top-k: weighted sampling without replacement.
        keys = np.log(w) + rng.gumbel(size=num_items)
        chosen = np.argpartition(-keys, counts[u] - 1)[:counts[u]]
        users_col.append(np.full(counts[u], u, dtype=np.int64))
        items_col.append(np.sort(chosen).astype(np.int64))

    users = np.concatenate(users_col)
    items = np.concatenate(items_col)
    ratings = rng.integers(1, 6, size=num_events)
    ts = rng.integers(TS_LO, TS_HI, size=num_events)
    order = rng.permutation(num_events)
    return users[order], items[order], ratings[order], ts[order]


def write_ml100k(path, users, items, ratings, ts, id_base=1) -> None:
    """Write events as tab-separated lines with 1-based raw ids."""
    with open(path, "w", encoding="utf-8") as fh:
        for u, i, r, t in zip(users, items, ratings, ts):
            fh.write(f"{u + id_base}\t{i + id_base}\t{r}\t{t}\n")


def generate_trace_file(path, num_users=943, num_items=1682, num_events=100000,
                        seed=7) -> None:
    write_ml100k(path, *generate_events(num_users, num_items, num_events, seed))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out")
    ap.add_argument("--users", type=int, default=943)
    ap.add_argument("--items", type=int, default=1682)
    ap.add_argument("--events", type=int, default=100000)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args(argv)
    generate_trace_file(args.out, args.users, args.items, args.events, args.seed)


if __name__ == "__main__":
    main()
