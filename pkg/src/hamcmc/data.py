"""Dataset plumbing: ratings-file ingestion and train/test splitting."""

from __future__ import annotations

import numpy as np


class DataError(ValueError):
    """Malformed input data."""


def ingest_movielens(path) -> tuple[list[tuple[int, int, float]], int, int, dict]:
    """Parse a ``UserID::MovieID::Rating::Timestamp`` ratings file.

    Returns (triples, n_rows, n_cols, stats): triples are (movie_index,
    user_index, rating) with movie and user ids densely re-indexed in sorted
    id order, so rows of the observation matrix are movies and columns are
    users. Malformed lines raise with their line number.
    """
    raw: list[tuple[int, int, float]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("::")
            if len(parts) != 4:
                raise DataError(
                    f"{path}: line {lineno}: expected 4 '::'-separated fields, got {len(parts)}"
                )
            try:
                user = int(parts[0])
                movie = int(parts[1])
                rating = float(parts[2])
                int(parts[3])
            except ValueError as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from exc
            raw.append((movie, user, rating))
    if not raw:
        raise DataError(f"{path}: empty ratings file")
    movie_ids = sorted({movie for movie, _, _ in raw})
    user_ids = sorted({user for _, user, _ in raw})
    movie_index = {mid: i for i, mid in enumerate(movie_ids)}
    user_index = {uid: j for j, uid in enumerate(user_ids)}
    triples = [(movie_index[m], user_index[u], r) for m, u, r in raw]
    n_rows = len(movie_ids)
    n_cols = len(user_ids)
    stats = {
        "n_ratings": len(triples),
        "n_rows": n_rows,
        "n_cols": n_cols,
        "density": len(triples) / (n_rows * n_cols),
    }
    return triples, n_rows, n_cols, stats


def split_train_test(triples, fraction: float, seed) -> tuple[list, list]:
    """Disjoint, exhaustive, seed-deterministic split with |test| = round(fraction * N)."""
    if not 0.0 < fraction < 1.0:
        raise DataError(f"fraction must lie in (0, 1), got {fraction}")
    triples = list(triples)
    n = len(triples)
    n_test = int(round(fraction * n))
    if n_test == 0 or n_test == n:
        raise DataError(
            f"degenerate split: {n} triples at fraction {fraction} gives {n_test} test entries"
        )
    order = np.random.default_rng(seed).permutation(n)
    test_idx = set(int(i) for i in order[:n_test])
    train = [t for i, t in enumerate(triples) if i not in test_idx]
    test = [t for i, t in enumerate(triples) if i in test_idx]
    return train, test
