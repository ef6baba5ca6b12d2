"""Partitioning Around Medoids on a precomputed dissimilarity matrix.

SWAP is steepest descent: every (medoid, non-medoid) exchange is scored and the
one with the largest energy decrease is applied. All ``k * (n - k)`` swap
deltas of one iteration are obtained together from each point's nearest and
second-nearest medoid distances, so an iteration costs ``O(n^2 k)`` flops in
a few array operations.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, DataValidationError

SWAP_TOL = 1e-12


def _values(M) -> np.ndarray:
    return np.asarray(getattr(M, "values", M), dtype=float)


@dataclass(frozen=True, eq=False)
class Partition:
    """A k-medoids partition. ``labels`` are 1-based; cluster s has medoid ``medoids[s-1]``.

    Medoids are stored sorted by row index, so cluster 1 is the cluster whose
    medoid has the lowest row index.
    """

    k: int
    medoids: np.ndarray
    labels: np.ndarray
    energy: float
    restarts_used: int = 1
    seed: int | None = None
    n_swaps: int = 0
    energy_trace: tuple[float, ...] = field(default=(), repr=False)

    @property
    def n(self) -> int:
        return int(self.labels.shape[0])

    def clusters(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.labels == s) for s in range(1, self.k + 1)]

    def to_dict(self) -> dict:
        return {
            "k": int(self.k),
            "medoids": [int(m) for m in self.medoids],
            "labels": [int(v) for v in self.labels],
            "energy": float(self.energy),
            "seed": self.seed,
            "restarts_used": int(self.restarts_used),
            "n_swaps": int(self.n_swaps),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "Partition":
        return cls(
            k=int(d["k"]),
            medoids=np.asarray(d["medoids"], dtype=np.int64),
            labels=np.asarray(d["labels"], dtype=np.int64),
            energy=float(d["energy"]),
            restarts_used=int(d.get("restarts_used", 1)),
            seed=d.get("seed"),
            n_swaps=int(d.get("n_swaps", 0)),
        )


def assign(D: np.ndarray, medoids) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-medoid position (ties: lowest position) and distance for every row."""
    dm = D[:, np.asarray(medoids)]
    pos = np.argmin(dm, axis=1)
    return pos, dm[np.arange(D.shape[0]), pos]


def energy_of(M, medoids) -> float:
    D = _values(M)
    return float(assign(D, medoids)[1].sum())


def _partition(D, medoids, **kw) -> Partition:
    medoids = np.sort(np.asarray(medoids, dtype=np.int64))
    pos, dist = assign(D, medoids)
    return Partition(k=len(medoids), medoids=medoids, labels=pos + 1, energy=float(dist.sum()), **kw)


def pam_build(M, k: int) -> np.ndarray:
    """Greedy BUILD initialisation (ties go to the lowest row index)."""
    D = _values(M)
    n = D.shape[0]
    if not 1 <= k <= n:
        raise DataValidationError(f"k={k} must lie in [1, n={n}]")
    medoids = [int(np.argmin(D.sum(axis=1)))]
    nearest = D[:, medoids[0]].copy()
    for _ in range(1, k):
        gain = np.maximum(nearest[None, :] - D, 0.0).sum(axis=1)
        gain[medoids] = -np.inf
        m = int(np.argmax(gain))
        medoids.append(m)
        np.minimum(nearest, D[:, m], out=nearest)
    return np.sort(np.array(medoids, dtype=np.int64))


def swap_deltas(D: np.ndarray, medoids: np.ndarray, block_rows: int = 1024) -> np.ndarray:
    """Energy change of every swap, shape ``(k, n)``: entry ``(i, x)`` replaces medoid i by row x.

    Entries for rows that are already medoids are ``+inf``.
    """
    n = D.shape[0]
    k = len(medoids)
    dm = D[:, medoids]
    order = np.argsort(dm, axis=1, kind="stable")
    near = order[:, 0]
    dn = dm[np.arange(n), near]
    ds = dm[np.arange(n), order[:, 1]] if k > 1 else np.full(n, np.inf)
    dn_total = dn.sum()
    member = np.zeros((n, k))
    member[np.arange(n), near] = 1.0
    out = np.empty((k, n))
    for start in range(0, n, block_rows):
        stop = min(start + block_rows, n)
        Dx = D[start:stop]  # candidate rows x, columns o
        kept = np.minimum(Dx, dn)
        shared = kept.sum(axis=1) - dn_total
        own = np.minimum(Dx, ds)
        own -= kept
        out[:, start:stop] = (shared[:, None] + own @ member).T
    out[:, medoids] = np.inf
    return out


def pam_swap(M, medoids, max_iter: int | None = None, **partition_kw) -> Partition:
    """Steepest-descent SWAP until no exchange lowers the energy.

    Ties between equally good swaps go to the lowest (medoid position,
    candidate row) pair; medoid positions follow sorted row indices.
    """
    D = _values(M)
    n = D.shape[0]
    medoids = np.sort(np.asarray(medoids, dtype=np.int64))
    if len(np.unique(medoids)) != len(medoids) or medoids.min() < 0 or medoids.max() >= n:
        raise DataValidationError("invalid medoid set")
    max_iter = 10 * n if max_iter is None else max_iter
    energy = energy_of(D, medoids)
    trace = [energy]
    swaps = 0
    while True:
        if len(medoids) == n:
            break
        delta = swap_deltas(D, medoids)
        flat = int(np.argmin(delta))
        best = delta.flat[flat]
        if not best < -SWAP_TOL * max(1.0, energy):
            break
        if swaps >= max_iter:
            raise ConvergenceError(f"SWAP did not converge in {max_iter} iterations")
        i, x = divmod(flat, n)
        medoids = medoids.copy()
        medoids[i] = x
        medoids.sort()
        energy = energy_of(D, medoids)
        trace.append(energy)
        swaps += 1
    return _partition(D, medoids, n_swaps=swaps, energy_trace=tuple(trace), **partition_kw)


def pam_fit(M, k: int, restarts: int = 1, seed: int | None = 0) -> Partition:
    """Best of ``restarts`` PAM runs: run 1 starts from BUILD, the rest from uniform random medoids.

    Restart ``r`` draws its medoids from ``default_rng([seed, r])`` so each
    restart is reproducible on its own. The minimum-energy run wins (ties:
    first encountered).
    """
    if restarts < 1:
        raise DataValidationError("restarts must be >= 1")
    D = _values(M)
    n = D.shape[0]
    if not 1 <= k <= n:
        raise DataValidationError(f"k={k} must lie in [1, n={n}]")
    best = pam_swap(D, pam_build(D, k))
    for r in range(1, restarts):
        rng = np.random.default_rng([0 if seed is None else seed, r])
        start = rng.choice(n, size=k, replace=False)
        cand = pam_swap(D, start)
        if cand.energy < best.energy:
            best = cand
    return Partition(
        k=best.k, medoids=best.medoids, labels=best.labels, energy=best.energy,
        restarts_used=restarts, seed=seed, n_swaps=best.n_swaps, energy_trace=best.energy_trace,
    )


def assign_nearest_medoid(part: Partition, m_new) -> int:
    """Cluster label for a new point given its dissimilarities to the ``n`` training rows."""
    m_new = np.asarray(m_new, dtype=float)
    if m_new.shape != (part.n,):
        raise DataValidationError(f"expected {part.n} dissimilarities, got shape {m_new.shape}")
    return int(np.argmin(m_new[part.medoids])) + 1


def assign_many(part: Partition, cross: np.ndarray) -> np.ndarray:
    cross = np.asarray(cross, dtype=float)
    if cross.ndim != 2 or cross.shape[1] != part.n:
        raise DataValidationError("cross-dissimilarity matrix has the wrong width")
    return np.argmin(cross[:, part.medoids], axis=1) + 1
