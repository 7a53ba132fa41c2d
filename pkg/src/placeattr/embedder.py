"""Place embeddings from the person x place co-visit matrix.

The matrix carries a 0/1 visit indicator ``L`` and a confidence weight ``W``
on observed cells. Unobserved cells are implicit zeros with a small uniform
weight. Factors are fitted by weighted alternating least squares (WALS):

    sum_ij w_ij (L_ij - u_i . v_j)^2 + lam * (sum_i |u_i|^2 + sum_j |v_j|^2)

Each half-sweep solves the per-row normal equations exactly, so the objective
above never increases from one sweep to the next.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .domain import PlaceAttrError, PlaceTable, ValidationError, VisitLog
from .features import EMBEDDING, FeatureMatrix
from .seeding import rng_for

_logger = logging.getLogger(__name__)

DEFAULT_CAP = 10
DEFAULT_RADIUS_KM = 2.0
DEFAULT_UNOBSERVED_WEIGHT = 0.01
_PIVOT_TOL = 1e-12


class SingularSystemError(PlaceAttrError, np.linalg.LinAlgError):
    """Normal equations could not be solved."""


@dataclass
class CovisitMatrix:
    """Observed cells of L and W share one CSR sparsity pattern."""

    L: sp.csr_matrix
    W: sp.csr_matrix
    person_ids: list[str]
    place_ids: list[str]
    unobserved_weight: float = DEFAULT_UNOBSERVED_WEIGHT

    def __post_init__(self):
        self.L = sp.csr_matrix(self.L, dtype=np.float64)
        self.W = sp.csr_matrix(self.W, dtype=np.float64)
        self.L.sort_indices()
        self.W.sort_indices()
        if self.L.shape != self.W.shape or self.W.shape != (len(self.person_ids), len(self.place_ids)):
            raise ValidationError("L, W and id maps have inconsistent shapes")
        if not (np.array_equal(self.L.indptr, self.W.indptr) and np.array_equal(self.L.indices, self.W.indices)):
            raise ValidationError("L and W must share the same sparsity pattern")
        if np.any(self.W.data <= 0) or not np.all(np.isfinite(self.W.data)):
            raise ValidationError("observed weights must be positive and finite")
        if self.unobserved_weight < 0:
            raise ValidationError("unobserved_weight must be non-negative")

    @classmethod
    def from_dense(cls, L, W, unobserved_weight: float = 0.0) -> "CovisitMatrix":
        """Every cell with ``W > 0`` is treated as observed."""
        L = np.asarray(L, dtype=np.float64)
        W = np.asarray(W, dtype=np.float64)
        rows, cols = np.nonzero(W > 0)
        Ws = sp.csr_matrix((W[rows, cols], (rows, cols)), shape=W.shape)
        # explicit zeros of L on observed cells must survive
        Ls = sp.csr_matrix((L[rows, cols], Ws.indices.copy(), Ws.indptr.copy()), shape=L.shape)
        return cls(Ls, Ws, [str(i) for i in range(W.shape[0])], [str(j) for j in range(W.shape[1])], unobserved_weight)

    @property
    def shape(self) -> tuple[int, int]:
        return self.W.shape

    def dense_weights(self) -> np.ndarray:
        out = np.full(self.shape, self.unobserved_weight)
        coo = self.W.tocoo()
        out[coo.row, coo.col] = coo.data
        return out


def build_covisit_matrix(
    log: VisitLog,
    places: PlaceTable | None = None,
    cap: int = DEFAULT_CAP,
    radius_km: float = DEFAULT_RADIUS_KM,
    unobserved_weight: float = DEFAULT_UNOBSERVED_WEIGHT,
) -> CovisitMatrix:
    """Visit indicators with capped, location-bias-normalized weights.

    ``W_ij = min(count_ij, cap) / max(1, n_other_ij)`` where ``n_other_ij`` is
    the number of distinct other places person ``i`` visited within
    ``radius_km`` of place ``j``.
    """
    places = log.places if places is None else places
    if cap < 1:
        raise ValidationError("cap must be >= 1")
    if not radius_km > 0:
        raise ValidationError("radius_km must be positive")
    n_places = len(places)
    n_people = log.n_people
    key, counts = np.unique(log.person * n_places + log.place, return_counts=True)
    person = key // n_places
    place = key % n_places

    # ordered pairs (a, b), a != b, of places within the radius
    xy = np.column_stack([places.x, places.y])
    near = cKDTree(xy).query_pairs(radius_km, output_type="ndarray")
    near = np.vstack([near, near[:, ::-1]]) if len(near) else np.empty((0, 2), dtype=np.int64)
    if len(near):
        adj = sp.csr_matrix((np.ones(len(near)), (near[:, 0], near[:, 1])), shape=(n_places, n_places))
    else:
        adj = sp.csr_matrix((n_places, n_places))
    visited = sp.csr_matrix((np.ones(len(key)), (person, place)), shape=(n_people, n_places))
    n_other = np.empty(len(key))
    chunk = 512
    for lo in range(0, n_people, chunk):
        sel = slice(*np.searchsorted(person, [lo, lo + chunk]))
        near_counts = (visited[lo:lo + chunk] @ adj).tocsr()
        n_other[sel] = np.asarray(near_counts[person[sel] - lo, place[sel]]).ravel()

    weights = np.minimum(counts, cap) / np.maximum(1.0, n_other)
    L = sp.csr_matrix((np.ones(len(key)), (person, place)), shape=(n_people, n_places))
    W = sp.csr_matrix((weights, (person, place)), shape=(n_people, n_places))
    return CovisitMatrix(L, W, list(log.person_ids), list(places.ids), unobserved_weight)


@dataclass
class EmbeddingFactors:
    U: np.ndarray
    V: np.ndarray
    lam: float
    final_loss: float
    sweep_losses: list[float]
    initial_loss: float = float("nan")
    reported_losses: list[float] = field(default_factory=list)
    person_ids: list[str] = field(default_factory=list)
    place_ids: list[str] = field(default_factory=list)
    seed: int | None = None

    @property
    def rank(self) -> int:
        return self.U.shape[1]

    def save(self, directory, prefix: str = "embedding") -> list[Path]:
        """Write ``.npy`` factor files with delimited id-map sidecars."""
        directory = Path(directory)
        written = []
        for name, mat, ids in (("persons", self.U, self.person_ids), ("places", self.V, self.place_ids)):
            p = directory / f"{prefix}_{name}.npy"
            np.save(p, np.ascontiguousarray(mat, dtype=np.float64))
            idp = directory / f"{prefix}_{name}.ids.txt"
            idp.write_text("".join(f"{i}\n" for i in ids), encoding="utf-8")
            written += [p, idp]
        return written

    @classmethod
    def load_places(cls, directory, prefix: str = "embedding") -> tuple[np.ndarray, list[str]]:
        directory = Path(directory)
        V = np.load(directory / f"{prefix}_places.npy")
        ids = (directory / f"{prefix}_places.ids.txt").read_text(encoding="utf-8").splitlines()
        return V, ids


def wals_objective(m: CovisitMatrix, U: np.ndarray, V: np.ndarray, lam: float) -> float:
    """Weighted squared error over all cells plus squared-norm regularization."""
    w0 = m.unobserved_weight
    coo = m.W.tocoo()
    pred = np.einsum("ij,ij->i", U[coo.row], V[coo.col])
    lval = m.L.tocoo().data
    observed = np.sum(coo.data * (lval - pred) ** 2)
    # unobserved cells have L = 0: w0 * (sum over all cells of pred^2 - observed part)
    all_sq = float(np.sum((U.T @ U) * (V.T @ V)))
    unobserved = w0 * (all_sq - np.sum(pred**2))
    return float(observed + unobserved + lam * (np.sum(U**2) + np.sum(V**2)))


def reported_objective(m: CovisitMatrix, U: np.ndarray, V: np.ndarray, lam: float) -> float:
    """Same data term, regularized by un-squared row norms."""
    data = wals_objective(m, U, V, 0.0)
    return float(data + lam * (np.linalg.norm(U, axis=1).sum() + np.linalg.norm(V, axis=1).sum()))


def _solve_rows(W: sp.csr_matrix, L: sp.csr_matrix, other: np.ndarray, w0: float, lam: float, workers: int = 1) -> np.ndarray:
    """Exact minimizer for every row of ``this`` given the ``other`` factor."""
    n, k = W.shape[0], other.shape[1]
    base = w0 * (other.T @ other)
    base[np.diag_indices(k)] += lam
    out = np.empty((n, k))

    def solve(lo: int, hi: int) -> None:
        for i in range(lo, hi):
            s, e = W.indptr[i], W.indptr[i + 1]
            cols = W.indices[s:e]
            Vi = other[cols]
            wi = W.data[s:e]
            A = base + (Vi.T * (wi - w0)) @ Vi
            b = (wi * L.data[s:e]) @ Vi
            try:
                c, low = scipy.linalg.cho_factor(A, check_finite=False)
                # a vanishing pivot means A is singular up to rounding
                if np.min(np.diag(c)) ** 2 <= _PIVOT_TOL * max(np.max(np.diag(A)), np.finfo(float).tiny):
                    raise np.linalg.LinAlgError
                x = scipy.linalg.cho_solve((c, low), b, check_finite=False)
            except (np.linalg.LinAlgError, ValueError):
                x = None
            if x is None or not np.all(np.isfinite(x)):
                raise SingularSystemError(
                    f"normal equations for row {i} are singular; use a positive regularization (lam > 0)"
                )
            out[i] = x

    if workers <= 1 or n < 64:
        solve(0, n)
    else:
        bounds = np.linspace(0, n, workers + 1).astype(int)
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(solve, bounds[:-1], bounds[1:]))
    return out


def solve_person_factors(m: CovisitMatrix, V: np.ndarray, lam: float, workers: int = 1) -> np.ndarray:
    return _solve_rows(m.W, m.L, V, m.unobserved_weight, lam, workers)


def solve_place_factors(m: CovisitMatrix, U: np.ndarray, lam: float, workers: int = 1) -> np.ndarray:
    Wt = m.W.T.tocsr()
    Lt = m.L.T.tocsr()
    Wt.sort_indices()
    Lt.sort_indices()
    return _solve_rows(Wt, Lt, U, m.unobserved_weight, lam, workers)


def wals_factorize(
    m: CovisitMatrix,
    rank: int = 64,
    lam: float = 0.1,
    max_sweeps: int = 20,
    tol: float = 1e-4,
    seed: int = 0,
    init: tuple[np.ndarray, np.ndarray] | None = None,
    workers: int = 1,
) -> EmbeddingFactors:
    """Alternate exact person and place solves until the objective settles.

    Stops when the relative improvement of a sweep drops below ``tol`` or after
    ``max_sweeps`` sweeps. ``sweep_losses`` records the objective after each
    (person, place) sweep pair.
    """
    if rank < 1:
        raise ValidationError("rank must be >= 1")
    if lam < 0:
        raise ValidationError("lam must be non-negative")
    if not tol > 0:
        raise ValidationError("tol must be positive")
    n_people, n_places = m.shape
    if init is None:
        rng = rng_for(seed, "embedder", "init")
        U = rng.uniform(-0.01, 0.01, size=(n_people, rank))
        V = rng.uniform(-0.01, 0.01, size=(n_places, rank))
    else:
        U, V = (np.array(a, dtype=np.float64) for a in init)
        if U.shape != (n_people, rank) or V.shape != (n_places, rank):
            raise ValidationError("init factors have the wrong shape")

    Wt = m.W.T.tocsr()
    Lt = m.L.T.tocsr()
    Wt.sort_indices()
    Lt.sort_indices()
    prev = wals_objective(m, U, V, lam)
    initial = prev
    losses: list[float] = []
    reported: list[float] = []
    for sweep in range(max_sweeps):
        U = _solve_rows(m.W, m.L, V, m.unobserved_weight, lam, workers)
        V = _solve_rows(Wt, Lt, U, m.unobserved_weight, lam, workers)
        loss = wals_objective(m, U, V, lam)
        losses.append(loss)
        reported.append(reported_objective(m, U, V, lam))
        _logger.debug("wals sweep %d: objective %.6g (reported %.6g)", sweep + 1, loss, reported[-1])
        if prev - loss < tol * max(abs(prev), np.finfo(float).tiny):
            break
        prev = loss
    return EmbeddingFactors(
        U, V, lam, losses[-1] if losses else initial, losses,
        initial_loss=initial, reported_losses=reported,
        person_ids=list(m.person_ids), place_ids=list(m.place_ids), seed=seed,
    )


def place_embedding_features(f: EmbeddingFactors, place_ids=None) -> FeatureMatrix:
    ids = list(place_ids if place_ids is not None else f.place_ids)
    if len(ids) != f.V.shape[0]:
        raise ValidationError("one place id per row of V required")
    columns = [f"emb:{k}" for k in range(f.rank)]
    return FeatureMatrix(ids, columns, [EMBEDDING] * f.rank, sp.csr_matrix(f.V))
