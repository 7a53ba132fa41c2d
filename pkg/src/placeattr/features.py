"""Spatio-temporal place features computed from a visit log.

Five groups are produced for every eligible place:

* ``duration`` -- histogram of stay lengths over configurable bins,
* ``arrival`` -- fraction of visits arriving in each of the 168 hours of the week,
* ``occupancy`` -- fraction of visits whose stay overlaps each hour of the week,
* ``transition_prev`` / ``transition_next`` -- fraction of visits for which the
  same person visited a place of a given category within a time window
  before arrival (or after departure).

Hour of week is ``day * 24 + hour`` with Sunday as day 0, evaluated at the
dataset's fixed UTC offset.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .domain import PlaceAttrError, PlaceTable, ValidationError, VisitLog, distinct_visitors

GROUPS = ("duration", "arrival", "occupancy", "transition_prev", "transition_next")
EMBEDDING = "embedding"
DAY_NAMES = ("Sun", "Mon", "Tue", "Wed", "Thu", "Fri", "Sat")
HOURS_PER_WEEK = 168
# 1970-01-01 was a Thursday
_EPOCH_HOUR_OF_WEEK = 4 * 24

DEFAULT_DURATION_EDGES = (15, 30, 45, 60, 90, 120, 180, 240)
DEFAULT_WINDOWS = (1, 4, 8, 16, 24)
_NO_HIT = np.iinfo(np.int8).max


class EmptyFeatureMatrixError(PlaceAttrError):
    """No place passed the eligibility threshold."""


@dataclass(frozen=True)
class FeaturizerConfig:
    duration_bin_edges: tuple[float, ...] = DEFAULT_DURATION_EDGES
    transition_windows: tuple[float, ...] = DEFAULT_WINDOWS
    min_visitors: int = 10
    utc_offset_hours: float = 0.0

    def __post_init__(self):
        edges = tuple(float(e) for e in self.duration_bin_edges)
        wins = tuple(float(w) for w in self.transition_windows)
        if not edges or any(b <= a for a, b in zip(edges, edges[1:])):
            raise ValidationError("duration_bin_edges must be non-empty and strictly ascending")
        if not wins or wins[0] <= 0 or any(b <= a for a, b in zip(wins, wins[1:])):
            raise ValidationError("transition_windows must be positive and strictly ascending")
        if len(wins) >= _NO_HIT:
            raise ValidationError("too many transition windows")
        if int(self.min_visitors) < 1:
            raise ValidationError("min_visitors must be >= 1")
        object.__setattr__(self, "duration_bin_edges", edges)
        object.__setattr__(self, "transition_windows", wins)
        object.__setattr__(self, "min_visitors", int(self.min_visitors))
        object.__setattr__(self, "utc_offset_hours", float(self.utc_offset_hours))

    @property
    def hour_of_week_bins(self) -> int:
        return HOURS_PER_WEEK


# --- feature names -----------------------------------------------------------------


def _num(v: float) -> str:
    return f"{v:g}"


def duration_names(edges: Sequence[float]) -> list[str]:
    names = [f"dur:<{_num(edges[0])}m"]
    names += [f"dur:{_num(a)}-{_num(b)}m" for a, b in zip(edges, edges[1:])]
    names.append(f"dur:>={_num(edges[-1])}m")
    return names


def hour_of_week_label(h: int) -> str:
    return f"{DAY_NAMES[h // 24]}{h % 24:02d}"


def arrival_names() -> list[str]:
    return [f"arr:{hour_of_week_label(h)}" for h in range(HOURS_PER_WEEK)]


def occupancy_names() -> list[str]:
    return [f"occ:{hour_of_week_label(h)}" for h in range(HOURS_PER_WEEK)]


def transition_names(direction: str, categories: Sequence[str], windows: Sequence[float]) -> list[str]:
    prefix = {"prev": "tprev", "next": "tnext"}[direction]
    return [f"{prefix}:{c}:{_num(w)}h" for c in categories for w in windows]


# --- feature matrix ------------------------------------------------------------------


@dataclass
class FeatureMatrix:
    """Sparse place x feature matrix with named columns and group tags."""

    row_ids: list[str]
    columns: list[str]
    groups: list[str]
    values: sp.csr_matrix
    _col_index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.row_ids = list(self.row_ids)
        self.columns = list(self.columns)
        self.groups = list(self.groups)
        self.values = sp.csr_matrix(self.values, dtype=np.float64)
        self.values.sort_indices()
        if self.values.shape != (len(self.row_ids), len(self.columns)):
            raise ValidationError(
                f"matrix shape {self.values.shape} does not match {len(self.row_ids)} rows x {len(self.columns)} columns"
            )
        if len(self.groups) != len(self.columns):
            raise ValidationError("one group tag per column required")
        if len(set(self.columns)) != len(self.columns):
            raise ValidationError("duplicate feature names")
        if len(set(self.row_ids)) != len(self.row_ids):
            raise ValidationError("duplicate row ids")
        if not np.all(np.isfinite(self.values.data)):
            raise ValidationError("feature values must be finite")
        self._col_index = {c: i for i, c in enumerate(self.columns)}

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def dense(self) -> np.ndarray:
        return self.values.toarray()

    def column_index(self, name: str) -> int:
        return self._col_index[name]

    def group_columns(self, group: str | Iterable[str]) -> list[str]:
        wanted = {group} if isinstance(group, str) else set(group)
        return [c for c, g in zip(self.columns, self.groups) if g in wanted]

    def select_columns(self, names: Sequence[str]) -> "FeatureMatrix":
        idx = [self._col_index[n] for n in names]
        return FeatureMatrix(self.row_ids, list(names), [self.groups[i] for i in idx], self.values[:, idx])

    def select_rows(self, row_ids: Sequence[str]) -> "FeatureMatrix":
        pos = {r: i for i, r in enumerate(self.row_ids)}
        idx = [pos[r] for r in row_ids]
        return FeatureMatrix(list(row_ids), self.columns, self.groups, self.values[idx])

    def rows_for(self, row_ids: Sequence[str]) -> sp.csr_matrix:
        """Rows in the requested order; ids absent from the matrix give zero rows."""
        pos = {r: i for i, r in enumerate(self.row_ids)}
        idx = np.array([pos.get(r, -1) for r in row_ids], dtype=np.int64)
        present = idx >= 0
        sel = sp.csr_matrix((np.ones(present.sum()), (np.flatnonzero(present), idx[present])),
                            shape=(len(row_ids), len(self.row_ids)))
        return (sel @ self.values).tocsr()

    def save(self, path) -> None:
        """Write ``place_id,feature_name,value`` triplets plus a ``.columns.csv`` sidecar."""
        path = Path(path)
        m = self.values.tocoo()
        order = np.lexsort((m.col, m.row))
        with path.open("w", encoding="utf-8") as fh:
            fh.write("place_id,feature_name,value\n")
            fh.writelines(
                f"{self.row_ids[r]},{self.columns[c]},{v!r}\n"
                for r, c, v in zip(m.row[order].tolist(), m.col[order].tolist(), m.data[order].tolist())
            )
        with sidecar_path(path).open("w", encoding="utf-8") as fh:
            fh.write("kind,name,group\n")
            fh.writelines(f"column,{c},{g}\n" for c, g in zip(self.columns, self.groups))
            fh.writelines(f"row,{r},\n" for r in self.row_ids)

    @classmethod
    def load(cls, path) -> "FeatureMatrix":
        path = Path(path)
        columns, groups, rows = [], [], []
        with sidecar_path(path).open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            next(reader)
            for kind, name, group in reader:
                if kind == "column":
                    columns.append(name)
                    groups.append(group)
                else:
                    rows.append(name)
        rpos = {r: i for i, r in enumerate(rows)}
        cpos = {c: i for i, c in enumerate(columns)}
        ri, ci, vals = [], [], []
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            next(reader)
            for lineno, (r, c, v) in enumerate(reader, start=2):
                if r not in rpos or c not in cpos:
                    raise ValidationError(f"{path}: unknown row or column at line {lineno}")
                ri.append(rpos[r])
                ci.append(cpos[c])
                vals.append(float(v))
        values = sp.csr_matrix((vals, (ri, ci)), shape=(len(rows), len(columns)))
        return cls(rows, columns, groups, values)

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureMatrix):
            return NotImplemented
        return (
            self.row_ids == other.row_ids
            and self.columns == other.columns
            and self.groups == other.groups
            and (self.values != other.values).nnz == 0
        )


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".columns.csv")


# --- per-visit primitives ------------------------------------------------------------


def hour_of_week(t_seconds, utc_offset_hours: float = 0.0) -> np.ndarray:
    local = np.asarray(t_seconds, dtype=np.float64) + utc_offset_hours * 3600.0
    return ((np.floor(local / 3600.0).astype(np.int64) + _EPOCH_HOUR_OF_WEEK) % HOURS_PER_WEEK)


def duration_bin(duration_minutes, edges: Sequence[float]) -> np.ndarray:
    return np.searchsorted(np.asarray(edges, dtype=np.float64), np.asarray(duration_minutes, dtype=np.float64), side="right")


def occupancy_hours(arrival, duration_minutes, utc_offset_hours: float = 0.0):
    """Expand visits into the distinct hour-of-week buckets their stay overlaps.

    Returns ``(visit_index, bucket)`` pairs, each pair appearing once.
    """
    arrival = np.asarray(arrival, dtype=np.float64) + utc_offset_hours * 3600.0
    end = arrival + np.asarray(duration_minutes, dtype=np.float64) * 60.0
    first = np.floor(arrival / 3600.0).astype(np.int64)
    last = np.ceil(end / 3600.0).astype(np.int64) - 1  # [arrival, end) is half-open
    span = np.minimum(last - first + 1, HOURS_PER_WEEK)
    visit = np.repeat(np.arange(len(arrival)), span)
    starts = np.repeat(np.cumsum(span) - span, span)
    offset = np.arange(len(visit)) - starts
    bucket = (np.repeat(first, span) + offset + _EPOCH_HOUR_OF_WEEK) % HOURS_PER_WEEK
    return visit, bucket


def transition_first_window(log: VisitLog, direction: str, windows: Sequence[float], targets=None) -> np.ndarray:
    """Smallest window index containing a same-person visit, per (event, category).

    For ``direction="prev"`` a neighbour counts when its arrival lies within
    ``w`` hours before the target's arrival; for ``"next"`` when its arrival
    lies within ``w`` hours after the target's departure. Entries with no
    neighbour inside the largest window hold ``127``.
    """
    if direction not in ("prev", "next"):
        raise ValueError("direction must be 'prev' or 'next'")
    limits = np.asarray(windows, dtype=np.float64) * 3600.0
    n = len(log)
    n_cat = len(log.places.categories)
    if targets is None:
        targets = np.arange(n)
    targets = np.asarray(targets, dtype=np.int64)
    out = np.full((len(targets), n_cat), _NO_HIT, dtype=np.int8)
    person, arrival = log.person, log.arrival
    anchor = arrival if direction == "prev" else log.departure
    cat = log.places.category[log.place]
    step = -1 if direction == "prev" else 1
    row = np.arange(len(targets))
    lag = 1
    while len(targets):
        nb = targets + step * lag
        ok = (nb >= 0) & (nb < n)
        nbc = np.clip(nb, 0, n - 1)
        if direction == "prev":
            gap = anchor[targets] - arrival[nbc]
        else:
            gap = arrival[nbc] - anchor[targets]
        ok &= (person[nbc] == person[targets]) & (gap <= limits[-1])
        if not ok.any():
            break
        t, r, g = targets[ok], row[ok], gap[ok]
        widx = np.searchsorted(limits, g, side="left").astype(np.int8)
        c = cat[nbc[ok]]
        out[r, c] = np.minimum(out[r, c], widx)
        # neighbours further away in sequence are further away in time
        targets, row = t, r
        lag += 1
    return out


# --- per-place group features ------------------------------------------------------


def duration_features(durations, config: FeaturizerConfig = FeaturizerConfig()) -> np.ndarray:
    durations = np.asarray(durations, dtype=np.float64)
    if len(durations) == 0:
        raise ValidationError("duration_features needs at least one visit")
    counts = np.bincount(duration_bin(durations, config.duration_bin_edges), minlength=len(config.duration_bin_edges) + 1)
    return counts / len(durations)


def arrival_features(arrivals, utc_offset_hours: float = 0.0) -> np.ndarray:
    arrivals = np.asarray(arrivals, dtype=np.float64)
    if len(arrivals) == 0:
        raise ValidationError("arrival_features needs at least one visit")
    return np.bincount(hour_of_week(arrivals, utc_offset_hours), minlength=HOURS_PER_WEEK) / len(arrivals)


def occupancy_features(arrivals, durations, utc_offset_hours: float = 0.0) -> np.ndarray:
    arrivals = np.asarray(arrivals, dtype=np.float64)
    if len(arrivals) == 0:
        raise ValidationError("occupancy_features needs at least one visit")
    _, bucket = occupancy_hours(arrivals, durations, utc_offset_hours)
    return np.bincount(bucket, minlength=HOURS_PER_WEEK) / len(arrivals)


def transition_features(log: VisitLog, place_id: str, direction: str, config: FeaturizerConfig = FeaturizerConfig()) -> np.ndarray:
    """Transition fractions for one place, ordered category-major then window."""
    j = log.places.index[place_id]
    targets = np.flatnonzero(log.place == j)
    if len(targets) == 0:
        raise ValidationError(f"place {place_id!r} has no visits")
    first = transition_first_window(log, direction, config.transition_windows, targets)
    n_win = len(config.transition_windows)
    hits = first[:, :, None] <= np.arange(n_win)[None, None, :]
    return (hits.sum(axis=0) / len(targets)).reshape(-1)


# --- assembly ----------------------------------------------------------------------


def feature_schema(categories: Sequence[str], config: FeaturizerConfig) -> tuple[list[str], list[str]]:
    blocks = [
        ("duration", duration_names(config.duration_bin_edges)),
        ("arrival", arrival_names()),
        ("occupancy", occupancy_names()),
        ("transition_prev", transition_names("prev", categories, config.transition_windows)),
        ("transition_next", transition_names("next", categories, config.transition_windows)),
    ]
    columns = [n for _, names in blocks for n in names]
    groups = [g for g, names in blocks for _ in names]
    return columns, groups


def _per_place(rows_of_event: np.ndarray, cols: np.ndarray, n_rows: int, n_cols: int, weights=None) -> np.ndarray:
    flat = rows_of_event * n_cols + cols
    return np.bincount(flat, weights=weights, minlength=n_rows * n_cols).reshape(n_rows, n_cols)


def featurize(log: VisitLog, places: PlaceTable | None = None, config: FeaturizerConfig = FeaturizerConfig()) -> FeatureMatrix:
    """Compute all five feature groups for places with enough distinct visitors."""
    places = log.places if places is None else places
    if places is not log.places and places != log.places:
        raise ValidationError("visit log was validated against a different PlaceTable")
    eligible = np.flatnonzero(distinct_visitors(log) >= config.min_visitors)
    if len(eligible) == 0:
        raise EmptyFeatureMatrixError(f"no place has at least {config.min_visitors} distinct visitors")
    row_of_place = np.full(len(places), -1, dtype=np.int64)
    row_of_place[eligible] = np.arange(len(eligible))
    targets = np.flatnonzero(row_of_place[log.place] >= 0)
    rows = row_of_place[log.place[targets]]
    n_rows = len(eligible)
    n_visits = np.bincount(rows, minlength=n_rows).astype(np.float64)
    off = config.utc_offset_hours

    n_dur = len(config.duration_bin_edges) + 1
    dur = _per_place(rows, duration_bin(log.duration[targets], config.duration_bin_edges), n_rows, n_dur)
    arr = _per_place(rows, hour_of_week(log.arrival[targets], off), n_rows, HOURS_PER_WEEK)
    vi, bucket = occupancy_hours(log.arrival[targets], log.duration[targets], off)
    occ = _per_place(rows[vi], bucket, n_rows, HOURS_PER_WEEK)

    n_cat = len(places.categories)
    n_win = len(config.transition_windows)
    trans = []
    for direction in ("prev", "next"):
        first = transition_first_window(log, direction, config.transition_windows, targets)
        hist = np.zeros((n_rows, n_cat, n_win + 1))
        for c in range(n_cat):
            w = np.minimum(first[:, c].astype(np.int64), n_win)  # n_win means "no hit"
            hist[:, c, :] = _per_place(rows, w, n_rows, n_win + 1)
        trans.append(np.cumsum(hist[:, :, :n_win], axis=2).reshape(n_rows, n_cat * n_win))

    block = np.hstack([dur, arr, occ, *trans]) / n_visits[:, None]
    columns, groups = feature_schema(places.category_names, config)
    return FeatureMatrix([places.ids[j] for j in eligible], columns, groups, sp.csr_matrix(block))
