"""Core data types, file ingestion and eligibility filtering.

Visit logs are stored column-wise (numpy arrays) because every downstream
stage is vectorized over events. Row objects (:class:`VisitEvent`,
:class:`Place`) exist for construction and inspection of small cases.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np


class PlaceAttrError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(PlaceAttrError, ValueError):
    """An input record or object violates a data invariant."""


class DegenerateLabelsError(PlaceAttrError, ValueError):
    """Labels do not contain both classes."""


@dataclass(frozen=True)
class Category:
    id: int
    name: str


@dataclass(frozen=True)
class Place:
    place_id: str
    category: Category
    x: float
    y: float


@dataclass(frozen=True)
class VisitEvent:
    person_id: str
    place_id: str
    arrival: float  # UTC seconds
    duration: float  # minutes


def _frozen(a, dtype=None) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


class PlaceTable:
    """Places with category and planar coordinates (km)."""

    def __init__(
        self,
        place_ids: Sequence[str],
        category_codes: Sequence[int],
        x: Sequence[float],
        y: Sequence[float],
        category_names: Sequence[str],
    ):
        names = [str(n) for n in category_names]
        if any(not n for n in names):
            raise ValidationError("category names must be non-empty")
        if len(set(names)) != len(names):
            raise ValidationError("category names must be unique")
        self.categories: tuple[Category, ...] = tuple(Category(i, n) for i, n in enumerate(names))
        self.ids: tuple[str, ...] = tuple(str(p) for p in place_ids)
        self.category = _frozen(category_codes, np.int64)
        self.x = _frozen(x, np.float64)
        self.y = _frozen(y, np.float64)
        n = len(self.ids)
        if not (len(self.category) == len(self.x) == len(self.y) == n):
            raise ValidationError("place columns have inconsistent lengths")
        index: dict[str, int] = {}
        for i, pid in enumerate(self.ids):
            if pid in index:
                raise ValidationError(f"duplicate place_id {pid!r}")
            index[pid] = i
        self.index = index
        if n and (self.category.min() < 0 or self.category.max() >= len(names)):
            raise ValidationError("category code out of range")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise ValidationError("place coordinates must be finite")
        self._cat_index = {c.name: c.id for c in self.categories}

    @classmethod
    def from_places(cls, places: Iterable[Place], category_names: Sequence[str] | None = None):
        places = list(places)
        if category_names is None:
            by_id = {p.category.id: p.category.name for p in places}
            category_names = [by_id[i] for i in range(max(by_id) + 1)] if by_id else []
        return cls(
            [p.place_id for p in places],
            [p.category.id for p in places],
            [p.x for p in places],
            [p.y for p in places],
            category_names,
        )

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, place_id: str) -> Place:
        i = self.index[place_id]
        return Place(self.ids[i], self.categories[self.category[i]], float(self.x[i]), float(self.y[i]))

    def __iter__(self):
        return (self[pid] for pid in self.ids)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PlaceTable):
            return NotImplemented
        return (
            self.ids == other.ids
            and self.categories == other.categories
            and np.array_equal(self.category, other.category)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
        )

    @property
    def category_names(self) -> list[str]:
        return [c.name for c in self.categories]

    def category_id(self, name: str) -> int:
        try:
            return self._cat_index[name]
        except KeyError:
            raise ValidationError(f"unknown category {name!r}") from None

    def category_of(self, place_id: str) -> str:
        return self.categories[self.category[self.index[place_id]]].name


class VisitLog:
    """Visits sorted by (person_id, arrival), validated against a PlaceTable.

    Columns: ``person`` (codes into ``person_ids``, which are sorted
    lexicographically), ``place`` (row indices into the PlaceTable),
    ``arrival`` (UTC seconds) and ``duration`` (minutes).
    """

    def __init__(
        self,
        person: np.ndarray,
        place: np.ndarray,
        arrival: np.ndarray,
        duration: np.ndarray,
        person_ids: Sequence[str],
        places: PlaceTable,
        line_numbers: np.ndarray | None = None,
    ):
        person = np.asarray(person, dtype=np.int64)
        place = np.asarray(place, dtype=np.int64)
        arrival = np.asarray(arrival, dtype=np.float64)
        duration = np.asarray(duration, dtype=np.float64)
        n = len(person)
        if not (len(place) == len(arrival) == len(duration) == n):
            raise ValidationError("visit columns have inconsistent lengths")
        lines = np.arange(1, n + 1) if line_numbers is None else np.asarray(line_numbers)

        bad = ~(duration > 0) | ~np.isfinite(duration)
        if bad.any():
            raise ValidationError(f"nonpositive duration at line {int(lines[np.argmax(bad)])}")
        bad = ~np.isfinite(arrival)
        if bad.any():
            raise ValidationError(f"non-finite arrival at line {int(lines[np.argmax(bad)])}")
        if n and (place.min() < 0 or place.max() >= len(places)):
            raise ValidationError("place index out of range")

        # canonical person order: lexicographic on the opaque id
        person_ids = [str(p) for p in person_ids]
        order_ids = sorted(range(len(person_ids)), key=person_ids.__getitem__)
        remap = np.empty(len(person_ids), dtype=np.int64)
        remap[order_ids] = np.arange(len(person_ids))
        person = remap[person] if n else person
        person_ids = [person_ids[i] for i in order_ids]

        order = np.lexsort((arrival, person))
        person, place, arrival, duration, lines = (
            person[order], place[order], arrival[order], duration[order], lines[order]
        )
        if n > 1:
            same = person[1:] == person[:-1]
            overlap = same & (arrival[1:] < arrival[:-1] + duration[:-1] * 60.0)
            if overlap.any():
                k = int(np.argmax(overlap))
                raise ValidationError(
                    f"overlapping visits for person {person_ids[person[k]]!r} "
                    f"at lines {int(lines[k])} and {int(lines[k + 1])}"
                )

        self.places = places
        self.person_ids: tuple[str, ...] = tuple(person_ids)
        self.person = _frozen(person)
        self.place = _frozen(place)
        self.arrival = _frozen(arrival)
        self.duration = _frozen(duration)

    @classmethod
    def from_events(cls, events: Iterable[VisitEvent], places: PlaceTable) -> "VisitLog":
        events = list(events)
        pindex: dict[str, int] = {}
        person = []
        place = []
        for line, e in enumerate(events, start=1):
            if e.place_id not in places.index:
                raise ValidationError(f"unknown place_id {e.place_id!r} at line {line}")
            person.append(pindex.setdefault(e.person_id, len(pindex)))
            place.append(places.index[e.place_id])
        return cls(
            np.array(person, dtype=np.int64),
            np.array(place, dtype=np.int64),
            [e.arrival for e in events],
            [e.duration for e in events],
            list(pindex),
            places,
        )

    def __len__(self) -> int:
        return len(self.person)

    def __iter__(self):
        for i in range(len(self)):
            yield VisitEvent(
                self.person_ids[self.person[i]],
                self.places.ids[self.place[i]],
                float(self.arrival[i]),
                float(self.duration[i]),
            )

    @property
    def events(self) -> list[VisitEvent]:
        return list(self)

    @property
    def departure(self) -> np.ndarray:
        return self.arrival + self.duration * 60.0

    @property
    def n_people(self) -> int:
        return len(self.person_ids)

    def __eq__(self, other) -> bool:
        if not isinstance(other, VisitLog):
            return NotImplemented
        return (
            self.places == other.places
            and self.person_ids == other.person_ids
            and all(
                np.array_equal(getattr(self, c), getattr(other, c))
                for c in ("person", "place", "arrival", "duration")
            )
        )


@dataclass(frozen=True)
class LabelTable:
    attribute_name: str
    entries: Mapping[str, bool] = field(default_factory=dict)

    @property
    def n_pos(self) -> int:
        return sum(1 for v in self.entries.values() if v)

    @property
    def n_neg(self) -> int:
        return sum(1 for v in self.entries.values() if not v)

    def check_trainable(self) -> None:
        if self.n_pos == 0 or self.n_neg == 0:
            raise DegenerateLabelsError(
                f"attribute {self.attribute_name!r} needs at least one positive and one negative label "
                f"(got {self.n_pos} positive, {self.n_neg} negative)"
            )

    def restrict(self, place_ids: Iterable[str]) -> "LabelTable":
        keep = set(place_ids)
        return LabelTable(self.attribute_name, {p: v for p, v in self.entries.items() if p in keep})


# --- file formats --------------------------------------------------------------

VISIT_HEADER = ["person_id", "place_id", "arrival_unix_seconds", "duration_minutes"]
PLACE_HEADER = ["place_id", "category_name", "x_km", "y_km"]
LABEL_HEADER = ["attribute_name", "place_id", "label"]


def _rows(path, header: list[str]):
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first is None or [h.strip() for h in first] != header:
            raise ValidationError(f"{path}: expected header {','.join(header)} at line 1")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValidationError(
                    f"{path}: malformed record at line {lineno}: expected {len(header)} fields, got {len(row)}"
                )
            yield lineno, row


def _number(text: str, what: str, path, lineno: int) -> float:
    try:
        v = float(text)
    except ValueError:
        raise ValidationError(f"{path}: malformed {what} {text!r} at line {lineno}") from None
    if not math.isfinite(v):
        raise ValidationError(f"{path}: non-finite {what} at line {lineno}")
    return v


def load_places(path) -> PlaceTable:
    ids, cats, xs, ys = [], [], [], []
    seen: dict[str, int] = {}
    cat_index: dict[str, int] = {}
    for lineno, (pid, cname, x, y) in _rows(path, PLACE_HEADER):
        if not pid:
            raise ValidationError(f"{path}: empty place_id at line {lineno}")
        if not cname:
            raise ValidationError(f"{path}: empty category_name at line {lineno}")
        if pid in seen:
            raise ValidationError(f"{path}: duplicate place_id {pid!r} at line {lineno} (first at line {seen[pid]})")
        seen[pid] = lineno
        ids.append(pid)
        cats.append(cat_index.setdefault(cname, len(cat_index)))
        xs.append(_number(x, "x_km", path, lineno))
        ys.append(_number(y, "y_km", path, lineno))
    return PlaceTable(ids, cats, xs, ys, list(cat_index))


def load_visit_log(path, places: PlaceTable) -> VisitLog:
    person, place, arrival, duration, lines = [], [], [], [], []
    pindex: dict[str, int] = {}
    for lineno, (pid, plid, arr, dur) in _rows(path, VISIT_HEADER):
        if not pid:
            raise ValidationError(f"{path}: empty person_id at line {lineno}")
        j = places.index.get(plid)
        if j is None:
            raise ValidationError(f"{path}: unknown place_id {plid!r} at line {lineno}")
        a = _number(arr, "arrival", path, lineno)
        d = _number(dur, "duration", path, lineno)
        if d <= 0:
            raise ValidationError(f"{path}: nonpositive duration at line {lineno}")
        person.append(pindex.setdefault(pid, len(pindex)))
        place.append(j)
        arrival.append(a)
        duration.append(d)
        lines.append(lineno)
    try:
        return VisitLog(
            np.array(person, dtype=np.int64),
            np.array(place, dtype=np.int64),
            arrival,
            duration,
            list(pindex),
            places,
            line_numbers=np.array(lines, dtype=np.int64),
        )
    except ValidationError as e:
        raise ValidationError(f"{path}: {e}") from None


def load_labels(path, places: PlaceTable | None = None) -> list[LabelTable]:
    tables: dict[str, dict[str, bool]] = {}
    first_line: dict[tuple[str, str], int] = {}
    for lineno, (attr, pid, lab) in _rows(path, LABEL_HEADER):
        if not attr:
            raise ValidationError(f"{path}: empty attribute_name at line {lineno}")
        if lab not in ("0", "1"):
            raise ValidationError(f"{path}: label must be 0 or 1 at line {lineno}, got {lab!r}")
        if places is not None and pid not in places.index:
            raise ValidationError(f"{path}: unknown place_id {pid!r} at line {lineno}")
        value = lab == "1"
        entries = tables.setdefault(attr, {})
        if pid in entries and entries[pid] != value:
            raise ValidationError(
                f"{path}: conflicting labels for ({attr!r}, {pid!r}) at lines {first_line[attr, pid]} and {lineno}"
            )
        first_line.setdefault((attr, pid), lineno)
        entries[pid] = value
    return [LabelTable(a, e) for a, e in tables.items()]


def write_places(places: PlaceTable, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLACE_HEADER)
        for i, pid in enumerate(places.ids):
            w.writerow([pid, places.categories[places.category[i]].name, repr(float(places.x[i])), repr(float(places.y[i]))])


def _fmt_num(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def write_visit_log(log: VisitLog, path) -> None:
    pids, plids = log.person_ids, log.places.ids
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(",".join(VISIT_HEADER) + "\n")
        fh.writelines(
            f"{pids[p]},{plids[q]},{_fmt_num(a)},{_fmt_num(d)}\n"
            for p, q, a, d in zip(log.person.tolist(), log.place.tolist(), log.arrival.tolist(), log.duration.tolist())
        )


def write_labels(labels: Sequence[LabelTable], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LABEL_HEADER)
        for table in labels:
            for pid, v in table.entries.items():
                w.writerow([table.attribute_name, pid, int(bool(v))])


def distinct_visitors(log: VisitLog) -> np.ndarray:
    """Number of distinct people per PlaceTable row."""
    n_places = len(log.places)
    pairs = np.unique(log.person * n_places + log.place)
    return np.bincount(pairs % n_places, minlength=n_places)


def eligible_places(log: VisitLog, min_visitors: int = 10) -> set[str]:
    if min_visitors < 1:
        raise ValueError("min_visitors must be >= 1")
    counts = distinct_visitors(log)
    return {log.places.ids[j] for j in np.flatnonzero(counts >= min_visitors)}
