"""Synthetic places, people, attribute labels and visit logs.

The generative process is deliberately simple:

* places are scattered uniformly over a square, each with a category drawn
  from ``category_mix``;
* every person has a home place, optionally a work place, a per-category
  taste multiplier, and a short list of nearby candidate places per category;
* each person-day is a time-inhomogeneous first-order Markov chain over
  categories (home -> ... -> home), with a place picked among the person's
  candidates in proportion to a context-dependent weight;
* attributes perturb those weights or the stay lengths of positive places.

Channels and how a positive place differs from a negative one, at strength
``s`` (0 gives identical parameters for both classes):

``duration_shift``          stay-length median multiplied by ``1 + s*(multiplier-1)``
``arrival_shift``           choice weight x ``1 + s*(boost-1)`` when the arrival hour is in ``hours``
``weekend_shift``           choice weight x ``1 + s*(boost-1)`` on Saturday and Sunday
``prev_category_affinity``  choice weight x ``1 + s*(boost-1)`` right after a ``category`` visit,
                            and x ``taste[category] ** (s*clientele)``
``next_category_affinity``  next stop forced to ``category`` with probability ``s*probability``,
                            and choice weight x ``taste[category] ** (s*clientele)``

Defaults favour clear signals over realism.
"""
from __future__ import annotations

import json
import math
import random
from bisect import bisect_right
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import accumulate
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy.spatial import cKDTree

from .domain import LabelTable, PlaceTable, ValidationError, VisitLog
from .features import hour_of_week
from .seeding import derive_seed, rng_for

CHANNELS = (
    "duration_shift",
    "arrival_shift",
    "weekend_shift",
    "prev_category_affinity",
    "next_category_affinity",
)
# feature group each channel is planted in
CHANNEL_GROUP = {
    "duration_shift": "duration",
    "arrival_shift": "arrival",
    "weekend_shift": "arrival",
    "prev_category_affinity": "transition_prev",
    "next_category_affinity": "transition_next",
}
CHANNEL_DEFAULTS = {
    "duration_shift": {"multiplier": 1.6},
    "arrival_shift": {"hours": [7, 10], "boost": 6.0},
    "weekend_shift": {"boost": 3.0},
    "prev_category_affinity": {"category": "theater", "boost": 6.0, "clientele": 5.0},
    "next_category_affinity": {"category": "park", "probability": 0.4, "clientele": 5.0},
}

HOME = "home"
WORK = "work"
SUNDAY_2023 = 1672531200  # 2023-01-01 00:00 UTC


def _profile(*spans: tuple[int, int, float], floor: float = 0.02) -> list[float]:
    prof = [floor] * 24
    for lo, hi, v in spans:
        for h in range(lo, hi):
            prof[h] = max(prof[h], v)
    return prof


@dataclass(frozen=True)
class CategorySpec:
    """Behavioural template of one venue category."""

    name: str
    median_minutes: float
    sigma: float = 0.35
    appeal: float = 1.0
    hours: tuple[float, ...] = tuple(_profile((8, 22, 1.0)))
    weekend_factor: float = 1.0


DEFAULT_TAXONOMY: tuple[CategorySpec, ...] = (
    CategorySpec("restaurant", 60, 0.5, 3.0, tuple(_profile((7, 10, 0.35), (11, 14, 1.0), (17, 22, 1.0), (14, 17, 0.2)))),
    CategorySpec("cafe", 30, 0.4, 1.2, tuple(_profile((7, 11, 1.0), (11, 18, 0.6)))),
    CategorySpec("bar", 90, 0.4, 1.0, tuple(_profile((17, 24, 1.0), (0, 2, 0.5))), 1.3),
    CategorySpec("grocery_store", 25, 0.4, 1.2, tuple(_profile((8, 21, 1.0)))),
    CategorySpec("gas_station", 8, 0.3, 0.6, tuple(_profile((6, 22, 1.0)))),
    CategorySpec("theater", 140, 0.2, 0.8, tuple(_profile((13, 16, 0.6), (16, 20, 1.0))), 1.5),
    CategorySpec("museum", 100, 0.3, 0.5, tuple(_profile((10, 17, 1.0))), 1.8),
    CategorySpec("luxury_hotel", 120, 0.5, 0.4, tuple(_profile((11, 23, 1.0)))),
    CategorySpec("park", 50, 0.5, 0.9, tuple(_profile((7, 20, 1.0))), 1.6),
    CategorySpec("beach", 120, 0.4, 0.5, tuple(_profile((10, 18, 1.0))), 2.0),
    CategorySpec("surf_shop", 30, 0.4, 0.3, tuple(_profile((10, 18, 1.0))), 1.5),
    CategorySpec("gym", 70, 0.3, 0.7, tuple(_profile((6, 9, 1.0), (17, 21, 1.0), (9, 17, 0.3)))),
    CategorySpec("shopping_mall", 80, 0.4, 0.8, tuple(_profile((10, 21, 1.0))), 1.4),
)

# (from, to) -> multiplier on the base category transition weight
DEFAULT_PAIR_BOOSTS = {
    ("theater", "restaurant"): 3.0,
    ("museum", "restaurant"): 2.0,
    ("luxury_hotel", "restaurant"): 2.0,
    ("restaurant", "bar"): 2.0,
    ("restaurant", "theater"): 1.5,
    ("beach", "surf_shop"): 3.0,
    ("surf_shop", "beach"): 2.0,
    ("park", "restaurant"): 1.5,
    ("work", "grocery_store"): 1.5,
    ("gym", "cafe"): 1.5,
}

DEFAULT_CATEGORY_MIX = {
    HOME: 0.08, WORK: 0.08, "restaurant": 0.40, "cafe": 0.05, "bar": 0.04, "grocery_store": 0.05,
    "gas_station": 0.03, "theater": 0.03, "museum": 0.03, "luxury_hotel": 0.03, "park": 0.05,
    "beach": 0.03, "surf_shop": 0.02, "gym": 0.04, "shopping_mall": 0.04,
}


@dataclass(frozen=True)
class AttributeSpec:
    name: str
    base_rate: float = 0.3
    signal_channels: tuple[str, ...] = ()
    strength: float = 1.0
    channel_params: Mapping[str, Mapping] = field(default_factory=dict)
    categories: tuple[str, ...] = ("restaurant",)

    def __post_init__(self):
        if not self.name:
            raise ValidationError("attribute name must be non-empty")
        if not 0.0 <= self.base_rate <= 1.0:
            raise ValidationError(f"attribute {self.name!r}: base_rate must be in [0, 1]")
        if not 0.0 <= self.strength <= 1.0:
            raise ValidationError(f"attribute {self.name!r}: strength must be in [0, 1]")
        for ch in self.signal_channels:
            if ch not in CHANNELS:
                raise ValidationError(f"attribute {self.name!r}: unknown channel {ch!r}")
        object.__setattr__(self, "signal_channels", tuple(self.signal_channels))
        object.__setattr__(self, "categories", tuple(self.categories))
        merged = {ch: {**CHANNEL_DEFAULTS[ch], **dict(self.channel_params.get(ch, {}))} for ch in self.signal_channels}
        object.__setattr__(self, "channel_params", merged)

    def param(self, channel: str, key: str):
        return self.channel_params[channel][key]


@dataclass(frozen=True)
class WorldConfig:
    n_places: int = 2000
    n_people: int = 5000
    n_days: int = 90
    category_mix: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_CATEGORY_MIX))
    attribute_specs: tuple[AttributeSpec, ...] = ()
    rng_seed: int = 0
    extent_km: float = 20.0
    start_unix: int = SUNDAY_2023
    employment_rate: float = 0.7
    work_attendance: float = 0.9
    lunch_out_rate: float = 0.35
    outing_rate: float = 0.75
    max_stops: int = 6
    home_candidates: int = 8
    work_candidates: int = 3
    explore_rate: float = 0.05
    taste_sigma: float = 1.2
    place_noise: float = 0.25
    duration_jitter: float = 0.15
    taxonomy: tuple[CategorySpec, ...] = DEFAULT_TAXONOMY
    pair_boosts: Mapping[tuple[str, str], float] = field(default_factory=lambda: dict(DEFAULT_PAIR_BOOSTS))

    def __post_init__(self):
        for name in ("n_places", "n_people", "n_days"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be >= 1")
        mix = dict(self.category_mix)
        if any(v < 0 for v in mix.values()):
            raise ValidationError("category_mix: probabilities must be non-negative")
        total = sum(mix.values())
        if abs(total - 1.0) > 1e-9:
            raise ValidationError(f"category_mix: probabilities sum to {total:.12g}, expected 1")
        known = {c.name for c in self.taxonomy} | {HOME, WORK}
        for c in mix:
            if c not in known:
                raise ValidationError(f"category_mix: category {c!r} has no taxonomy entry")
        if mix.get(HOME, 0) <= 0:
            raise ValidationError("category_mix: the home category needs a positive share")
        names = [a.name for a in self.attribute_specs]
        if len(set(names)) != len(names):
            raise ValidationError("attribute names must be unique")
        for a in self.attribute_specs:
            for ch in ("prev_category_affinity", "next_category_affinity"):
                if ch in a.signal_channels and a.param(ch, "category") not in known:
                    raise ValidationError(f"attribute {a.name!r}: unknown affinity category {a.param(ch, 'category')!r}")
        for rate in ("employment_rate", "work_attendance", "lunch_out_rate", "outing_rate", "explore_rate"):
            if not 0.0 <= getattr(self, rate) <= 1.0:
                raise ValidationError(f"{rate} must be in [0, 1]")
        object.__setattr__(self, "category_mix", mix)
        object.__setattr__(self, "attribute_specs", tuple(self.attribute_specs))

    @property
    def category_names(self) -> list[str]:
        venue = [c.name for c in self.taxonomy]
        return [HOME, WORK] + venue

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pair_boosts"] = [[a, b, v] for (a, b), v in self.pair_boosts.items()]
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "WorldConfig":
        d = dict(d)
        if "attribute_specs" in d:
            d["attribute_specs"] = tuple(
                AttributeSpec(**{**a, "signal_channels": tuple(a.get("signal_channels", ())),
                                 "categories": tuple(a.get("categories", ("restaurant",)))})
                for a in d["attribute_specs"]
            )
        if "taxonomy" in d:
            d["taxonomy"] = tuple(CategorySpec(**{**c, "hours": tuple(c["hours"])}) if "hours" in c else CategorySpec(**c)
                                  for c in d["taxonomy"])
        if "pair_boosts" in d:
            d["pair_boosts"] = {(a, b): float(v) for a, b, v in d["pair_boosts"]}
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown world config field(s): {', '.join(sorted(unknown))}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "WorldConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def default_attributes(strength: float = 0.8, with_null: bool = True) -> tuple[AttributeSpec, ...]:
    """Six planted restaurant attributes covering every channel, plus a null one."""
    specs = [
        AttributeSpec("long_stay", 0.3, ("duration_shift",), strength, {"duration_shift": {"multiplier": 1.6}}),
        AttributeSpec("breakfast", 0.3, ("arrival_shift",), strength, {"arrival_shift": {"hours": [7, 10], "boost": 6.0}}),
        AttributeSpec("weekend_crowd", 0.3, ("weekend_shift",), strength, {"weekend_shift": {"boost": 3.0}}),
        AttributeSpec("romantic", 0.3, ("prev_category_affinity",), strength,
                      {"prev_category_affinity": {"category": "theater", "boost": 6.0}}),
        AttributeSpec("outdoor_seating", 0.3, ("next_category_affinity",), strength,
                      {"next_category_affinity": {"category": "park", "probability": 0.4}}),
        AttributeSpec("nightcap", 0.3, ("next_category_affinity",), strength,
                      {"next_category_affinity": {"category": "bar", "probability": 0.4}}),
    ]
    if with_null:
        specs.append(AttributeSpec("null_attribute", 0.5, ("duration_shift",), 0.0))
    return tuple(specs)


# --- world ---------------------------------------------------------------------------


@dataclass
class WorldTruth:
    """Planted per-place and per-person parameters."""

    config: WorldConfig
    duration_mu: np.ndarray  # log-minutes, attribute shifts included
    duration_sigma: np.ndarray
    popularity: np.ndarray
    labels: dict[str, np.ndarray]  # attribute -> int8 (1 pos, 0 neg, -1 not applicable)
    effects: dict[str, dict[str, np.ndarray]]  # attribute -> parameter name -> per-place value
    home: np.ndarray
    work: np.ndarray  # -1 when not employed
    taste: np.ndarray  # people x categories
    hour_noise: np.ndarray  # places x 24, log scale
    weekend_noise: np.ndarray  # places, log scale
    prev_noise: np.ndarray  # places x categories, log scale

    def to_dict(self, places: PlaceTable) -> dict:
        return {
            "config": self.config.to_dict(),
            "places": {
                pid: {
                    "duration_median_minutes": float(np.exp(self.duration_mu[j])),
                    "duration_sigma": float(self.duration_sigma[j]),
                    "popularity": float(self.popularity[j]),
                }
                for j, pid in enumerate(places.ids)
            },
            "attributes": {
                a: {
                    "labels": {pid: int(v) for pid, v in zip(places.ids, self.labels[a].tolist()) if v >= 0},
                    "effects": {k: [float(x) for x in v] for k, v in self.effects[a].items()},
                }
                for a in self.labels
            },
        }

    def save(self, path, places: PlaceTable) -> None:
        Path(path).write_text(json.dumps(self.to_dict(places), sort_keys=True) + "\n", encoding="utf-8")


@dataclass
class World:
    places: PlaceTable
    labels: list[LabelTable]
    truth: WorldTruth


def generate_world(config: WorldConfig) -> tuple[PlaceTable, list[LabelTable], WorldTruth]:
    """Places, labels and planted parameters, fully determined by ``rng_seed``."""
    rng = rng_for(config.rng_seed, "synthworld", "world")
    names = config.category_names
    cat_id = {n: i for i, n in enumerate(names)}
    spec_of = {c.name: c for c in config.taxonomy}
    n = config.n_places
    probs = np.array([config.category_mix.get(c, 0.0) for c in names])
    cats = rng.choice(len(names), size=n, p=probs / probs.sum())
    cats[0] = cat_id[HOME]  # at least one home
    xy = rng.uniform(0.0, config.extent_km, size=(n, 2))
    places = PlaceTable([f"pl{j:05d}" for j in range(n)], cats, xy[:, 0], xy[:, 1], names)

    base_median = np.array([spec_of[c].median_minutes if c in spec_of else 60.0 for c in names])
    base_sigma = np.array([spec_of[c].sigma if c in spec_of else 0.3 for c in names])
    duration_mu = np.log(base_median[cats]) + rng.normal(0.0, config.duration_jitter, n)
    duration_sigma = base_sigma[cats].astype(float)
    popularity = rng.lognormal(0.0, 0.5, n)
    hour_noise = rng.normal(0.0, config.place_noise, (n, 24))
    weekend_noise = rng.normal(0.0, config.place_noise, n)
    prev_noise = rng.normal(0.0, config.place_noise, (n, len(names)))

    labels: dict[str, np.ndarray] = {}
    effects: dict[str, dict[str, np.ndarray]] = {}
    for spec in config.attribute_specs:
        applicable = np.isin(cats, [cat_id[c] for c in spec.categories if c in cat_id])
        draw = rng.random(n) < spec.base_rate
        lab = np.where(applicable, draw.astype(np.int8), -1).astype(np.int8)
        labels[spec.name] = lab
        pos = lab == 1
        s = spec.strength
        eff: dict[str, np.ndarray] = {}
        for ch in spec.signal_channels:
            if ch == "duration_shift":
                m = 1.0 + s * (spec.param(ch, "multiplier") - 1.0)
                eff["duration_multiplier"] = np.where(pos, m, 1.0)
                duration_mu = duration_mu + np.log(eff["duration_multiplier"])
            elif ch in ("arrival_shift", "weekend_shift"):
                key = "arrival_boost" if ch == "arrival_shift" else "weekend_boost"
                eff[key] = np.where(pos, 1.0 + s * (spec.param(ch, "boost") - 1.0), 1.0)
            elif ch == "prev_category_affinity":
                eff["prev_boost"] = np.where(pos, 1.0 + s * (spec.param(ch, "boost") - 1.0), 1.0)
                eff["prev_clientele"] = np.where(pos, s * spec.param(ch, "clientele"), 0.0)
            else:
                eff["next_probability"] = np.where(pos, s * spec.param(ch, "probability"), 0.0)
                eff["next_clientele"] = np.where(pos, s * spec.param(ch, "clientele"), 0.0)
        effects[spec.name] = eff

    # people
    homes = np.flatnonzero(cats == cat_id[HOME])
    works = np.flatnonzero(cats == cat_id[WORK])
    home = homes[rng.integers(0, len(homes), config.n_people)]
    work = np.full(config.n_people, -1, dtype=np.int64)
    employed = rng.random(config.n_people) < config.employment_rate
    if len(works):
        k = min(10, len(works))
        _, near = cKDTree(xy[works]).query(xy[home], k=k)
        near = np.asarray(near).reshape(config.n_people, k)
        pick = near[np.arange(config.n_people), rng.integers(0, k, config.n_people)]
        work = np.where(employed, works[pick], -1)
    taste = rng.lognormal(0.0, config.taste_sigma, (config.n_people, len(names)))

    truth = WorldTruth(config, duration_mu, duration_sigma, popularity, labels, effects, home, work, taste,
                       hour_noise, weekend_noise, prev_noise)
    tables = [
        LabelTable(spec.name, {places.ids[j]: bool(labels[spec.name][j]) for j in np.flatnonzero(labels[spec.name] >= 0)})
        for spec in config.attribute_specs
    ]
    return places, tables, truth


# --- simulation --------------------------------------------------------------------


class _Sim:
    """Static lookup tables shared read-only by all person simulations."""

    def __init__(self, places: PlaceTable, truth: WorldTruth):
        cfg = truth.config
        self.cfg = cfg
        self.places = places
        names = places.category_names
        self.names = names
        C = len(names)
        self.C = C
        self.home_c = names.index(HOME)
        self.work_c = names.index(WORK)
        cats = places.category
        self.cats = cats.tolist()
        spec_of = {c.name: c for c in cfg.taxonomy}
        self.venue = [i for i, c in enumerate(names) if c in spec_of and np.any(cats == i)]

        # category transition weights [prev][weekend][hour] -> list over venue categories
        appeal = {i: spec_of[names[i]].appeal for i in self.venue}
        prof = {i: spec_of[names[i]].hours for i in self.venue}
        wkf = {i: spec_of[names[i]].weekend_factor for i in self.venue}
        pair = np.ones((C, C))
        for (a, b), v in cfg.pair_boosts.items():
            if a in names and b in names:
                pair[names.index(a), names.index(b)] = v
        np.fill_diagonal(pair, 0.2)
        self.cat_weights = [
            [[[appeal[c] * pair[p, c] * prof[c][h] * (wkf[c] if wk else 1.0) for c in self.venue] for h in range(24)]
             for wk in (0, 1)]
            for p in range(C)
        ]

        # place choice weight per context (weekend, hour, prev category)
        n = len(places)
        logw = np.log(truth.popularity)[:, None, None, None] + np.zeros((n, 2, 24, C))
        logw += truth.hour_noise[:, None, :, None]
        logw[:, 1] += truth.weekend_noise[:, None, None]
        logw += truth.prev_noise[:, None, None, :]
        clientele = np.zeros((n, C))
        self.forced: list[list[tuple[int, float]]] = [[] for _ in range(n)]
        for spec in cfg.attribute_specs:
            eff = truth.effects[spec.name]
            if "arrival_boost" in eff:
                lo, hi = spec.param("arrival_shift", "hours")
                band = np.zeros(24, dtype=bool)
                band[[h % 24 for h in range(int(lo), int(hi))]] = True
                logw[:, :, band, :] += np.log(eff["arrival_boost"])[:, None, None, None]
            if "weekend_boost" in eff:
                logw[:, 1] += np.log(eff["weekend_boost"])[:, None, None]
            if "prev_boost" in eff:
                x = names.index(spec.param("prev_category_affinity", "category"))
                logw[:, :, :, x] += np.log(eff["prev_boost"])[:, None, None]
                clientele[:, x] += eff["prev_clientele"]
            if "next_probability" in eff:
                y = names.index(spec.param("next_category_affinity", "category"))
                clientele[:, y] += eff["next_clientele"]
                for j in np.flatnonzero(eff["next_probability"] > 0):
                    self.forced[j].append((y, float(eff["next_probability"][j])))
        self.clientele = clientele
        self.weight = np.exp(logw).reshape(n, 2 * 24 * C)
        self.weight_rows = self.weight.tolist()
        self.mu = truth.duration_mu.tolist()
        self.sigma = truth.duration_sigma.tolist()
        self.by_cat = {c: np.flatnonzero(cats == c) for c in self.venue}

        # candidate places per person and category
        xy = np.column_stack([places.x, places.y])
        home_xy = xy[truth.home]
        has_work = truth.work >= 0
        work_xy = xy[np.where(has_work, truth.work, truth.home)]
        self.candidates: dict[int, np.ndarray] = {}
        for c in self.venue:
            idx = self.by_cat[c]
            tree = cKDTree(xy[idx])
            kh = min(cfg.home_candidates, len(idx))
            _, near_h = tree.query(home_xy, k=kh)
            near_h = idx[np.asarray(near_h).reshape(len(home_xy), kh)]
            kw = min(cfg.work_candidates, len(idx))
            if kw > 0:
                _, near_w = tree.query(work_xy, k=kw)
                near_w = idx[np.asarray(near_w).reshape(len(home_xy), kw)]
                near_w = np.where(has_work[:, None], near_w, near_h[:, :1])
                self.candidates[c] = np.hstack([near_h, near_w])
            else:
                self.candidates[c] = near_h
        self.day0_dow = int(hour_of_week(cfg.start_unix)) // 24
        self.truth = truth

    def ctx(self, weekend: int, minute_of_day: int, prev: int) -> int:
        return ((weekend * 24) + (minute_of_day // 60) % 24) * self.C + prev

    def person(self, p: int, seed: int):
        cfg = self.cfg
        r = random.Random(derive_seed(seed, "synthworld", "person", p))
        truth = self.truth
        home = int(truth.home[p])
        work = int(truth.work[p])
        log_taste = np.log(truth.taste[p])
        taste_v = [float(truth.taste[p, c]) for c in self.venue]
        cand: dict[int, tuple[list[int], list[float]]] = {}
        for c in self.venue:
            ids = list(dict.fromkeys(self.candidates[c][p].tolist()))
            cl = np.exp(self.clientele[ids] @ log_taste).tolist()
            cand[c] = (ids, cl)

        out_place: list[int] = []
        out_arr: list[int] = []
        out_dur: list[int] = []

        def emit(j: int, start_min: int, end_min: int) -> None:
            if out_arr:
                start_min = max(start_min, out_arr[-1] + out_dur[-1])
            out_place.append(j)
            out_arr.append(start_min)
            out_dur.append(max(1, end_min - start_min))

        def stay(j: int) -> int:
            d = r.lognormvariate(self.mu[j], self.sigma[j])
            return max(1, min(int(round(d)), 24 * 60))

        def gap() -> int:
            return 5 + int(r.expovariate(1 / 15.0))

        def pick_place(c: int, t: int, weekend: int, prev: int) -> int:
            ctx = self.ctx(weekend, t - day_start, prev)
            if r.random() < cfg.explore_rate:
                pool = self.by_cat[c]
                cum = np.cumsum(self.weight[pool, ctx])
                return int(pool[min(int(np.searchsorted(cum, r.random() * cum[-1], side="right")), len(pool) - 1)])
            ids, cl = cand[c]
            rows = self.weight_rows
            cum = list(accumulate(rows[j][ctx] * w for j, w in zip(ids, cl)))
            return ids[min(bisect_right(cum, r.random() * cum[-1]), len(ids) - 1)]

        def pick_category(prev: int, t: int, weekend: int, restrict=None) -> int:
            base = self.cat_weights[prev][weekend][((t - day_start) // 60) % 24]
            ws = [b * tv for b, tv in zip(base, taste_v)]
            if restrict is not None:
                ws = [w if self.venue[i] in restrict else 0.0 for i, w in enumerate(ws)]
            cum = list(accumulate(ws))
            if cum[-1] <= 0:
                return -1
            return self.venue[min(bisect_right(cum, r.random() * cum[-1]), len(ws) - 1)]

        def visit(c: int, t: int, weekend: int, prev: int) -> tuple[int, int]:
            j = pick_place(c, t, weekend, prev)
            end = t + stay(j)
            emit(j, t, end)
            return j, end

        def chain(t: int, prev: int, weekend: int, day_end: int, stops: int) -> int:
            forced = -1
            while stops < cfg.max_stops:
                hour = ((t - day_start) // 60) % 24
                if forced < 0:
                    if stops > 0 and r.random() < _p_home(hour):
                        break
                    c = pick_category(prev, t, weekend)
                else:
                    c = forced
                if c < 0:
                    break
                arrive = t + gap()
                if arrive >= day_end:
                    break
                j, t = visit(c, arrive, weekend, prev)
                prev = c
                stops += 1
                forced = -1
                for y, prob in self.forced[j]:
                    if y in cand and r.random() < prob:
                        forced = y
                        break
            return t

        minutes0 = cfg.start_unix // 60
        home_since = 0  # minutes since start
        for d in range(cfg.n_days):
            day_start = d * 1440
            weekend = int((self.day0_dow + d) % 7 in (0, 6))
            if r.random() >= cfg.outing_rate:
                continue
            day_end = day_start + 1440 - 30
            if home_since > day_start + 420:
                continue  # still out from the night before
            if work >= 0 and not weekend and r.random() < cfg.work_attendance:
                depart = day_start + 450 + int(r.random() * 90)
                emit(home, home_since, depart)
                t = depart
                prev = self.home_c
                if r.random() < 0.15 and self.venue:
                    c = pick_category(prev, t, weekend, restrict={self.names.index("cafe")} if "cafe" in self.names else None)
                    if c >= 0:
                        _, t = visit(c, t + gap(), weekend, prev)
                        prev = c
                arrive = t + gap()
                if r.random() < cfg.lunch_out_rate:
                    lunch = day_start + 705 + int(r.random() * 45)
                    emit(work, arrive, max(lunch, arrive + 30))
                    t = max(lunch, arrive + 30)
                    food = {self.names.index(x) for x in ("restaurant", "cafe") if x in self.names}
                    c = pick_category(self.work_c, t, weekend, restrict=food)
                    if c >= 0:
                        _, t = visit(c, t + gap(), weekend, self.work_c)
                        back = t + gap()
                        leave = day_start + 1020 + int(r.random() * 90)
                        emit(work, back, max(leave, back + 30))
                        t = max(leave, back + 30)
                    prev = self.work_c
                else:
                    leave = day_start + 1020 + int(r.random() * 90)
                    emit(work, arrive, max(leave, arrive + 60))
                    t = max(leave, arrive + 60)
                    prev = self.work_c
                t = chain(t, prev, weekend, day_end, 1)
            else:
                depart = day_start + 510 + int(r.random() * 240)
                emit(home, home_since, depart)
                t = chain(depart, self.home_c, weekend, day_end, 0)
            home_since = t + gap()
        end = cfg.n_days * 1440
        emit(home, home_since, max(end, home_since + 60))

        arr = (np.array(out_arr, dtype=np.int64) + minutes0) * 60
        return np.array(out_place, dtype=np.int64), arr, np.array(out_dur, dtype=np.int64)


def _p_home(hour: int) -> float:
    if hour >= 22 or hour < 4:
        return 0.85
    if hour >= 20:
        return 0.5
    if hour >= 17:
        return 0.35
    if hour >= 11:
        return 0.2
    return 0.1


def simulate_visits(places: PlaceTable, truth: WorldTruth, workers: int = 1) -> VisitLog:
    """Run every person's trajectory; identical output for any worker count."""
    sim = _Sim(places, truth)
    cfg = truth.config
    seed = cfg.rng_seed
    people = range(cfg.n_people)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda p: sim.person(p, seed), people))
    else:
        parts = [sim.person(p, seed) for p in people]
    width = max(5, len(str(cfg.n_people - 1)))
    person_ids = [f"u{p:0{width}d}" for p in people]
    person = np.concatenate([np.full(len(q), i, dtype=np.int64) for i, (q, _, _) in enumerate(parts)])
    place = np.concatenate([q for q, _, _ in parts])
    arrival = np.concatenate([a for _, a, _ in parts])
    duration = np.concatenate([d for _, _, d in parts])
    return VisitLog(person, place, arrival.astype(np.float64), duration.astype(np.float64), person_ids, places)


def simulate(config: WorldConfig, workers: int = 1) -> tuple[World, VisitLog]:
    places, labels, truth = generate_world(config)
    return World(places, labels, truth), simulate_visits(places, truth, workers)


# --- planted-signal report -------------------------------------------------------------


def _cohens_d(a: np.ndarray, b: np.ndarray) -> float:
    if len(a) < 2 or len(b) < 2:
        return float("nan")
    pooled = math.sqrt(((len(a) - 1) * a.var(ddof=1) + (len(b) - 1) * b.var(ddof=1)) / (len(a) + len(b) - 2))
    diff = float(a.mean() - b.mean())
    if pooled > 0:
        return diff / pooled
    return math.copysign(math.inf, diff) if diff else 0.0


def signal_report(log: VisitLog, truth: WorldTruth, min_visits: int = 10) -> list[dict]:
    """Per attribute and channel: the planted statistic's per-place mean by class and effect size."""
    from .features import transition_first_window

    places = log.places
    n = len(places)
    counts = np.bincount(log.place, minlength=n)
    how = hour_of_week(log.arrival)
    rows = []
    trans_cache: dict[tuple[str, str], np.ndarray] = {}
    for spec in truth.config.attribute_specs:
        lab = truth.labels[spec.name]
        ok = counts >= min_visits
        pos, neg = (lab == 1) & ok, (lab == 0) & ok
        for ch in spec.signal_channels or ("duration_shift",):
            if ch == "duration_shift":
                stat = np.bincount(log.place, weights=np.log(log.duration), minlength=n) / np.maximum(counts, 1)
                what = "mean log duration"
            elif ch == "arrival_shift":
                lo, hi = spec.param(ch, "hours")
                inband = np.isin(how % 24, [h % 24 for h in range(int(lo), int(hi))])
                stat = np.bincount(log.place, weights=inband.astype(float), minlength=n) / np.maximum(counts, 1)
                what = f"fraction arriving {lo}-{hi}h"
            elif ch == "weekend_shift":
                wk = np.isin(how // 24, [0, 6])
                stat = np.bincount(log.place, weights=wk.astype(float), minlength=n) / np.maximum(counts, 1)
                what = "fraction on weekends"
            else:
                direction = "prev" if ch.startswith("prev") else "next"
                cat = spec.param(ch, "category")
                w = 4.0 if direction == "prev" else 1.0
                key = (direction, str(w))
                if key not in trans_cache:
                    trans_cache[key] = transition_first_window(log, direction, [w])
                hit = trans_cache[key][:, places.category_id(cat)] == 0
                stat = np.bincount(log.place, weights=hit.astype(float), minlength=n) / np.maximum(counts, 1)
                what = f"fraction with {cat} {direction} within {w:g}h"
            rows.append({
                "attribute": spec.name, "channel": ch, "strength": spec.strength, "statistic": what,
                "positive_mean": float(stat[pos].mean()) if pos.any() else float("nan"),
                "negative_mean": float(stat[neg].mean()) if neg.any() else float("nan"),
                "effect_size": _cohens_d(stat[pos], stat[neg]),
                "n_pos": int(pos.sum()), "n_neg": int(neg.sum()),
            })
    return rows
