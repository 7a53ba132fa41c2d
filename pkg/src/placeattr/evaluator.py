"""AUC, stratified cross-validation, ablation, coverage and distribution exports."""
from __future__ import annotations

import csv
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.stats import rankdata

from .domain import DegenerateLabelsError, LabelTable, PlaceTable, ValidationError, VisitLog
from .features import (
    DAY_NAMES,
    EMBEDDING,
    GROUPS,
    HOURS_PER_WEEK,
    FeatureMatrix,
    FeaturizerConfig,
    hour_of_week,
    hour_of_week_label,
    occupancy_hours,
    transition_first_window,
)
from .learner import DEFAULT_BINS, DEFAULT_K, TrainConfig, predict_scores, select_features, train
from .seeding import rng_for

_logger = logging.getLogger(__name__)

TRANSITION = "transition"


def auc(scores: Mapping[str, float], labels: Mapping[str, bool]) -> float:
    """Mann-Whitney AUC; ties between a positive and a negative count one half."""
    ids = [k for k in labels if k in scores]
    y = np.array([bool(labels[k]) for k in ids])
    s = np.array([float(scores[k]) for k in ids])
    return auc_arrays(s, y)


def auc_arrays(scores, y) -> float:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(y, dtype=bool)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabelsError("AUC needs at least one positive and one negative")
    ranks = rankdata(s)  # average ranks for ties
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


# --- folds ---------------------------------------------------------------------------


def stratified_folds(ids: Sequence[str], y, k: int, seed: int, purpose: str = "") -> np.ndarray:
    """Fold index per id from a seeded per-class shuffle dealt round-robin."""
    y = np.asarray(y, dtype=bool)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if k < 2:
        raise ValidationError("k must be >= 2")
    if n_pos < k or n_neg < k:
        raise ValidationError(
            f"too few examples for stratified {k}-fold cross-validation ({n_pos} positive, {n_neg} negative)"
        )
    rng = rng_for(seed, "evaluator", "folds", purpose)
    folds = np.empty(len(y), dtype=np.int64)
    start = 0
    for cls in (True, False):
        members = np.flatnonzero(y == cls)
        members = members[rng.permutation(len(members))]
        folds[members] = (start + np.arange(len(members))) % k
        start = (start + len(members)) % k
    return folds


# --- reports ----------------------------------------------------------------------------


@dataclass
class EvalReport:
    attribute_name: str
    fold_aucs: list[float]
    mean_auc: float
    feature_source: str
    n_pos: int
    n_neg: int
    fold_models: list = field(default_factory=list, repr=False, compare=False)

    @property
    def k(self) -> int:
        return len(self.fold_aucs)


@dataclass
class AblationReport:
    attribute_name: str
    group_auc: dict[str, float]
    full_auc: float
    absent: list[str] = field(default_factory=list)

    @property
    def best_group(self) -> str:
        return max(sorted(self.group_auc), key=lambda g: self.group_auc[g])


@dataclass
class CoverageReport:
    total: int
    covered: dict[str, int]
    fractions: dict[str, float]
    gains: dict[tuple[str, str], float]

    def gain(self, source: str, baseline: str) -> float:
        """Relative coverage gain of ``source`` over ``baseline``."""
        return self.gains[source, baseline]


@dataclass(frozen=True)
class PipelineConfig:
    k_features: int = DEFAULT_K
    n_bins: int = DEFAULT_BINS
    loss_kind: str = "hinge"
    train: TrainConfig = TrainConfig()


def _fold_job(matrix, labels, ids, y, folds, fold, config, seed, source):
    train_ids = [i for i, f in zip(ids, folds) if f != fold]
    test_ids = [i for i, f in zip(ids, folds) if f == fold]
    selection = select_features(matrix, labels, config.k_features, config.n_bins, row_ids=train_ids)
    model = train(matrix, labels, selection, config.loss_kind, config.train, seed=seed, row_ids=train_ids)
    scores = predict_scores(model, matrix, test_ids)
    return auc_arrays([scores[i] for i in test_ids], y[folds == fold]), model


def cross_validate(
    matrix: FeatureMatrix,
    labels: LabelTable,
    k: int = 10,
    config: PipelineConfig = PipelineConfig(),
    seed: int = 0,
    source: str = "steps",
    workers: int = 1,
    folds: np.ndarray | None = None,
    keep_models: bool = False,
) -> EvalReport:
    """Stratified k-fold CV at place level; selection and scaling fit per fold."""
    ids = [r for r in matrix.row_ids if r in labels.entries]
    y = np.array([labels.entries[r] for r in ids], dtype=bool)
    if folds is None:
        folds = stratified_folds(ids, y, k, seed, labels.attribute_name)
    jobs = range(k)

    def run(fold):
        return _fold_job(matrix, labels, ids, y, folds, fold, config, seed, source)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(f) for f in jobs]
    aucs = [a for a, _ in results]
    return EvalReport(
        labels.attribute_name, aucs, float(np.mean(aucs)), source, int(y.sum()), int((~y).sum()),
        fold_models=[m for _, m in results] if keep_models else [],
    )


def ablation_groups(matrix: FeatureMatrix, merge_transitions: bool = True) -> dict[str, list[str]]:
    groups: dict[str, list[str]] = {}
    for g in GROUPS:
        name = TRANSITION if merge_transitions and g.startswith("transition") else g
        groups.setdefault(name, [])
    if EMBEDDING in matrix.groups:
        groups[EMBEDDING] = []
    for c, g in zip(matrix.columns, matrix.groups):
        if g == EMBEDDING:
            groups[EMBEDDING].append(c)
        elif g in GROUPS:
            name = TRANSITION if merge_transitions and g.startswith("transition") else g
            groups[name].append(c)
    return groups


def ablate(
    matrix: FeatureMatrix,
    labels: LabelTable,
    groups: Mapping[str, Sequence[str]] | None = None,
    k: int = 10,
    seed: int = 0,
    config: PipelineConfig = PipelineConfig(),
    merge_transitions: bool = True,
    workers: int = 1,
) -> AblationReport:
    """CV on each group's columns alone and on all columns, sharing one fold split."""
    if groups is None:
        groups = ablation_groups(matrix, merge_transitions)
    ids = [r for r in matrix.row_ids if r in labels.entries]
    y = np.array([labels.entries[r] for r in ids], dtype=bool)
    folds = stratified_folds(ids, y, k, seed, labels.attribute_name)
    full = cross_validate(matrix, labels, k, config, seed, "steps", workers, folds)
    group_auc, absent = {}, []
    for name in sorted(groups):
        cols = list(groups[name])
        if not cols:
            absent.append(name)
            continue
        rep = cross_validate(matrix.select_columns(cols), labels, k, config, seed, "custom", workers, folds)
        group_auc[name] = rep.mean_auc
    return AblationReport(labels.attribute_name, group_auc, full.mean_auc, absent)


def macro_average(values: Iterable[EvalReport | float]) -> float:
    vals = [v.mean_auc if isinstance(v, EvalReport) else float(v) for v in values]
    if not vals:
        raise ValueError("macro_average of an empty list")
    return float(np.mean(vals))


def coverage(places: PlaceTable | Sequence[str], covered_by_source: Mapping[str, Iterable[str]]) -> CoverageReport:
    ids = set(places.ids if isinstance(places, PlaceTable) else places)
    covered = {}
    for src, members in covered_by_source.items():
        members = set(members)
        extra = members - ids
        if extra:
            raise ValidationError(f"source {src!r} covers unknown places, e.g. {sorted(extra)[0]!r}")
        covered[src] = len(members)
    total = len(ids)
    fractions = {s: c / total for s, c in covered.items()}
    gains = {}
    for b in covered:
        for a in covered:
            if a != b and covered[a] > 0:
                gains[b, a] = (covered[b] - covered[a]) / covered[a]
    return CoverageReport(total, covered, fractions, gains)


@dataclass
class CombineSummary:
    n_common: int
    n_only_a: int
    n_only_b: int


def combine_sources(a: FeatureMatrix, b: FeatureMatrix) -> tuple[FeatureMatrix, CombineSummary]:
    """Concatenate columns over the places both sources cover."""
    overlap = set(a.columns) & set(b.columns)
    if overlap:
        raise ValidationError(f"feature names overlap between sources, e.g. {sorted(overlap)[0]!r}")
    b_rows = set(b.row_ids)
    common = [r for r in a.row_ids if r in b_rows]
    summary = CombineSummary(len(common), len(a.row_ids) - len(common), len(b.row_ids) - len(common))
    if not common:
        warnings.warn("sources share no places; combined matrix is empty", stacklevel=2)
        values = sp.csr_matrix((0, len(a.columns) + len(b.columns)))
    else:
        values = sp.hstack([a.select_rows(common).values, b.select_rows(common).values]).tocsr()
    return FeatureMatrix(common, a.columns + b.columns, a.groups + b.groups, values), summary


# --- distribution exports ---------------------------------------------------------------


def _class_masks(log: VisitLog, labels: LabelTable):
    lab = np.zeros(len(log.places), dtype=np.int8)  # 0 unlabeled, 1 positive, 2 negative
    for pid, v in labels.entries.items():
        j = log.places.index.get(pid)
        if j is not None:
            lab[j] = 1 if v else 2
    per_visit = lab[log.place]
    pos, neg = per_visit == 1, per_visit == 2
    for name, m in (("positive", pos), ("negative", neg)):
        if not m.any():
            raise DegenerateLabelsError(f"{name} class of {labels.attribute_name!r} has no visits")
    return pos, neg


def _normalized_hist(values, mask, n_bins):
    counts = np.bincount(values[mask], minlength=n_bins)
    return counts / counts.sum()


def distribution_table(
    log: VisitLog,
    labels: LabelTable,
    feature: str,
    config: FeaturizerConfig = FeaturizerConfig(),
    duration_step: float = 10.0,
    duration_max: float = 240.0,
) -> list[tuple[str, float, float]]:
    """Per-class visit distributions behind the qualitative plots.

    ``feature`` is one of ``duration``, ``day_of_week``, ``hour_of_day``,
    ``arrival`` (hour of week), ``occupancy``, ``tprev:<w>h`` or ``tnext:<w>h``.
    Transition rows give, per category, the fraction of visits with a
    same-person visit to that category inside the window.
    """
    pos, neg = _class_masks(log, labels)
    off = config.utc_offset_hours
    if feature == "duration":
        edges = np.arange(duration_step, duration_max + duration_step / 2, duration_step)
        b = np.searchsorted(edges, log.duration, side="right")
        names = [f"{a:g}-{a + duration_step:g}" for a in np.concatenate([[0.0], edges[:-1]])] + [f">={duration_max:g}"]
        return list(zip(names, _normalized_hist(b, pos, len(names)).tolist(), _normalized_hist(b, neg, len(names)).tolist()))
    if feature in ("day_of_week", "hour_of_day", "arrival"):
        how = hour_of_week(log.arrival, off)
        if feature == "day_of_week":
            v, names = how // 24, list(DAY_NAMES)
        elif feature == "hour_of_day":
            v, names = how % 24, [f"{h:02d}" for h in range(24)]
        else:
            v, names = how, [hour_of_week_label(h) for h in range(HOURS_PER_WEEK)]
        return list(zip(names, _normalized_hist(v, pos, len(names)).tolist(), _normalized_hist(v, neg, len(names)).tolist()))
    if feature == "occupancy":
        vi, bucket = occupancy_hours(log.arrival, log.duration, off)
        out = []
        for mask in (pos, neg):
            hit = mask[vi]
            out.append(np.bincount(bucket[hit], minlength=HOURS_PER_WEEK) / mask.sum())
        return [(hour_of_week_label(h), float(out[0][h]), float(out[1][h])) for h in range(HOURS_PER_WEEK)]
    if feature.startswith(("tprev:", "tnext:")):
        direction = "prev" if feature.startswith("tprev") else "next"
        w = float(feature.split(":", 1)[1].rstrip("h"))
        targets = np.flatnonzero(pos | neg)
        first = transition_first_window(log, direction, [w], targets)
        hit = first == 0
        is_pos = pos[targets]
        pf = hit[is_pos].mean(axis=0)
        nf = hit[~is_pos].mean(axis=0)
        return [(c, float(pf[i]), float(nf[i])) for i, c in enumerate(log.places.category_names)]
    raise ValidationError(f"unknown distribution feature {feature!r}")


def export_distributions(
    log: VisitLog,
    places: PlaceTable,
    labels: LabelTable,
    feature: str,
    out_dir,
    config: FeaturizerConfig = FeaturizerConfig(),
) -> Path:
    """Write ``bin,positive_fraction,negative_fraction`` for one attribute/feature."""
    if places is not log.places and places != log.places:
        raise ValidationError("visit log was validated against a different PlaceTable")
    table = distribution_table(log, labels, feature, config)
    safe = feature.replace(":", "_")
    path = Path(out_dir) / f"dist_{labels.attribute_name}_{safe}.csv"
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin", "positive_fraction", "negative_fraction"])
        for name, p, q in table:
            w.writerow([name, repr(p), repr(q)])
    return path


def total_variation(table: Sequence[tuple[str, float, float]]) -> float:
    return 0.5 * float(sum(abs(p - q) for _, p, q in table))


# --- report writers -----------------------------------------------------------------


def write_eval_reports(reports: Sequence[EvalReport], path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        k = max((r.k for r in reports), default=0)
        w.writerow(["attribute", "source", "n_pos", "n_neg", "mean_auc", *[f"fold_{i}" for i in range(k)]])
        for r in reports:
            w.writerow([r.attribute_name, r.feature_source, r.n_pos, r.n_neg, repr(r.mean_auc), *map(repr, r.fold_aucs)])
        if reports:
            w.writerow(["macro_average", reports[0].feature_source, "", "", repr(macro_average(reports))])


def format_eval_table(reports: Sequence[EvalReport]) -> str:
    lines = [f"{'attribute':<24} {'source':<10} {'pos':>6} {'neg':>6} {'AUC':>7}"]
    for r in reports:
        lines.append(f"{r.attribute_name:<24} {r.feature_source:<10} {r.n_pos:>6} {r.n_neg:>6} {r.mean_auc:>7.3f}")
    if reports:
        lines.append(f"{'macro-average':<24} {'':<10} {'':>6} {'':>6} {macro_average(reports):>7.3f}")
    return "\n".join(lines) + "\n"


def write_ablation_reports(reports: Sequence[AblationReport], path) -> None:
    groups = sorted({g for r in reports for g in r.group_auc} | {g for r in reports for g in r.absent})
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["attribute", "full", *groups])
        for r in reports:
            w.writerow([r.attribute_name, repr(r.full_auc), *[repr(r.group_auc[g]) if g in r.group_auc else "" for g in groups]])


def format_ablation_table(reports: Sequence[AblationReport]) -> str:
    groups = sorted({g for r in reports for g in r.group_auc})
    head = f"{'attribute':<24} {'full':>7} " + " ".join(f"{g[:11]:>11}" for g in groups)
    lines = [head]
    for r in reports:
        cells = " ".join(f"{r.group_auc[g]:>11.3f}" if g in r.group_auc else f"{'-':>11}" for g in groups)
        lines.append(f"{r.attribute_name:<24} {r.full_auc:>7.3f} {cells}")
    return "\n".join(lines) + "\n"
