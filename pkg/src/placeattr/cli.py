"""Command-line pipeline: simulate, featurize, embed, train, evaluate, ablate, report.

Every subcommand reads one JSON config (``--config``), applies flag
overrides, writes its outputs under ``--out`` and records them in
``manifest.json`` together with the resolved config, its hash, the seed and
the tool version. Worker count never changes any output byte.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from . import __version__
from .domain import (
    LabelTable,
    PlaceAttrError,
    ValidationError,
    load_labels,
    load_places,
    load_visit_log,
    write_labels,
    write_places,
    write_visit_log,
)
from .embedder import build_covisit_matrix, place_embedding_features, wals_factorize
from .evaluator import (
    PipelineConfig,
    ablate,
    combine_sources,
    cross_validate,
    export_distributions,
    format_ablation_table,
    format_eval_table,
    write_ablation_reports,
    write_eval_reports,
)
from .features import FeatureMatrix, FeaturizerConfig, featurize
from .learner import LinearModel, TrainConfig, select_features, top_features, train
from .synthworld import WorldConfig, default_attributes, generate_world, signal_report, simulate_visits

_logger = logging.getLogger("placeattr")

SOURCES = ("steps", "embedding", "combined")
COMMANDS = ("simulate", "featurize", "embed", "train", "evaluate", "ablate", "report")
SECTIONS = ("seed", "utc_offset_hours", "paths", "world", "featurizer", "embedder", "learner", "evaluator")


class MissingArtifactError(PlaceAttrError, FileNotFoundError):
    """An upstream output needed by this command does not exist."""


@dataclass(frozen=True)
class EmbedderSettings:
    rank: int = 64
    lam: float = 0.1
    max_sweeps: int = 20
    tol: float = 1e-4
    cap: int = 10
    radius_km: float = 2.0
    unobserved_weight: float = 0.01

    def __post_init__(self):
        if self.rank < 1:
            raise ValidationError("embedder.rank must be >= 1")
        if self.lam < 0:
            raise ValidationError("embedder.lam must be >= 0")
        if self.max_sweeps < 1:
            raise ValidationError("embedder.max_sweeps must be >= 1")
        if not self.tol > 0:
            raise ValidationError("embedder.tol must be > 0")
        if self.cap < 1:
            raise ValidationError("embedder.cap must be >= 1")
        if not self.radius_km > 0:
            raise ValidationError("embedder.radius_km must be > 0")
        if self.unobserved_weight < 0:
            raise ValidationError("embedder.unobserved_weight must be >= 0")


@dataclass(frozen=True)
class EvaluatorSettings:
    k: int = 10
    merge_transitions: bool = True
    top_n: int = 10
    distributions: tuple[str, ...] = ("duration", "day_of_week", "hour_of_day", "tprev:4h", "tnext:1h")

    def __post_init__(self):
        if self.k < 2:
            raise ValidationError("evaluator.k must be >= 2")
        if self.top_n < 1:
            raise ValidationError("evaluator.top_n must be >= 1")
        object.__setattr__(self, "distributions", tuple(self.distributions))


@dataclass
class RunConfig:
    seed: int
    utc_offset_hours: float
    paths: dict[str, str | None]
    world: WorldConfig
    featurizer: FeaturizerConfig
    embedder: EmbedderSettings
    pipeline: PipelineConfig
    evaluator: EvaluatorSettings
    raw: dict = field(default_factory=dict)
    base_dir: Path = Path(".")

    @property
    def digest(self) -> str:
        return hashlib.sha256(_canonical(self.raw).encode("utf-8")).hexdigest()


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _section(cls, name: str, values: dict, **extra):
    if not isinstance(values, dict):
        raise ValidationError(f"config section {name!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ValidationError(f"unknown field {name}.{unknown[0]}")
    try:
        return cls(**{**values, **extra})
    except TypeError as exc:
        raise ValidationError(f"config section {name!r}: {exc}") from None


def parse_run_config(data: dict, base_dir=".", seed: int | None = None) -> RunConfig:
    """Validate a config mapping; ``seed`` (from the flag) wins over the file."""
    if not isinstance(data, dict):
        raise ValidationError("config must be a JSON object")
    unknown = sorted(set(data) - set(SECTIONS))
    if unknown:
        raise ValidationError(f"unknown config section {unknown[0]!r}")
    data = json.loads(json.dumps(data))
    if seed is not None:
        data["seed"] = seed
    if "seed" not in data:
        raise ValidationError("seed: missing (set it in the config or pass --seed)")
    if isinstance(data["seed"], bool) or not isinstance(data["seed"], int) or data["seed"] < 0:
        raise ValidationError("seed: must be a non-negative integer")
    offset = float(data.get("utc_offset_hours", 0.0))
    if not -14.0 <= offset <= 14.0:
        raise ValidationError("utc_offset_hours: must be within [-14, 14]")

    paths = dict(data.get("paths", {}))
    for key in paths:
        if key not in ("places", "visits", "labels"):
            raise ValidationError(f"unknown field paths.{key}")

    world_raw = dict(data.get("world", {}))
    world_raw["rng_seed"] = data["seed"]
    if "attribute_specs" not in world_raw:
        world_raw["attribute_specs"] = [asdict(a) for a in default_attributes()]
    try:
        world = WorldConfig.from_dict(world_raw)
    except TypeError as exc:
        raise ValidationError(f"world: {exc}") from None
    featurizer = _section(FeaturizerConfig, "featurizer", data.get("featurizer", {}), utc_offset_hours=offset)
    embedder = _section(EmbedderSettings, "embedder", data.get("embedder", {}))

    learner = dict(data.get("learner", {}))
    pipe_keys = {"loss": "loss_kind", "k_features": "k_features", "n_bins": "n_bins"}
    pipe_args = {pipe_keys[k]: learner.pop(k) for k in list(learner) if k in pipe_keys}
    if pipe_args.get("loss_kind", "hinge") not in ("hinge", "logistic"):
        raise ValidationError("learner.loss: must be 'hinge' or 'logistic'")
    if int(pipe_args.get("k_features", 1)) < 1 or int(pipe_args.get("n_bins", 2)) < 2:
        raise ValidationError("learner.k_features must be >= 1 and learner.n_bins >= 2")
    tc = _section(TrainConfig, "learner", learner)
    pipeline = PipelineConfig(train=tc, **pipe_args)
    evaluator = _section(EvaluatorSettings, "evaluator", data.get("evaluator", {}))

    raw = {
        "seed": data["seed"],
        "utc_offset_hours": offset,
        "paths": paths,
        "world": world.to_dict(),
        "featurizer": asdict(featurizer),
        "embedder": asdict(embedder),
        "learner": {"loss": pipeline.loss_kind, "k_features": pipeline.k_features, "n_bins": pipeline.n_bins, **asdict(tc)},
        "evaluator": asdict(evaluator),
    }
    return RunConfig(data["seed"], offset, paths, world, featurizer, embedder, pipeline, evaluator, raw, Path(base_dir))


def load_run_config(path: str | None, seed: int | None = None) -> RunConfig:
    if path is None:
        return parse_run_config({}, ".", seed if seed is not None else 0)
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {p}: invalid JSON at line {exc.lineno}") from None
    return parse_run_config(data, p.parent, seed)


# --- run directory ---------------------------------------------------------------------


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class RunDir:
    def __init__(self, out: Path, cfg: RunConfig):
        self.out = Path(out)
        self.cfg = cfg

    def input(self, key: str) -> Path:
        """Configured input path, else the file ``simulate`` writes."""
        given = self.cfg.paths.get(key)
        p = (self.cfg.base_dir / given) if given else self.out / f"{key}.csv"
        if not p.is_file():
            raise MissingArtifactError(f"missing upstream artifact {key}: {p} (run `placeattr simulate` or set paths.{key})")
        return p

    def artifact(self, name: str, producer: str) -> Path:
        p = self.out / name
        if not p.exists():
            raise MissingArtifactError(f"missing upstream artifact {p} (run `placeattr {producer}` first)")
        return p

    def record(self, command: str, outputs: list[Path], inputs: list[Path] = ()) -> Path:
        mpath = self.out / "manifest.json"
        manifest = json.loads(mpath.read_text(encoding="utf-8")) if mpath.exists() else {}
        manifest["tool"] = "placeattr"
        manifest["version"] = __version__
        runs = manifest.setdefault("commands", {})
        runs[command] = {
            "config": self.cfg.raw,
            "config_sha256": self.cfg.digest,
            "seed": self.cfg.seed,
            "inputs": {_rel(p, self.out): _sha256(p) for p in inputs},
            "outputs": {_rel(p, self.out): _sha256(p) for p in sorted(outputs)},
        }
        mpath.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
        return mpath


def _rel(p: Path, base: Path) -> str:
    try:
        return Path(p).resolve().relative_to(base.resolve()).as_posix()
    except ValueError:
        return str(p)


def _load_world(run: RunDir):
    places_path = run.input("places")
    places = load_places(places_path)
    visits_path = run.input("visits")
    log = load_visit_log(visits_path, places)
    return places, log, [places_path, visits_path]


def _load_labels(run: RunDir, places) -> tuple[list[LabelTable], Path]:
    p = run.input("labels")
    return load_labels(p, places), p


def _feature_path(source: str) -> str:
    return f"features_{source}.csv"


def _load_source(run: RunDir, source: str) -> tuple[FeatureMatrix, list[Path]]:
    if source == "combined":
        a, pa = _load_source(run, "steps")
        b, pb = _load_source(run, "embedding")
        m, summary = combine_sources(a, b)
        _logger.info("combined %d places (%d steps-only, %d embedding-only dropped)", summary.n_common, summary.n_only_a, summary.n_only_b)
        return m, pa + pb
    producer = "featurize" if source == "steps" else "embed"
    p = run.artifact(_feature_path(source), producer)
    return FeatureMatrix.load(p), [p]


def _trainable(labels: list[LabelTable], matrix: FeatureMatrix, k: int) -> list[LabelTable]:
    rows = set(matrix.row_ids)
    keep = []
    for lab in labels:
        sub = lab.restrict(rows)
        if sub.n_pos < k or sub.n_neg < k:
            _logger.warning("skipping %r: %d positive / %d negative labeled places with features, need %d of each",
                            lab.attribute_name, sub.n_pos, sub.n_neg, k)
            continue
        keep.append(lab)
    return keep


def _nan_to_none(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _nan_to_none(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_nan_to_none(v) for v in obj]
    return obj


# --- subcommands ---------------------------------------------------------------------


def cmd_simulate(cfg: RunConfig, out: Path, workers: int = 1, **_) -> list[Path]:
    run = RunDir(out, cfg)
    places, labels, truth = generate_world(cfg.world)
    log = simulate_visits(places, truth, workers)
    outs = [out / "places.csv", out / "visits.csv", out / "labels.csv", out / "world_truth.json"]
    write_places(places, outs[0])
    write_visit_log(log, outs[1])
    write_labels(labels, outs[2])
    doc = truth.to_dict(places)
    doc["signal_report"] = signal_report(log, truth)
    outs[3].write_text(json.dumps(_nan_to_none(doc), sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")
    run.record("simulate", outs)
    print(f"simulated {len(places)} places, {log.n_people} people, {len(log)} visits -> {out}")
    return outs


def cmd_featurize(cfg: RunConfig, out: Path, workers: int = 1, **_) -> list[Path]:
    run = RunDir(out, cfg)
    places, log, inputs = _load_world(run)
    m = featurize(log, places, cfg.featurizer)
    path = out / _feature_path("steps")
    m.save(path)
    outs = [path, path.with_name(path.stem + ".columns.csv")]
    run.record("featurize", outs, inputs)
    print(f"featurized {m.shape[0]} eligible places x {m.shape[1]} features -> {path}")
    return outs


def cmd_embed(cfg: RunConfig, out: Path, workers: int = 1, **_) -> list[Path]:
    run = RunDir(out, cfg)
    places, log, inputs = _load_world(run)
    e = cfg.embedder
    m = build_covisit_matrix(log, places, e.cap, e.radius_km, e.unobserved_weight)
    f = wals_factorize(m, e.rank, e.lam, e.max_sweeps, e.tol, seed=cfg.seed, workers=workers)
    outs = f.save(out)
    # only places someone visited get an embedding row
    visited = sorted(set(log.place.tolist()))
    feats = place_embedding_features(f).select_rows([places.ids[j] for j in visited])
    path = out / _feature_path("embedding")
    feats.save(path)
    losses = out / "embedding_losses.json"
    losses.write_text(json.dumps({
        "initial": f.initial_loss, "sweeps": f.sweep_losses, "reported": f.reported_losses, "lam": f.lam, "rank": f.rank,
    }, indent=1) + "\n", encoding="utf-8")
    outs += [path, path.with_name(path.stem + ".columns.csv"), losses]
    run.record("embed", outs, inputs)
    print(f"embedded {len(visited)} places at rank {f.rank}; objective {f.initial_loss:.6g} -> {f.final_loss:.6g} "
          f"in {len(f.sweep_losses)} sweeps")
    return outs


def cmd_train(cfg: RunConfig, out: Path, source: str = "steps", **_) -> list[Path]:
    run = RunDir(out, cfg)
    matrix, inputs = _load_source(run, source)
    places = load_places(run.input("places"))
    labels, lpath = _load_labels(run, places)
    mdir = out / "models" / source
    mdir.mkdir(parents=True, exist_ok=True)
    outs = []
    pc = cfg.pipeline
    for lab in _trainable(labels, matrix, 1):
        sel = select_features(matrix, lab, pc.k_features, pc.n_bins)
        model = train(matrix, lab, sel, pc.loss_kind, pc.train, seed=cfg.seed)
        mp = mdir / f"{lab.attribute_name}.json"
        model.save(mp)
        sp_ = mdir / f"{lab.attribute_name}.selection.csv"
        kept = set(sel.selected)
        with sp_.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["feature", "mutual_information", "kept"])
            for name, mi in sel.ranked:
                w.writerow([name, repr(mi), int(name in kept)])
            for name in sel.bypassed:
                w.writerow([name, "", 1])
        outs += [mp, sp_]
        print(f"trained {lab.attribute_name} on {model.config['n_train']} places with {len(model.feature_names)} features")
    run.record(f"train:{source}", outs, inputs + [lpath])
    return outs


def cmd_evaluate(cfg: RunConfig, out: Path, source: str = "steps", workers: int = 1, **_) -> list[Path]:
    run = RunDir(out, cfg)
    matrix, inputs = _load_source(run, source)
    places = load_places(run.input("places"))
    labels, lpath = _load_labels(run, places)
    k = cfg.evaluator.k
    reports = [cross_validate(matrix, lab, k, cfg.pipeline, cfg.seed, source, workers)
               for lab in _trainable(labels, matrix, k)]
    csv_path = out / f"eval_{source}.csv"
    txt_path = out / f"eval_{source}.txt"
    write_eval_reports(reports, csv_path)
    table = format_eval_table(reports)
    txt_path.write_text(table, encoding="utf-8")
    sys.stdout.write(table)
    run.record(f"evaluate:{source}", [csv_path, txt_path], inputs + [lpath])
    return [csv_path, txt_path]


def cmd_ablate(cfg: RunConfig, out: Path, source: str = "steps", workers: int = 1, **_) -> list[Path]:
    run = RunDir(out, cfg)
    matrix, inputs = _load_source(run, source)
    places = load_places(run.input("places"))
    labels, lpath = _load_labels(run, places)
    k = cfg.evaluator.k
    reports = [
        ablate(matrix, lab, k=k, seed=cfg.seed, config=cfg.pipeline,
               merge_transitions=cfg.evaluator.merge_transitions, workers=workers)
        for lab in _trainable(labels, matrix, k)
    ]
    csv_path = out / f"ablation_{source}.csv"
    txt_path = out / f"ablation_{source}.txt"
    write_ablation_reports(reports, csv_path)
    table = format_ablation_table(reports)
    txt_path.write_text(table, encoding="utf-8")
    sys.stdout.write(table)
    run.record(f"ablate:{source}", [csv_path, txt_path], inputs + [lpath])
    return [csv_path, txt_path]


def cmd_report(cfg: RunConfig, out: Path, source: str = "steps", **_) -> list[Path]:
    """Signed top features of each trained model plus per-class distributions."""
    run = RunDir(out, cfg)
    places, log, inputs = _load_world(run)
    labels, lpath = _load_labels(run, places)
    mdir = run.artifact(f"models/{source}", f"train --source {source}")
    rdir = out / "reports"
    rdir.mkdir(exist_ok=True)
    outs = []
    top_path = rdir / f"top_features_{source}.csv"
    model_paths = []
    with top_path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["attribute", "sign", "rank", "feature", "weight"])
        for lab in labels:
            mp = mdir / f"{lab.attribute_name}.json"
            if not mp.exists():
                continue
            model_paths.append(mp)
            model = LinearModel.load(mp)
            weights = model.weight_map
            pos, neg = top_features(model, cfg.evaluator.top_n)
            for sign, names in (("+", pos), ("-", neg)):
                for i, name in enumerate(names, start=1):
                    w.writerow([lab.attribute_name, sign, i, name, repr(weights[name])])
    outs.append(top_path)
    for lab in labels:
        if lab.n_pos == 0 or lab.n_neg == 0:
            continue
        for feat in cfg.evaluator.distributions:
            outs.append(export_distributions(log, places, lab, feat, rdir, cfg.featurizer))
    run.record(f"report:{source}", outs, inputs + [lpath] + model_paths)
    print(f"wrote {len(outs)} report files -> {rdir}")
    return outs


HANDLERS = {
    "simulate": cmd_simulate,
    "featurize": cmd_featurize,
    "embed": cmd_embed,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "report": cmd_report,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run config")
    common.add_argument("--seed", type=int, metavar="N", help="global seed (overrides the config)")
    common.add_argument("--workers", type=int, default=1, metavar="N", help="worker threads; outputs do not depend on it")
    common.add_argument("--out", metavar="DIR", default="run", help="run directory (default: ./run)")
    common.add_argument("--source", choices=SOURCES, default="steps", help="feature source for train/evaluate/ablate/report")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = _Parser(prog="placeattr", description="Predict place attributes from visit logs.")
    parser.add_argument("--version", action="version", version=f"placeattr {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=(HANDLERS[name].__doc__ or name).split("\n")[0])
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        if args.workers < 1:
            raise ValidationError("--workers must be >= 1")
        cfg = load_run_config(args.config, args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        HANDLERS[args.command](cfg, out, workers=args.workers, source=args.source)
        return 0
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001 - every failure becomes one parsable line
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1 if isinstance(exc, (PlaceAttrError, ValueError, OSError)) else 2


if __name__ == "__main__":
    sys.exit(main())
