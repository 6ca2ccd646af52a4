"""Command-line driver: curate, synthesize, augment, train, evaluate, sweep, report.

All commands read one YAML config (see ``DEFAULTS`` for the schema); the
global flags ``--seed``, ``--workers`` and ``--out`` override it. Logs go to
stderr, a JSON summary of each command to stdout.

Exit codes: 0 success, 2 configuration or input error, 3 partial synthesis
failure, 4 training failure.
"""

import argparse
import copy
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import yaml

from hieronst.augmentation import AffineParams, double_dataset
from hieronst.classifier import (
    ModelSpec, TrainConfig, TrainingDivergedError, TrainingHistory, build_model, load_checkpoint, train,
)
from hieronst.curation import (
    CurationError, DatasetManifest, GardinerParseError, LabeledImage, apply_relabels, derive_seed, image_files,
    load_code_list, load_distribution, load_relabels, make_font_dataset, parse_gardiner_code, prune_dataset,
    save_distribution, scan_image_tree, split_dataset,
)
from hieronst.evaluation import emit_report, mean_std, single_class_test, sweep, table_csv, transferability_suite
from hieronst.nst.backbone import Backbone, BackboneLoadError, LayerConfigError, make_surrogate
from hieronst.nst.engine import NSTConfig
from hieronst.provenance import config_hash, write_meta
from hieronst.synthesis import PlanMismatchError, PlanningError, SynthesisPlan, plan_batches, reset_failed, run_plan

log = logging.getLogger("hieronst")

EXIT_OK, EXIT_CONFIG, EXIT_SYNTH, EXIT_TRAIN = 0, 2, 3, 4
DATASETS = ("NST", "Unas", "Font")

DEFAULTS = {
    "seed": 0,
    "workers": 1,
    "paths": {
        "out": "runs",
        "photos": None,        # labelled photo tree (class from directory or filename suffix)
        "font": None,          # one typeface glyph image per class, named <code>.png
        "styles": None,        # style photographs
        "backbone": None,      # VGG19 checkpoint
        "relabels": None,      # "<path-or-stem> <code>" corrections
        "whitelist": None,     # code list restricting the classes kept
        "single_class": None,  # photographs of one class for the single-class test
        "extra_tests": {},     # name -> labelled photo tree scored by every model
    },
    "curation": {
        "min_class_size": 10,
        "max_class_size": 175,
        "split_ratios": [75, 15, 15],
        "replicas": {"NST": 3, "Unas": 3, "Font": 1},
    },
    "nst": {**NSTConfig().to_dict(), "fresh_init": True},
    "augment": {**{k: v for k, v in asdict(AffineParams()).items()}, "enabled": True, "splits": ["train"]},
    "model": {k: v for k, v in asdict(ModelSpec()).items() if k != "num_classes"},
    "train": asdict(TrainConfig()),
    "eval": {"include_self": True, "single_class": "G17"},
    "sweep": {"learning_rates": [0.001, 0.0005], "early_stop_deltas": [0.05, 0.1], "replicas": 3,
              "datasets": list(DATASETS)},
}

# config sections that determine each stage's outputs
STAGE_SECTIONS = {
    "curate": ("seed", "paths", "curation"),
    "synthesize": ("seed", "paths", "curation", "nst"),
}


class ConfigError(ValueError):
    pass


def _merge(base, override, where="config"):
    out = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if key not in base:
            raise ConfigError(f"unknown key {where}.{key}")
        if isinstance(base[key], dict) and base[key] and isinstance(value, dict):
            out[key] = _merge(base[key], value, f"{where}.{key}")
        else:
            out[key] = value
    return out


def load_config(path=None, seed=None, workers=None, out=None):
    raw = {}
    base_dir = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path} must hold a mapping")
        base_dir = path.resolve().parent
    cfg = _merge(DEFAULTS, raw)
    if seed is not None:
        cfg["seed"] = seed
    if workers is not None:
        cfg["workers"] = workers
    if out is not None:
        cfg["paths"]["out"] = out
    paths = cfg["paths"]
    for key, value in paths.items():
        if key == "extra_tests":
            paths[key] = {n: str((base_dir / p).resolve()) for n, p in (value or {}).items()}
        elif value is not None and not (key == "out" and out is not None):
            paths[key] = str((base_dir / value).resolve())
    # build the typed sections once so bad values fail early
    try:
        nst_config(cfg)
        affine_params(cfg)
        train_config(cfg)
        model_spec(cfg, 2)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    return cfg


def nst_config(cfg):
    return NSTConfig(**{k: v for k, v in cfg["nst"].items() if k != "fresh_init"}).validate()


def affine_params(cfg):
    a = {k: v for k, v in cfg["augment"].items() if k not in ("enabled", "splits")}
    a["zoom_range"] = tuple(a["zoom_range"])
    return AffineParams(**a)


def train_config(cfg, **overrides):
    return replace(TrainConfig(**cfg["train"]), **overrides)


def model_spec(cfg, num_classes):
    m = dict(cfg["model"])
    for key in ("input_size", "entry_widths", "block_widths"):
        m[key] = tuple(m[key])
    return ModelSpec(num_classes=num_classes, **m)


def full_hash(cfg):
    return config_hash({k: v for k, v in cfg.items() if k != "workers"})


def stage_hash(cfg, stage):
    return config_hash({k: cfg[k] for k in STAGE_SECTIONS[stage]})


class Layout:
    """Artifact locations under the output root."""

    def __init__(self, cfg):
        self.root = Path(cfg["paths"]["out"])
        self.manifests = self.root / "manifests"
        self.nst = self.root / "nst"
        self.splits = self.root / "splits"
        self.models = self.root / "models"
        self.histories = self.root / "histories"
        self.eval = self.root / "eval"
        self.sweep = self.root / "sweep"
        self.report = self.root / "report"

    def manifest(self, name):
        return self.manifests / f"{name.lower()}.jsonl"

    @property
    def reference(self):
        return self.manifests / "reference.json"

    @property
    def plan(self):
        return self.nst / "plan.jsonl"


def _require(path, what):
    if path is None:
        raise ConfigError(f"{what} not configured")
    if not Path(path).exists():
        raise ConfigError(f"{what} not found: {path}")
    return Path(path)


def _load_manifest(path, what):
    return DatasetManifest.load(_require(path, what))


def _save(manifest, path, cfg, **extra):
    manifest.save(path)
    write_meta(path, config_hash=full_hash(cfg), seed=cfg["seed"], **extra)
    return path


def _emit(summary):
    sys.stdout.write(json.dumps(summary, sort_keys=True) + "\n")
    sys.stdout.flush()


def _glyph_images(font_dir):
    glyphs = {}
    for p in sorted(Path(font_dir).iterdir()):
        if not p.is_file():
            continue
        try:
            code = parse_gardiner_code(p.stem.rsplit("_", 1)[-1])
        except GardinerParseError:
            log.warning("skipping %s: file name is not a Gardiner code", p)
            continue
        glyphs.setdefault(code, p)
    return glyphs


def cmd_curate(cfg):
    lay = Layout(cfg)
    paths, cur = cfg["paths"], cfg["curation"]
    photos = scan_image_tree(_require(paths["photos"], "photo directory"), "unas")
    if paths["relabels"]:
        photos = apply_relabels(photos, load_relabels(_require(paths["relabels"], "relabel file")))
    whitelist = load_code_list(_require(paths["whitelist"], "whitelist")) if paths["whitelist"] else None
    unas = prune_dataset(photos, cur["min_class_size"], whitelist, cur["max_class_size"],
                         seed=derive_seed(cfg["seed"], "prune"))
    if len(unas) == 0:
        raise CurationError("no class survives pruning")
    reference = unas.distribution
    font = make_font_dataset(_glyph_images(_require(paths["font"], "font directory")), reference,
                             copy_to=lay.root / "font")
    _save(unas, lay.manifest("Unas"), cfg)
    _save(font, lay.manifest("Font"), cfg)
    save_distribution(lay.reference, reference)
    write_meta(lay.reference, config_hash=full_hash(cfg), seed=cfg["seed"])
    _emit({"command": "curate", "classes": len(reference), "unas": len(unas), "font": len(font),
           "scanned": len(photos), "distribution": {str(c): n for c, n in reference.items()}})
    return EXIT_OK


def cmd_synthesize(cfg, retry_failed=False):
    lay = Layout(cfg)
    paths = cfg["paths"]
    font = _load_manifest(lay.manifest("Font"), "font manifest (run curate first)")
    reference = load_distribution(_require(lay.reference, "reference distribution"))
    backbone = Backbone.load(_require(paths["backbone"], "backbone weights"))
    nst = nst_config(cfg)
    key = stage_hash(cfg, "synthesize")
    if lay.plan.is_file():
        plan = SynthesisPlan.load(lay.plan)
        if plan.config_hash != key:
            raise PlanMismatchError(
                f"{lay.plan} was made with config {plan.config_hash}, current is {key}; "
                "delete the plan to start over")
        if retry_failed:
            reset_failed(plan)
    else:
        styles = image_files(_require(paths["styles"], "style directory"))
        plan = plan_batches(font, styles, reference, seed=cfg["seed"], out_dir=lay.nst / "images")
        plan.config_hash = key
        plan.save(lay.plan)
    summary = run_plan(plan, nst, backbone, fresh_init=cfg["nst"]["fresh_init"],
                       plan_path=lay.plan, workers=cfg["workers"])
    _save(summary.manifest, lay.manifest("NST"), cfg)
    _emit({"command": "synthesize", "completed": summary.completed, "failed": summary.failed,
           "skipped": summary.skipped, "seconds_per_image": round(summary.seconds_per_image, 3)})
    if summary.failed:
        log.error("%d synthesis jobs failed; rerun with --retry-failed", summary.failed)
        return EXIT_SYNTH
    return EXIT_OK


def _available_datasets(lay):
    return [n for n in DATASETS if lay.manifest(n).is_file()]


def _split_dir(lay, name, k):
    return lay.splits / f"{name}_{k}"


def cmd_augment(cfg):
    """Split every curated dataset into replicas and augment the chosen splits."""
    lay = Layout(cfg)
    names = _available_datasets(lay)
    if not names:
        raise ConfigError(f"no manifests under {lay.manifests} (run curate first)")
    aug = cfg["augment"]
    params = affine_params(cfg)
    counts = {}
    for name in names:
        manifest = DatasetManifest.load(lay.manifest(name))
        for k in range(int(cfg["curation"]["replicas"].get(name, 1))):
            split_seed = derive_seed(cfg["seed"], "split", name, k)
            parts = dict(zip(("train", "val", "test"),
                             split_dataset(manifest, cfg["curation"]["split_ratios"], seed=split_seed)))
            out = _split_dir(lay, name, k)
            for split, m in parts.items():
                if aug["enabled"] and split in aug["splits"] and len(m):
                    m = double_dataset(m, params, derive_seed(split_seed, "augment", split),
                                       out_dir=out / "aug" / split)
                _save(m, out / f"{split}.jsonl", cfg, split_seed=split_seed)
                counts[f"{name}#{k}/{split}"] = len(m)
    _emit({"command": "augment", "splits": counts})
    return EXIT_OK


def _split_runs(lay):
    runs = []
    for d in sorted(lay.splits.iterdir()) if lay.splits.is_dir() else []:
        name, _, k = d.name.rpartition("_")
        if name in DATASETS and (d / "train.jsonl").is_file():
            runs.append((name, int(k), d))
    return sorted(runs, key=lambda r: (DATASETS.index(r[0]), r[1]))


def _label_space(lay):
    ref = load_distribution(_require(lay.reference, "reference distribution"))
    return sorted(parse_gardiner_code(c) for c in ref)


def cmd_train(cfg):
    lay = Layout(cfg)
    runs = _split_runs(lay)
    if not runs:
        raise ConfigError(f"no splits under {lay.splits} (run augment first)")
    classes = _label_space(lay)
    spec = model_spec(cfg, len(classes))
    trained = {}
    for name, k, d in runs:
        run = f"{name}#{k}"
        seed = derive_seed(cfg["seed"], "train", name, k)
        model = build_model(spec, seed=seed, classes=classes)
        tcfg = train_config(cfg, seed=seed)
        ckpt = lay.models / f"{name}_{k}.pt"
        log.info("training %s (%d parameters)", run, model.parameter_count)
        _, history = train(model, DatasetManifest.load(d / "train.jsonl"), DatasetManifest.load(d / "val.jsonl"),
                           tcfg, checkpoint_path=ckpt,
                           metadata={"name": run, "config_hash": full_hash(cfg), "seed": seed,
                                     "split_dir": str(d)})
        history.save_csv(lay.histories / f"{name}_{k}.csv")
        write_meta(lay.histories / f"{name}_{k}.csv", config_hash=full_hash(cfg), seed=seed)
        trained[run] = len(history)
    _emit({"command": "train", "checkpoints": len(trained), "epochs": trained})
    return EXIT_OK


def _load_models(lay):
    models, own_tests = {}, {}
    for p in sorted(lay.models.glob("*.pt")) if lay.models.is_dir() else []:
        model, meta = load_checkpoint(p)
        name = meta.get("name", p.stem)
        models[name] = model
        test = Path(meta.get("split_dir", "")) / "test.jsonl"
        if test.is_file():
            own_tests[name] = DatasetManifest.load(test)
    return models, own_tests


def _eval_datasets(cfg, lay):
    datasets = {}
    for name in DATASETS:
        test = _split_dir(lay, name, 0) / "test.jsonl"
        if test.is_file():
            datasets[name] = DatasetManifest.load(test)
    for name, root in sorted(cfg["paths"]["extra_tests"].items()):
        datasets[name] = scan_image_tree(_require(root, f"test set {name}"), "photo")
    return datasets


def _single_class_set(cfg):
    root = cfg["paths"]["single_class"]
    if not root:
        return None, None
    target = parse_gardiner_code(cfg["eval"]["single_class"])
    files = image_files(_require(root, "single-class directory"))
    return DatasetManifest([LabeledImage(str(p), target, "photo") for p in files]), target


def cmd_evaluate(cfg):
    lay = Layout(cfg)
    models, own_tests = _load_models(lay)
    if not models:
        raise ConfigError(f"no checkpoints under {lay.models} (run train first)")
    table = transferability_suite(models, _eval_datasets(cfg, lay), include_self=cfg["eval"]["include_self"],
                                  own_tests=own_tests)
    lay.eval.mkdir(parents=True, exist_ok=True)
    (lay.eval / "metrics.csv").write_text(table.to_csv(), encoding="utf-8")
    write_meta(lay.eval / "metrics.csv", config_hash=full_hash(cfg), seed=cfg["seed"])
    summary = {"command": "evaluate", "cells": len(table.rows),
               "failed": sum(1 for r in table.rows if r["status"] != "ok")}
    manifest, target = _single_class_set(cfg)
    if manifest is not None and len(manifest):
        groups, pooled = {}, {}
        for name in sorted(models):
            acc, hist = single_class_test(models[name], manifest, target)
            group = name.split("#", 1)[0]
            groups.setdefault(group, []).append(acc)
            for c, n in hist.items():
                pooled.setdefault(group, {}).setdefault(c, 0)
                pooled[group][c] += n
        rows = []
        for group, accs in sorted(groups.items()):
            mean, std = mean_std(accs)
            rows.append({"train_data": group, "target": str(target), "accuracy_mean": mean,
                         "accuracy_std": std, "replicas": len(accs)})
        text = table_csv(("train_data", "target", "accuracy_mean", "accuracy_std", "replicas"), rows)
        (lay.eval / "single_class.csv").write_text(text, encoding="utf-8")
        write_meta(lay.eval / "single_class.csv", config_hash=full_hash(cfg), seed=cfg["seed"])
        hist_sorted = {g: {c: h[c] for c in sorted(h, key=parse_gardiner_code)} for g, h in sorted(pooled.items())}
        (lay.eval / "histograms.json").write_text(json.dumps(hist_sorted, indent=1) + "\n", encoding="utf-8")
        summary["single_class"] = {r["train_data"]: r["accuracy_mean"] for r in rows}
    _emit(summary)
    return EXIT_OK


def cmd_sweep(cfg):
    lay = Layout(cfg)
    sw = cfg["sweep"]
    datasets = {n: DatasetManifest.load(lay.manifest(n)) for n in sw["datasets"] if lay.manifest(n).is_file()}
    if not datasets:
        raise ConfigError(f"no dataset manifests under {lay.manifests}")
    manifest, target = _single_class_set(cfg)
    if manifest is None:
        extra = cfg["paths"]["extra_tests"]
        if not extra:
            raise ConfigError("sweep needs paths.single_class or paths.extra_tests")
        name = sorted(extra)[0]
        manifest = scan_image_tree(_require(extra[name], f"test set {name}"), "photo")
    configs = [train_config(cfg, initial_lr=lr, early_stop_min_delta=d)
               for lr in sw["learning_rates"] for d in sw["early_stop_deltas"]]
    classes = _label_space(lay)
    table = sweep(configs, datasets, manifest, replicas=int(sw["replicas"]), target_class=target,
                  seed=cfg["seed"], spec=model_spec(cfg, len(classes)),
                  ratios=cfg["curation"]["split_ratios"], classes=classes)
    lay.sweep.mkdir(parents=True, exist_ok=True)
    (lay.sweep / "sweep.csv").write_text(table.to_csv(), encoding="utf-8")
    write_meta(lay.sweep / "sweep.csv", config_hash=full_hash(cfg), seed=cfg["seed"])
    for run, hist in table.histories.items():
        hist.save_csv(lay.sweep / "histories" / f"{run.replace('#', '_').replace('@', '_')}.csv")
    _emit({"command": "sweep", "rows": len(table.rows), "failed": sum(r["failed"] for r in table.rows)})
    return EXIT_OK


def cmd_report(cfg):
    lay = Layout(cfg)
    histories = {}
    for p in sorted(lay.histories.glob("*.csv")) if lay.histories.is_dir() else []:
        name, _, k = p.stem.rpartition("_")
        histories[f"{name}#{k}"] = TrainingHistory.from_csv(p)
    tables = {}
    for p in [lay.eval / "metrics.csv", lay.eval / "single_class.csv", lay.sweep / "sweep.csv"]:
        if p.is_file():
            tables[p.stem] = p.read_text(encoding="utf-8")
    hist_file = lay.eval / "histograms.json"
    histograms = json.loads(hist_file.read_text(encoding="utf-8")) if hist_file.is_file() else {}
    written = emit_report(histories, tables, lay.report, histograms)
    _emit({"command": "report", "files": len(written), "out": str(lay.report)})
    return EXIT_OK


def cmd_make_backbone(cfg, seed=None):
    path = cfg["paths"]["backbone"]
    if path is None:
        raise ConfigError("paths.backbone not configured")
    make_surrogate(path, seed=cfg["seed"] if seed is None else seed)
    _emit({"command": "make-backbone", "path": path})
    return EXIT_OK


def cmd_pipeline(cfg):
    for step in (cmd_curate, cmd_synthesize, cmd_augment, cmd_train, cmd_evaluate, cmd_report):
        code = step(cfg)
        if code != EXIT_OK:
            return code
    return EXIT_OK


COMMANDS = {
    "curate": cmd_curate,
    "synthesize": cmd_synthesize,
    "augment": cmd_augment,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "report": cmd_report,
    "make-backbone": cmd_make_backbone,
    "pipeline": cmd_pipeline,
}


def build_parser():
    p = argparse.ArgumentParser(prog="hieronst", description=__doc__.split("\n", 1)[0])
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--seed", type=int, help="global seed (overrides config)")
    p.add_argument("--workers", type=int, help="synthesis worker threads (overrides config)")
    p.add_argument("--out", help="output root (overrides paths.out)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        if name == "synthesize":
            sp.add_argument("--retry-failed", action="store_true", help="rerun jobs marked failed")
    toy = sub.add_parser("toy-data", help="write a small procedural corpus for trying the pipeline")
    toy.add_argument("dest")
    toy.add_argument("--classes", default="G17,O49,P8,N35,D21")
    toy.add_argument("--styles", type=int, default=10)
    toy.add_argument("--photos", type=int, default=10, help="held-out colour photographs per class")
    toy.add_argument("--unas", type=int, default=20, help="grey photographs per class")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s", force=True)
    try:
        if args.command == "toy-data":
            from hieronst.toydata import write_corpus

            dirs = write_corpus(args.dest, args.classes.split(","), n_styles=args.styles,
                                photos_per_class=args.photos, unas_per_class=args.unas,
                                seed=args.seed or 0)
            _emit({"command": "toy-data", **{k: str(v) for k, v in dirs.items()}})
            return EXIT_OK
        cfg = load_config(args.config, args.seed, args.workers, args.out)
        if args.command == "synthesize":
            return cmd_synthesize(cfg, retry_failed=args.retry_failed)
        return COMMANDS[args.command](cfg)
    except TrainingDivergedError as exc:
        log.error("training failed: %s", exc)
        return EXIT_TRAIN
    except (ConfigError, CurationError, PlanningError, PlanMismatchError, BackboneLoadError,
            LayerConfigError, GardinerParseError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
