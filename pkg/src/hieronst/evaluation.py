"""Metrics, confusion matrices, transferability tables, sweeps and reports."""

import csv
import io
import logging
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from hieronst import kernels
from hieronst.classifier import build_model, predict, prepare_image, train
from hieronst.curation import derive_seed, parse_gardiner_code, split_dataset
from hieronst.imageio import ImageError, load_image

log = logging.getLogger(__name__)

METRIC_FIELDS = ("train_data", "test_data", "accuracy", "precision", "recall", "f1",
                 "accuracy_std", "precision_std", "recall_std", "f1_std", "replicas", "status")
SWEEP_FIELDS = ("training_dataset", "learning_rate", "early_stop_delta", "accuracy_mean", "accuracy_std",
                "replicas", "failed")


@dataclass
class ConfusionMatrix:
    classes: list
    counts: np.ndarray  # rows = true class, columns = predicted class

    def __post_init__(self):
        self.classes = [str(c) for c in self.classes]
        self.counts = np.asarray(self.counts, dtype=np.int64)
        k = len(self.classes)
        if self.counts.shape != (k, k):
            raise ValueError(f"counts shape {self.counts.shape} does not match {k} classes")
        if (self.counts < 0).any():
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self):
        return int(self.counts.sum())


@dataclass
class ClassScore:
    precision: float
    recall: float
    f1: float
    support: int
    predicted: int
    undefined: tuple = ()  # names of metrics whose denominator was zero


@dataclass
class MetricsReport:
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    per_class: dict
    confusion: ConfusionMatrix
    distorted: bool = False  # fewer than two classes in the evaluation set
    skipped: int = 0

    def row(self):
        return {"accuracy": self.accuracy, "precision": self.macro_precision,
                "recall": self.macro_recall, "f1": self.macro_f1}


def confusion(preds, labels, classes):
    classes = [str(c) for c in classes]
    preds, labels = [str(p) for p in preds], [str(t) for t in labels]
    if len(preds) != len(labels):
        raise ValueError(f"{len(preds)} predictions for {len(labels)} labels")
    index = {c: i for i, c in enumerate(classes)}
    unknown = sorted({c for c in (*preds, *labels) if c not in index})
    if unknown:
        raise ValueError(f"classes not in the class list: {unknown}")
    t = np.array([index[c] for c in labels], dtype=np.int64)
    p = np.array([index[c] for c in preds], dtype=np.int64)
    return ConfusionMatrix(classes, kernels.confusion_counts(t, p, len(classes)))


def _ratio(num, den):
    return (num / den, False) if den else (0.0, True)


def macro_metrics(cm):
    total = cm.total
    if total == 0:
        raise ValueError("cannot compute metrics of an empty confusion matrix")
    counts = cm.counts
    tp = np.diag(counts)
    support = counts.sum(axis=1)
    predicted = counts.sum(axis=0)
    per_class = {}
    included = []
    for i, c in enumerate(cm.classes):
        p, p_undef = _ratio(int(tp[i]), int(predicted[i]))
        r, r_undef = _ratio(int(tp[i]), int(support[i]))
        f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
        undefined = tuple(n for n, u in (("precision", p_undef), ("recall", r_undef)) if u)
        per_class[c] = ClassScore(p, r, f1, int(support[i]), int(predicted[i]), undefined)
        if support[i] > 0 or predicted[i] > 0:
            included.append(per_class[c])
    n = len(included)
    return MetricsReport(
        accuracy=int(tp.sum()) / total,
        macro_precision=sum(s.precision for s in included) / n,
        macro_recall=sum(s.recall for s in included) / n,
        macro_f1=sum(s.f1 for s in included) / n,
        per_class=per_class,
        confusion=cm,
        distorted=int((support > 0).sum()) < 2,
    )


def predict_manifest(model, manifest, batch_size=64):
    """Predicted class names for every decodable record; returns (labels, preds, skipped)."""
    labels, images, skipped = [], [], 0
    for r in manifest:
        try:
            images.append(prepare_image(load_image(r.path), model.spec))
        except (OSError, ImageError) as exc:
            log.warning("skipping %s: %s", r.path, exc)
            skipped += 1
            continue
        labels.append(str(r.gardiner))
    probs = predict(model, images, batch_size)
    return labels, [model.classes[i] for i in probs.argmax(axis=1)], skipped


def _check_label_space(model, manifest):
    missing = sorted({str(r.gardiner) for r in manifest} - set(model.classes))
    if missing:
        raise ValueError(f"model cannot predict classes {missing}")


def evaluate(model, test_manifest):
    if len(test_manifest) == 0:
        raise ValueError("cannot evaluate on an empty manifest")
    _check_label_space(model, test_manifest)
    labels, preds, skipped = predict_manifest(model, test_manifest)
    if not labels:
        raise ValueError("no record of the test manifest could be decoded")
    report = macro_metrics(confusion(preds, labels, model.classes))
    report.skipped = skipped
    return report


def mean_std(values):
    a = np.asarray(values, dtype=np.float64)
    return float(a.mean()), float(a.std())  # population std over replicas


def replica_group(name):
    """Training-data name of a model called e.g. ``NST#2``."""
    return name.split("#", 1)[0]


@dataclass
class SuiteTable:
    rows: list = field(default_factory=list)
    reports: dict = field(default_factory=dict)  # (model name, dataset name) -> MetricsReport

    def to_csv(self):
        return table_csv(METRIC_FIELDS, self.rows)

    def cell(self, train_data, test_data):
        for r in self.rows:
            if r["train_data"] == train_data and r["test_data"] == test_data:
                return r
        raise KeyError((train_data, test_data))


def transferability_suite(models, datasets, include_self=False, own_tests=None):
    """Evaluate every model on every dataset and average over replicas.

    Models named ``<data>#<k>`` are replicas trained on dataset ``<data>``.
    Same-name pairs are skipped unless ``include_self``; for those,
    ``own_tests[model name]`` (the replica's own test split) replaces the
    shared dataset when given. A failing cell is recorded with status
    "failed" and the suite carries on.
    """
    own_tests = own_tests or {}
    table = SuiteTable()
    groups = {}
    for name in models:
        groups.setdefault(replica_group(name), []).append(name)
    for group in sorted(groups):
        for data_name in sorted(datasets):
            if data_name == group and not include_self:
                continue
            reports, failures = [], 0
            for name in sorted(groups[group]):
                test = own_tests.get(name, datasets[data_name]) if data_name == group else datasets[data_name]
                try:
                    rep = evaluate(models[name], test)
                except Exception as exc:  # noqa: BLE001 - one bad cell must not stop the suite
                    log.error("evaluating %s on %s failed: %s", name, data_name, exc)
                    failures += 1
                    continue
                table.reports[(name, data_name)] = rep
                reports.append(rep)
            row = {"train_data": group, "test_data": data_name, "replicas": len(reports),
                   "status": "ok" if not failures else ("failed" if not reports else f"partial({failures})")}
            for key in ("accuracy", "precision", "recall", "f1"):
                if reports:
                    row[key], row[key + "_std"] = mean_std([r.row()[key] for r in reports])
                else:
                    row[key] = row[key + "_std"] = float("nan")
            table.rows.append(row)
    return table


def single_class_test(model, manifest, target_class):
    """Accuracy on a set whose labels are all ``target_class``, plus the
    histogram of predicted classes (keys sorted by class)."""
    target = str(parse_gardiner_code(str(target_class)))
    labels = {str(r.gardiner) for r in manifest}
    if labels - {target}:
        raise ValueError(f"manifest mixes labels {sorted(labels)}; expected only {target}")
    if len(manifest) == 0:
        raise ValueError("cannot test on an empty manifest")
    if target not in model.classes:
        raise ValueError(f"model cannot predict {target}")
    _, preds, skipped = predict_manifest(model, manifest)
    if not preds:
        raise ValueError("no record of the manifest could be decoded")
    counts = Counter(preds)
    histogram = {c: counts[c] for c in sorted(counts, key=parse_gardiner_code)}
    if skipped:
        log.warning("%d images skipped", skipped)
    return counts[target] / len(preds), histogram


@dataclass
class SweepTable:
    rows: list = field(default_factory=list)
    histories: dict = field(default_factory=dict)  # run name -> TrainingHistory
    histograms: dict = field(default_factory=dict)  # run name -> prediction histogram

    def to_csv(self):
        return table_csv(SWEEP_FIELDS, self.rows)


def sweep(configs, datasets, eval_manifest, replicas=1, target_class=None, seed=0, spec=None,
          ratios=(75, 15, 15), classes=None):
    """Train ``replicas`` models per (config, dataset) and score them.

    Each replica uses its own split seed. With ``target_class`` the score is
    single_class_test on ``eval_manifest``, otherwise evaluate. ``classes``
    fixes the label space (default: every class seen in the inputs).
    """
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    table = SweepTable()
    for ci, cfg in enumerate(configs):
        for data_name in sorted(datasets):
            manifest = datasets[data_name]
            scores, failed = [], 0
            for k in range(replicas):
                run = f"{data_name}#{k}@cfg{ci}"
                split_seed = derive_seed(seed, "sweep", data_name, k)
                try:
                    train_m, val_m, _ = split_dataset(manifest, ratios, seed=split_seed)
                    labels = classes or sorted({*manifest.classes, *eval_manifest.classes})
                    run_spec = replace(spec, num_classes=len(labels)) if spec is not None else None
                    model = build_model(run_spec, seed=split_seed, classes=labels)
                    model, hist = train(model, train_m, val_m, replace(cfg, seed=split_seed))
                    if target_class is not None:
                        acc, hist_pred = single_class_test(model, eval_manifest, target_class)
                        table.histograms[run] = hist_pred
                    else:
                        acc = evaluate(model, eval_manifest).accuracy
                    table.histories[run] = hist
                    scores.append(acc)
                    log.info("sweep %s lr=%g delta=%g seed=%d -> %.4f", run, cfg.initial_lr,
                             cfg.early_stop_min_delta, split_seed, acc)
                except Exception as exc:  # noqa: BLE001 - record and continue
                    log.error("sweep run %s failed: %s", run, exc)
                    failed += 1
            mean, std = mean_std(scores) if scores else (float("nan"), float("nan"))
            table.rows.append({
                "training_dataset": data_name, "learning_rate": cfg.initial_lr,
                "early_stop_delta": cfg.early_stop_min_delta, "accuracy_mean": mean,
                "accuracy_std": std, "replicas": len(scores), "failed": failed,
            })
    return table


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def table_csv(fields, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for r in rows:
        w.writerow([_fmt(r.get(f, "")) for f in fields])
    return buf.getvalue()


def _write(path, text):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def _plot_curves(histories, out_dir):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    groups = {}
    for name in sorted(histories):
        groups.setdefault(replica_group(name), []).append(name)
    written = []
    for group, names in sorted(groups.items()):
        fig, axes = plt.subplots(1, 2, figsize=(10, 4))
        for name in names:
            h = histories[name]
            epochs = h.column("epoch")
            axes[0].plot(epochs, h.column("train_loss"), label=f"{name} train")
            axes[0].plot(epochs, h.column("val_loss"), "--", label=f"{name} val")
            axes[1].plot(epochs, h.column("train_acc"), label=f"{name} train")
            axes[1].plot(epochs, h.column("val_acc"), "--", label=f"{name} val")
        axes[0].set(title=f"{group}: loss", xlabel="epoch")
        axes[1].set(title=f"{group}: accuracy", xlabel="epoch", ylim=(0, 1.02))
        axes[1].legend(fontsize="x-small")
        fig.tight_layout()
        path = out_dir / f"curves_{group}.png"
        fig.savefig(path, dpi=80)
        plt.close(fig)
        written.append(path)
    return written


def _plot_pie(histogram, path, title):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 5))
    ax.pie(list(histogram.values()), labels=list(histogram), autopct="%1.1f%%")
    ax.set_title(title)
    fig.savefig(path, dpi=80)
    plt.close(fig)
    return path


def emit_report(histories, tables, out_dir, histograms=None):
    """Write CSV tables, curve plots, prediction pies and summary.md to ``out_dir``.

    ``histories`` maps run names to TrainingHistory; ``tables`` maps table
    names to objects with ``to_csv()`` (or plain CSV text); ``histograms``
    maps names to prediction histograms. Returns the written paths.
    """
    out_dir = Path(out_dir)
    histograms = histograms or {}
    written = []
    for name in sorted(tables):
        t = tables[name]
        written.append(_write(out_dir / f"{name}.csv", t if isinstance(t, str) else t.to_csv()))
    for name in sorted(histories):
        written.append(_write(out_dir / "histories" / f"{name.replace('#', '_')}.csv", histories[name].to_csv()))
    lines = ["# Experiment summary", ""]
    if not (histories or tables or histograms):
        lines.append("No data: nothing was trained or evaluated.")
    else:
        written += _plot_curves(histories, out_dir) if histories else []
        for name in sorted(histograms):
            if histograms[name]:
                written.append(_plot_pie(histograms[name], out_dir / f"pie_{name.replace('#', '_')}.png", name))
        for name in sorted(tables):
            t = tables[name]
            lines += [f"## {name}", "", "```", (t if isinstance(t, str) else t.to_csv()).rstrip(), "```", ""]
        if histories:
            lines += ["## Training runs", ""]
            lines += [f"- {n}: {len(h)} epochs" for n, h in sorted(histories.items())]
            lines.append("")
        for name in sorted(histograms):
            total = sum(histograms[name].values())
            share = ", ".join(f"{c} {100 * n / total:.1f}%" for c, n in histograms[name].items()) if total else "-"
            lines += [f"## Predictions of {name}", "", share, ""]
    written.append(_write(out_dir / "summary.md", "\n".join(lines) + "\n"))
    return written
