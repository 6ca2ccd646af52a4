import numpy as np
import pytest
import torch

from hieronst import toydata
from hieronst.classifier import ModelSpec, TrainConfig, TrainingHistory
from hieronst.curation import DatasetManifest, LabeledImage, parse_gardiner_code
from hieronst.evaluation import (
    ConfusionMatrix, confusion, emit_report, evaluate, macro_metrics, single_class_test, sweep,
    transferability_suite,
)
from hieronst.imageio import save_image
from _oracles import confusion_matrices, confusion_oracle, macro_oracle, samples_from_matrix

CLASSES = ["G17", "O49", "P8"]
SMALL = ModelSpec(input_size=(32, 32, 3), num_classes=3, entry_widths=(8, 8), block_widths=(16, 16, 16),
                  final_width=32)


class ConstantModel(torch.nn.Module):
    """Always predicts one class; enough to exercise the evaluation plumbing."""

    def __init__(self, classes, target):
        super().__init__()
        self.classes = list(classes)
        self.spec = ModelSpec(input_size=(16, 16, 3), num_classes=len(classes))
        self.target = self.classes.index(target)

    def forward(self, x):
        out = torch.zeros(x.shape[0], len(self.classes))
        out[:, self.target] = 5.0
        return out


@pytest.fixture(scope="module")
def glyph_set(tmp_path_factory):
    root = tmp_path_factory.mktemp("eval")
    records = []
    for c in CLASSES:
        for i in range(3):
            path = root / f"{c}_{i}.png"
            save_image(path, toydata.carved_photo(c, i, 32))
            records.append(LabeledImage(str(path), parse_gardiner_code(c), "photo"))
    return DatasetManifest(records)


def test_confusion_matches_counting_oracle(rng):
    classes = ["A1", "B2", "C3", "D4"]
    labels = list(rng.choice(classes, 50))
    preds = list(rng.choice(classes, 50))
    cm = confusion(preds, labels, classes)
    assert cm.counts.tolist() == confusion_oracle(labels, preds, classes)
    assert cm.total == 50


def test_confusion_trivial_cases():
    cm = confusion(["G17", "O49"], ["G17", "O49"], CLASSES)
    assert cm.counts.tolist() == [[1, 0, 0], [0, 1, 0], [0, 0, 0]]
    assert confusion([], [], CLASSES).counts.sum() == 0
    with pytest.raises(ValueError):
        confusion(["G17"], [], CLASSES)
    with pytest.raises(ValueError):
        confusion(["X1"], ["G17"], CLASSES)


def test_macro_metrics_two_class_example():
    r = macro_metrics(ConfusionMatrix(["A1", "B1"], [[3, 1], [2, 4]]))
    assert r.accuracy == pytest.approx(0.7)
    assert r.per_class["A1"].precision == pytest.approx(3 / 5)
    assert r.per_class["A1"].recall == pytest.approx(3 / 4)
    assert r.per_class["B1"].precision == pytest.approx(4 / 5)
    assert r.per_class["B1"].recall == pytest.approx(4 / 6)
    f_a, f_b = 2 * 0.6 * 0.75 / 1.35, 2 * 0.8 * (2 / 3) / (0.8 + 2 / 3)
    assert r.macro_precision == pytest.approx(0.7)
    assert r.macro_recall == pytest.approx((0.75 + 2 / 3) / 2)
    assert r.macro_f1 == pytest.approx((f_a + f_b) / 2)
    assert not r.distorted


def test_macro_metrics_exhaustive_oracle():
    checked = 0
    for k in (1, 2, 3):
        classes = [f"A{i + 1}" for i in range(k)]
        for m in confusion_matrices(k, 6):
            labels, preds = samples_from_matrix(m, classes)
            r = macro_metrics(ConfusionMatrix(classes, m))
            expected = macro_oracle(labels, preds, classes)
            got = (r.accuracy, r.macro_precision, r.macro_recall, r.macro_f1)
            assert got == pytest.approx(expected, abs=1e-12), m
            assert r.accuracy == np.trace(m) / m.sum()
            for v in got:
                assert 0.0 <= v <= 1.0
            checked += 1
    assert checked > 5000


def test_macro_metrics_edge_cases():
    perfect = macro_metrics(ConfusionMatrix(CLASSES, np.diag([2, 3, 1])))
    assert (perfect.accuracy, perfect.macro_precision, perfect.macro_recall, perfect.macro_f1) == (1, 1, 1, 1)
    single = macro_metrics(ConfusionMatrix(CLASSES, [[5, 2, 1], [0, 0, 0], [0, 0, 0]]))
    assert single.distorted and single.accuracy == pytest.approx(5 / 8)
    assert "recall" in single.per_class["O49"].undefined
    with pytest.raises(ValueError):
        macro_metrics(ConfusionMatrix(CLASSES, np.zeros((3, 3), dtype=int)))


def test_evaluate_constant_model(glyph_set):
    r = evaluate(ConstantModel(CLASSES, "G17"), glyph_set)
    assert r.accuracy == pytest.approx(1 / 3)
    assert r.confusion.counts[:, 0].tolist() == [3, 3, 3]
    assert r.skipped == 0
    with pytest.raises(ValueError):
        evaluate(ConstantModel(CLASSES, "G17"), DatasetManifest([]))
    with pytest.raises(ValueError):
        evaluate(ConstantModel(["G17", "O49"], "G17"), glyph_set)


def test_evaluate_skips_undecodable(glyph_set, tmp_path):
    bad = tmp_path / "bad.png"
    bad.write_bytes(b"nope")
    m = DatasetManifest(glyph_set.records + [LabeledImage(str(bad), parse_gardiner_code("P8"), "photo")])
    r = evaluate(ConstantModel(CLASSES, "P8"), m)
    assert r.skipped == 1 and r.confusion.total == 9


def test_transferability_suite(glyph_set):
    models = {"NST#0": ConstantModel(CLASSES, "G17"), "NST#1": ConstantModel(CLASSES, "G17"),
              "Font#0": ConstantModel(CLASSES, "O49")}
    half = DatasetManifest(glyph_set.records[:3])
    datasets = {"NST": glyph_set, "Photos": half}
    t = transferability_suite(models, datasets)
    assert {(r["train_data"], r["test_data"]) for r in t.rows} == {
        ("Font", "NST"), ("Font", "Photos"), ("NST", "Photos")}
    cell = t.cell("NST", "Photos")
    assert cell["accuracy"] == 1.0 and cell["accuracy_std"] == 0.0 and cell["replicas"] == 2
    full = transferability_suite(models, datasets, include_self=True, own_tests={"NST#0": half})
    assert full.reports[("NST#0", "NST")].accuracy == evaluate(models["NST#0"], half).accuracy
    assert full.reports[("NST#1", "NST")].accuracy == evaluate(models["NST#1"], glyph_set).accuracy
    one = transferability_suite({"Font#0": models["Font#0"]}, {"NST": glyph_set})
    assert len(one.rows) == 1


def test_transferability_marks_failed_cells(glyph_set):
    models = {"A#0": ConstantModel(["G17", "O49"], "G17")}
    t = transferability_suite(models, {"NST": glyph_set})
    assert t.rows[0]["status"] == "failed" and np.isnan(t.rows[0]["accuracy"])


def test_single_class_test(glyph_set):
    g17 = DatasetManifest([r for r in glyph_set if str(r.gardiner) == "G17"])
    acc, hist = single_class_test(ConstantModel(CLASSES, "G17"), g17, "G17")
    assert acc == 1.0 and hist == {"G17": 3}
    acc, hist = single_class_test(ConstantModel(CLASSES, "P8"), g17, "G17")
    assert acc == 0.0 and sum(hist.values()) == len(g17)
    with pytest.raises(ValueError):
        single_class_test(ConstantModel(CLASSES, "P8"), glyph_set, "G17")


def test_sweep_rows(glyph_set):
    g17 = DatasetManifest([r for r in glyph_set if str(r.gardiner) == "G17"])
    assert sweep([], {"Photos": glyph_set}, g17).rows == []
    cfg = TrainConfig(max_epochs=1, batch_size=4)
    t = sweep([cfg], {"Photos": glyph_set}, g17, replicas=1, target_class="G17", spec=SMALL, classes=CLASSES)
    assert len(t.rows) == 1
    row = t.rows[0]
    assert row["accuracy_std"] == 0.0 and row["replicas"] == 1 and row["learning_rate"] == 0.001
    with pytest.raises(ValueError):
        sweep([cfg], {"Photos": glyph_set}, g17, replicas=0)


def _history(offset):
    return TrainingHistory([{"epoch": e, "lr": 0.001, "train_loss": 1.0 / (e + 1 + offset), "train_acc": 0.5,
                             "val_loss": 1.2 / (e + 1), "val_acc": 0.4} for e in range(3)])


def test_emit_report(tmp_path, glyph_set):
    t = transferability_suite({"Font#0": ConstantModel(CLASSES, "O49")}, {"NST": glyph_set})
    histories = {f"NST#{k}": _history(k) for k in range(3)}
    paths = emit_report(histories, {"metrics": t}, tmp_path / "r", {"NST": {"G17": 3, "P8": 1}})
    names = {p.name for p in paths}
    assert {"metrics.csv", "summary.md", "curves_NST.png", "pie_NST.png"} <= names
    assert len([n for n in names if n.startswith("curves_")]) == 1
    first = (tmp_path / "r" / "metrics.csv").read_bytes()
    emit_report(histories, {"metrics": t}, tmp_path / "r", {"NST": {"G17": 3, "P8": 1}})
    assert (tmp_path / "r" / "metrics.csv").read_bytes() == first
    assert (tmp_path / "r" / "histories" / "NST_0.csv").read_text() == histories["NST#0"].to_csv()


def test_emit_report_empty(tmp_path):
    paths = emit_report({}, {}, tmp_path / "empty")
    assert [p.name for p in paths] == ["summary.md"]
    assert "No data" in (tmp_path / "empty" / "summary.md").read_text()
