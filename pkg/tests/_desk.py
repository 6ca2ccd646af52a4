"""Desk-scale end-to-end experiment shared by the acceptance suite.

The NST images are the expensive part (about half a minute each on one CPU
core), so they are generated once with seed 0 into a cache directory and
resumed from there; the per-seed part re-splits, augments and trains.
"""

import json
import shutil
import sys
from pathlib import Path

from hieronst import toydata
from hieronst.augmentation import AffineParams, double_dataset
from hieronst.classifier import TrainConfig, build_model, train
from hieronst.curation import make_font_dataset, scan_image_tree, split_dataset
from hieronst.evaluation import evaluate
from hieronst.nst.backbone import Backbone, make_surrogate
from hieronst.nst.engine import NSTConfig
from hieronst.provenance import config_hash
from hieronst.synthesis import SynthesisPlan, plan_batches, run_plan

CLASSES = ("G17", "O49", "P8", "N35", "D21")
N_STYLES = 10
PER_CLASS = 20
PHOTOS_PER_CLASS = 10
NST = NSTConfig(max_dim=128, steps=100)


def cache_key():
    return config_hash({
        "classes": CLASSES, "styles": N_STYLES, "per_class": PER_CLASS,
        "photos": PHOTOS_PER_CLASS, "nst": NST.to_dict(), "corpus_seed": 0, "version": 1,
    })


def build_nst_cache(cache_dir, log=print):
    """Corpus + NST images under ``cache_dir``; resumes an interrupted run."""
    cache_dir = Path(cache_dir)
    key = cache_key()
    stamp = cache_dir / "KEY"
    if cache_dir.exists() and (not stamp.is_file() or stamp.read_text().strip() != key):
        shutil.rmtree(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    stamp.write_text(key + "\n")
    dirs = toydata.write_corpus(cache_dir / "corpus", CLASSES, n_styles=N_STYLES,
                                photos_per_class=PHOTOS_PER_CLASS, seed=0)
    reference = {c: PER_CLASS for c in CLASSES}
    font = make_font_dataset({c: dirs["font"] / f"{c}.png" for c in CLASSES}, reference)
    backbone_path = cache_dir / "vgg19_surrogate.pt"
    if not backbone_path.is_file():
        make_surrogate(backbone_path, seed=0)
    plan_path = cache_dir / "plan.jsonl"
    if plan_path.is_file():
        plan = SynthesisPlan.load(plan_path)
    else:
        styles = sorted(dirs["styles"].glob("*.png"))
        plan = plan_batches(font, styles, reference, seed=0, out_dir=cache_dir / "nst")
        plan.config_hash = key
    summary = run_plan(plan, NST, Backbone.load(backbone_path), plan_path=plan_path)
    log(f"NST cache: {summary.completed} images ({summary.synthesized} new, "
        f"{summary.seconds_per_image:.1f}s each)")
    photos = scan_image_tree(dirs["photos"], "photo")
    return summary.manifest, font, photos


def run_seed(seed, nst, font, photos, work_dir):
    """Train NST- and Font-based models for one seed and score them."""
    work_dir = Path(work_dir)
    params = AffineParams()
    cfg = TrainConfig(seed=seed)
    out = {}
    models = {}
    for name, manifest in (("NST", nst), ("Font", font)):
        tr, va, te = split_dataset(manifest, (75, 15, 15), seed=seed)
        tr = double_dataset(tr, params, seed, out_dir=work_dir / name / "train")
        model = build_model(seed=seed, classes=sorted(CLASSES))
        model, history = train(model, tr, va, cfg)
        models[name] = (model, te, len(history))
    nst_test = models["NST"][1]
    out["epochs"] = {k: v[2] for k, v in models.items()}
    out["nst_on_nst"] = evaluate(models["NST"][0], nst_test).accuracy
    out["font_on_nst"] = evaluate(models["Font"][0], nst_test).accuracy
    out["nst_on_photos"] = evaluate(models["NST"][0], photos).accuracy
    out["font_on_photos"] = evaluate(models["Font"][0], photos).accuracy
    return out


def claim_holds(r, n_classes=len(CLASSES)):
    return (r["nst_on_nst"] >= 0.90 and r["font_on_nst"] <= 2.0 / n_classes
            and r["nst_on_photos"] > r["font_on_photos"])


if __name__ == "__main__":
    import logging
    import tempfile

    logging.basicConfig(level=logging.INFO)
    cache = Path(sys.argv[1])
    nst, font, photos = build_nst_cache(cache)
    for s in [int(a) for a in sys.argv[2:]]:
        with tempfile.TemporaryDirectory() as tmp:
            print(s, json.dumps(run_seed(s, nst, font, photos, tmp)), flush=True)
