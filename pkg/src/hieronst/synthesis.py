"""Planning and resumable execution of batch style-transfer jobs.

A plan crosses the content glyph(s) of each class with style photographs so
that every class receives exactly its target number of images. Jobs are
ordered style-major, so each style's Gram targets are computed once.
"""

import json
import logging
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from hieronst.curation import DatasetManifest, LabeledImage, derive_seed, parse_gardiner_code
from hieronst.imageio import load_image, luminance, save_image
from hieronst.nst.engine import StyleTransfer, fit_max_dim

log = logging.getLogger(__name__)

STATUSES = ("pending", "done", "failed")


class PlanningError(ValueError):
    pass


class PlanMismatchError(ValueError):
    pass


@dataclass
class SynthesisJob:
    content_path: str
    style_path: str
    gardiner: object
    output_path: str
    seed: int
    status: str = "pending"

    def to_json(self):
        return {
            "content_path": self.content_path, "style_path": self.style_path,
            "class": str(self.gardiner), "seed": self.seed,
            "output_path": self.output_path, "status": self.status,
        }

    @classmethod
    def from_json(cls, d):
        return cls(d["content_path"], d["style_path"], parse_gardiner_code(d["class"]),
                   d["output_path"], int(d["seed"]), d.get("status", "pending"))


@dataclass
class SynthesisPlan:
    jobs: list = field(default_factory=list)
    plan_seed: int = 0
    config_hash: str | None = None

    @property
    def distribution(self):
        counts = {}
        for j in self.jobs:
            counts[j.gardiner] = counts.get(j.gardiner, 0) + 1
        return {c: counts[c] for c in sorted(counts)}

    def dumps(self):
        header = {"plan_seed": self.plan_seed, "config_hash": self.config_hash, "jobs": len(self.jobs)}
        lines = [json.dumps(header)] + [json.dumps(j.to_json()) for j in self.jobs]
        return "\n".join(lines) + "\n"

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(self.dumps(), encoding="utf-8")
        tmp.replace(path)
        return path

    @classmethod
    def load(cls, path):
        lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
        if not lines:
            return cls()
        header = json.loads(lines[0])
        jobs = [SynthesisJob.from_json(json.loads(ln)) for ln in lines[1:]]
        return cls(jobs, int(header.get("plan_seed", 0)), header.get("config_hash"))


def plan_batches(content_manifest, style_images, target_distribution, seed, out_dir="nst"):
    """Build a SynthesisPlan with exactly ``target_distribution[c]`` jobs per class.

    Per class, styles are drawn by seeded sampling without replacement until
    the style list is exhausted, then with replacement. Content images of a
    class are used round-robin.
    """
    target = {parse_gardiner_code(c): int(n) for c, n in target_distribution.items() if int(n) > 0}
    styles = [str(s) for s in style_images]
    if target and not styles:
        raise PlanningError("no style images given")
    contents = {}
    for r in content_manifest.records:
        contents.setdefault(r.gardiner, [])
        if r.path not in contents[r.gardiner]:
            contents[r.gardiner].append(r.path)
    missing = sorted(str(c) for c in target if c not in contents)
    if missing:
        raise PlanningError(f"no content image for classes: {missing}")
    out_dir = Path(out_dir)
    jobs = []
    for cls in sorted(target):
        n = target[cls]
        rng = random.Random(derive_seed(seed, "styles", cls))
        picks = rng.sample(styles, min(n, len(styles)))
        picks += [rng.choice(styles) for _ in range(n - len(picks))]
        pool = sorted(contents[cls])
        for i, style in enumerate(picks):
            out = out_dir / cls.superclass / str(cls) / f"{cls}_nst_{i:04d}.png"
            jobs.append(SynthesisJob(pool[i % len(pool)], style, cls, str(out), derive_seed(seed, cls, i)))
    rank = {s: i for i, s in enumerate(styles)}
    jobs.sort(key=lambda j: rank[j.style_path])  # stable: class order kept within a style
    return SynthesisPlan(jobs, seed)


@dataclass
class RunSummary:
    manifest: DatasetManifest
    completed: int = 0
    failed: int = 0
    skipped: int = 0
    synthesized: int = 0
    seconds_per_image: float = 0.0


def _is_done(job):
    return job.status == "done" and Path(job.output_path).is_file()


def run_plan(plan, cfg, backbone, fresh_init=True, plan_path=None, workers=1):
    """Execute pending jobs of ``plan`` and return a RunSummary.

    Jobs already marked done (with their output present) are skipped, so an
    interrupted run resumes where it stopped. When ``plan_path`` is given the
    status file is rewritten after every job. A failing job is marked failed
    and the run continues.
    """
    lock = threading.Lock()
    timings = []

    def flush():
        if plan_path is not None:
            plan.save(plan_path)

    def execute(jobs, transfer):
        prev_style = None
        for job in jobs:
            if _is_done(job):
                continue
            t0 = time.perf_counter()
            try:
                style = load_image(job.style_path, rgb=True)
                content = load_image(job.content_path, rgb=True)
                out = transfer.run(content, style, style_key=job.style_path,
                                   fresh_init=fresh_init, seed=job.seed)
                save_image(job.output_path, out)
                status = "done"
            except Exception as exc:  # noqa: BLE001 - a failed job must not stop the batch
                log.error("job %s failed: %s", job.output_path, exc)
                status = "failed"
            dt = time.perf_counter() - t0
            with lock:
                job.status = status
                timings.append(dt)
                flush()
            if job.style_path != prev_style:
                log.info("style %s", job.style_path)
                prev_style = job.style_path
            log.info("[%d/%d] %s %s (%.1fs)", len(timings), pending, job.output_path, status, dt)

    skipped = sum(1 for j in plan.jobs if _is_done(j))
    pending = len(plan.jobs) - skipped
    if workers <= 1 or not fresh_init:
        execute(plan.jobs, StyleTransfer(backbone, cfg))
    else:
        groups = {}
        for j in plan.jobs:
            groups.setdefault(j.style_path, []).append(j)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(execute, g, StyleTransfer(backbone, cfg)) for g in groups.values()]
            for f in futures:
                f.result()
    flush()
    done = [j for j in plan.jobs if j.status == "done"]
    manifest = DatasetManifest([LabeledImage(j.output_path, j.gardiner, "nst") for j in done])
    return RunSummary(
        manifest=manifest,
        completed=len(done),
        failed=sum(1 for j in plan.jobs if j.status == "failed"),
        skipped=skipped,
        synthesized=len(timings),
        seconds_per_image=float(np.mean(timings)) if timings else 0.0,
    )


def reset_failed(plan):
    """Mark failed jobs pending again so a rerun retries them."""
    for j in plan.jobs:
        if j.status == "failed":
            j.status = "pending"
    return plan


def background_deviation(image_a, image_b, content, max_dim=None, threshold=0.5):
    """Mean absolute difference of two outputs over the content's background.

    Background pixels are those where the (resized) content glyph image is
    lighter than ``threshold``.
    """
    a = np.asarray(image_a, dtype=np.float64)
    b = np.asarray(image_b, dtype=np.float64)
    ref = fit_max_dim(content, max_dim) if max_dim else content
    mask = luminance(ref) > threshold
    if a.shape != b.shape or a.shape[:2] != mask.shape:
        raise ValueError(f"shape mismatch: {a.shape}, {b.shape}, mask {mask.shape}")
    if not mask.any():
        raise ValueError("content image has no background pixels")
    return float(np.abs(a - b)[mask].mean())

