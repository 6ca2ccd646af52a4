"""Gardiner codes, labelled-image manifests and dataset curation.

Every operation here is a pure function of (manifest, settings, seed): seeded
subsampling and shuffling use a per-class ``random.Random`` derived from the
seed and the class code, so one class's result never depends on another's.
"""

import hashlib
import json
import logging
import random
import re
import shutil
import warnings
from collections import Counter
from dataclasses import dataclass, field, replace
from functools import total_ordering
from pathlib import Path

log = logging.getLogger(__name__)

# Gardiner's 26 superclasses (no J; Aa for unclassified signs)
GARDINER_SUPERCLASSES = frozenset(
    ["A", "B", "C", "D", "E", "F", "G", "H", "I", "K", "L", "M", "N",
     "O", "P", "Q", "R", "S", "T", "U", "V", "W", "X", "Y", "Z", "Aa"]
)
SOURCES = ("unas", "nst", "font", "photo")
SPLITS = ("train", "val", "test")

_CODE_RE = re.compile(r"^([A-Za-z]{1,2})0*([1-9][0-9]*)([A-Za-z]?)$")


class GardinerParseError(ValueError):
    pass


class CurationError(ValueError):
    pass


@total_ordering
@dataclass(frozen=True)
class GardinerCode:
    superclass: str
    index: int
    variant: str | None = None

    def __str__(self):
        return f"{self.superclass}{self.index}{self.variant or ''}"

    def __lt__(self, other):
        if not isinstance(other, GardinerCode):
            return NotImplemented
        return self._key() < other._key()

    def _key(self):
        return (self.superclass, self.index, self.variant or "")


def parse_gardiner_code(text, superclasses=GARDINER_SUPERCLASSES):
    """Parse text such as ``G17``, ``Aa15`` or ``N35a`` into a GardinerCode."""
    if isinstance(text, GardinerCode):
        return text
    m = _CODE_RE.match(str(text).strip())
    if not m:
        raise GardinerParseError(f"malformed Gardiner code: {text!r}")
    letters, digits, variant = m.groups()
    superclass = letters[0].upper() + letters[1:].lower()
    if superclasses is not None and superclass not in superclasses:
        raise GardinerParseError(f"unknown superclass {superclass!r} in {text!r}")
    return GardinerCode(superclass, int(digits), variant.lower() or None)


def code(text):
    return parse_gardiner_code(text)


@dataclass(frozen=True)
class LabeledImage:
    path: str
    gardiner: GardinerCode
    source: str
    split: str | None = None

    def __post_init__(self):
        if self.source not in SOURCES:
            raise CurationError(f"unknown source tag {self.source!r}")
        if self.split is not None and self.split not in SPLITS:
            raise CurationError(f"unknown split tag {self.split!r}")

    def to_json(self):
        return {"path": self.path, "class": str(self.gardiner), "source": self.source, "split": self.split}

    @classmethod
    def from_json(cls, d):
        return cls(str(d["path"]), parse_gardiner_code(d["class"]), d["source"], d.get("split"))


@dataclass
class DatasetManifest:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def distribution(self):
        """Class -> record count, ordered by class code."""
        counts = Counter(r.gardiner for r in self.records)
        return {c: counts[c] for c in sorted(counts)}

    @property
    def classes(self):
        return sorted({r.gardiner for r in self.records})

    def by_class(self):
        groups = {}
        for r in self.records:
            groups.setdefault(r.gardiner, []).append(r)
        return {c: groups[c] for c in sorted(groups)}

    def with_split(self, split):
        return DatasetManifest([replace(r, split=split) for r in self.records])

    def dumps(self):
        return "".join(json.dumps(r.to_json()) + "\n" for r in self.records)

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.dumps(), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path):
        records = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    records.append(LabeledImage.from_json(json.loads(line)))
        return cls(records)

    def check_disjoint(self, *others):
        """Raise if a path occurs in two of the given split manifests.

        Font manifests duplicate one image per class by construction; there
        the overlap is logged instead of raised.
        """
        seen = {}
        for idx, m in enumerate((self, *others)):
            for r in m.records:
                prev = seen.setdefault(r.path, idx)
                if prev != idx:
                    if r.source == "font":
                        log.info("font record %s shared between splits (expected)", r.path)
                        continue
                    raise CurationError(f"{r.path} appears in more than one split")


def derive_seed(*parts):
    """Stable 32-bit seed from arbitrary parts (independent of PYTHONHASHSEED)."""
    digest = hashlib.sha256("\x1f".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:4], "little")


def load_code_list(path):
    """Plain-text list of codes, one per line; ``#`` starts a comment."""
    codes = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            codes.append(parse_gardiner_code(line))
    return codes


def load_relabels(path):
    """Plain-text corrections, ``<path-or-stem> <code>`` per line."""
    corrections = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise CurationError(f"{path}:{n}: expected '<image> <code>', got {line!r}")
        corrections[parts[0]] = parse_gardiner_code(parts[1])
    return corrections


def load_distribution(path):
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return {parse_gardiner_code(k): int(v) for k, v in data.items()}


def save_distribution(path, dist):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ordered = {str(c): dist[c] for c in sorted(dist)}
    path.write_text(json.dumps(ordered, indent=1) + "\n", encoding="utf-8")
    return path


IMAGE_EXTS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


def image_files(root, exts=IMAGE_EXTS):
    return [p for p in sorted(Path(root).rglob("*")) if p.is_file() and p.suffix.lower() in exts]


def scan_image_tree(root, source, exts=IMAGE_EXTS):
    """Collect labelled images under ``root``.

    The label is the nearest parent directory that parses as a Gardiner code,
    else the filename suffix after the last underscore (``090361_G17.png``).
    """
    root = Path(root)
    records = []
    for p in image_files(root, exts):
        label = None
        for parent in p.relative_to(root).parents:
            if parent.name:
                try:
                    label = parse_gardiner_code(parent.name)
                    break
                except GardinerParseError:
                    continue
        if label is None:
            try:
                label = parse_gardiner_code(p.stem.rsplit("_", 1)[-1])
            except GardinerParseError:
                log.warning("skipping %s: no Gardiner label", p)
                continue
        records.append(LabeledImage(str(p), label, source))
    return DatasetManifest(records)


def organize_by_sign_list(manifest, dest):
    """Copy images into ``dest/<superclass>/<code>/<name>`` and re-point records."""
    dest = Path(dest)
    out = []
    for r in manifest.records:
        target = dest / r.gardiner.superclass / str(r.gardiner) / Path(r.path).name
        target.parent.mkdir(parents=True, exist_ok=True)
        if Path(r.path).resolve() != target.resolve():
            shutil.copyfile(r.path, target)
        out.append(replace(r, path=str(target)))
    return DatasetManifest(out)


def apply_relabels(manifest, corrections):
    """Replace labels for records named in ``corrections``.

    Keys match a record's full path or its file stem (``090361_G17``).
    """
    if not corrections:
        return DatasetManifest(list(manifest.records))
    corrections = {k: parse_gardiner_code(v) for k, v in corrections.items()}
    matched = set()
    out = []
    for r in manifest.records:
        key = r.path if r.path in corrections else Path(r.path).stem
        if key in corrections:
            new = corrections[key]
            matched.add(key)
            if new != r.gardiner:
                log.info("relabel %s: %s -> %s", r.path, r.gardiner, new)
            r = replace(r, gardiner=new)
        out.append(r)
    unknown = sorted(set(corrections) - matched)
    if unknown:
        raise CurationError(f"corrections name images not in the manifest: {unknown}")
    return DatasetManifest(out)


def _class_indices(manifest):
    groups = {}
    for i, r in enumerate(manifest.records):
        groups.setdefault(r.gardiner, []).append(i)
    return {c: groups[c] for c in sorted(groups)}


def _sample_class(indices, k, seed, cls):
    rng = random.Random(derive_seed(seed, "sample", cls))
    return [indices[i] for i in sorted(rng.sample(range(len(indices)), k))]


def _select(manifest, keep):
    return DatasetManifest([r for i, r in enumerate(manifest.records) if i in keep])


def prune_dataset(manifest, min_class_size=10, class_whitelist=None, max_class_size=175, seed=0):
    """Drop small and non-whitelisted classes, then cap class sizes.

    Capping draws a seeded uniform sample without replacement; surviving
    records keep their original order.
    """
    if min_class_size < 1:
        raise ValueError("min_class_size must be >= 1")
    if max_class_size < min_class_size:
        raise ValueError(f"max_class_size {max_class_size} < min_class_size {min_class_size}")
    allowed = None if class_whitelist is None else {parse_gardiner_code(c) for c in class_whitelist}
    keep = set()
    for cls, idx in _class_indices(manifest).items():
        if len(idx) < min_class_size or (allowed is not None and cls not in allowed):
            continue
        if len(idx) > max_class_size:
            idx = _sample_class(idx, max_class_size, seed, cls)
        keep.update(idx)
    return _select(manifest, keep)


def match_distribution(manifest, reference, seed=0):
    """Subsample ``manifest`` so its class counts equal ``reference`` exactly."""
    reference = {parse_gardiner_code(c): int(n) for c, n in reference.items()}
    groups = _class_indices(manifest)
    deficits = {
        str(c): (n, len(groups.get(c, ())))
        for c, n in sorted(reference.items())
        if len(groups.get(c, ())) < n
    }
    if deficits:
        detail = ", ".join(f"{c}: need {n}, have {have}" for c, (n, have) in deficits.items())
        raise CurationError(f"insufficient examples: {detail}")
    keep = set()
    for cls, n in reference.items():
        idx = groups[cls]
        keep.update(idx if len(idx) == n else _sample_class(idx, n, seed, cls))
    return _select(manifest, keep)


def make_font_dataset(glyph_images, reference, copy_to=None):
    """One glyph image per class, duplicated to the reference count.

    With ``copy_to`` each class's glyph is first copied into the sign-list
    hierarchy below that directory; records then point at the copy.
    """
    glyphs = {parse_gardiner_code(c): p for c, p in glyph_images.items()}
    reference = {parse_gardiner_code(c): int(n) for c, n in reference.items()}
    missing = sorted(str(c) for c in reference if c not in glyphs)
    if missing:
        raise CurationError(f"no glyph image for classes: {missing}")
    records = []
    for cls in sorted(reference):
        path = Path(glyphs[cls])
        if copy_to is not None:
            target = Path(copy_to) / cls.superclass / str(cls) / f"{cls}{path.suffix}"
            target.parent.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(path, target)
            path = target
        records.extend(LabeledImage(str(path), cls, "font") for _ in range(reference[cls]))
    return DatasetManifest(records)


def split_counts(n, ratios):
    """Per-split counts for ``n`` records.

    Shares are ``n * r / sum(ratios)``, floored; the leftover records go one
    each to the splits with the largest ratio (ties: train, val, test).
    """
    total = float(sum(ratios))
    floors = [int(n * r // total) for r in ratios]
    # guard float error in the floor
    floors = [f + 1 if (f + 1) * total <= n * r else f for f, r in zip(floors, ratios)]
    leftover = n - sum(floors)
    order = sorted(range(len(ratios)), key=lambda i: (-ratios[i], i))
    for i in order[:leftover]:
        floors[i] += 1
    return floors


def split_dataset(manifest, ratios=(75, 15, 15), seed=0):
    """Stratified train/val/test split; returns three manifests."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) < 0 or sum(ratios) <= 0:
        raise ValueError(f"ratios must be three non-negative weights with positive sum, got {ratios}")
    assigned = {}
    absent = []
    for cls, idx in _class_indices(manifest).items():
        order = list(idx)
        random.Random(derive_seed(seed, "split", cls)).shuffle(order)
        counts = split_counts(len(idx), ratios)
        start = 0
        for split, k in zip(SPLITS, counts):
            for i in order[start:start + k]:
                assigned[i] = split
            start += k
        absent.extend(
            f"{cls}:{split}" for split, k, r in zip(SPLITS, counts, ratios) if r > 0 and k == 0
        )
    if absent:
        warnings.warn(f"classes with no records in a split: {', '.join(absent)}", stacklevel=2)
    out = {s: [] for s in SPLITS}
    for i, r in enumerate(manifest.records):
        split = assigned[i]
        out[split].append(replace(r, split=split))
    return tuple(DatasetManifest(out[s]) for s in SPLITS)
