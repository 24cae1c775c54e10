"""Dataset records, JSON-lines manifests and the procedural tamper corpus."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .exceptions import ContractError, DataIOError
from .netpbm import read_mask, read_pnm, write_mask, write_pnm

LABELS = ("real", "fake")
SPLITS = ("train", "valid", "test")
TAMPER_OPS = ("copy_move", "noise", "blur", "color_shift")
REAL_TAG = "real"
SPLIT_FRACTIONS = (0.7, 0.1, 0.2)


@dataclass(frozen=True)
class SampleRecord:
    image_path: str
    label: str
    mask_path: str | None = None
    split: str = "train"
    manipulation_tag: str = REAL_TAG
    id: str = ""

    def __post_init__(self):
        if self.label not in LABELS:
            raise ContractError(f"label must be one of {LABELS}, got {self.label!r}")
        if self.split not in SPLITS:
            raise ContractError(f"split must be one of {SPLITS}, got {self.split!r}")
        if self.label == "fake" and not self.mask_path:
            raise ContractError(f"fake record {self.image_path!r} has no mask_path")

    @property
    def label_id(self) -> int:
        return LABELS.index(self.label)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "SampleRecord":
        known = {"image_path", "label", "mask_path", "split", "manipulation_tag", "id"}
        unknown = set(d) - known
        if unknown:
            raise ContractError(f"unknown manifest fields {sorted(unknown)}")
        return cls(**d)


def save_manifest(path: str | os.PathLike, records: Iterable[SampleRecord]) -> None:
    try:
        os.makedirs(os.path.dirname(os.fspath(path)) or ".", exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(rec.to_json() + "\n")
    except OSError as exc:
        raise DataIOError(f"cannot write manifest {os.fspath(path)!r}: {exc.strerror}") from exc


def load_manifest(path: str | os.PathLike) -> list[SampleRecord]:
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise DataIOError(f"cannot read manifest {os.fspath(path)!r}: {exc.strerror}") from exc
    records = []
    for n, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            records.append(SampleRecord.from_dict(json.loads(line)))
        except (json.JSONDecodeError, TypeError) as exc:
            raise ContractError(f"{os.fspath(path)}:{n}: malformed record ({exc})") from exc
    return records


def resolve(base: str | os.PathLike, path: str) -> str:
    return path if os.path.isabs(path) else os.path.join(base, path)


def filter_records(
    records: Sequence[SampleRecord],
    splits: Sequence[str] | None = None,
    include_tags: Sequence[str] | None = None,
    exclude_tags: Sequence[str] | None = None,
    keep_real: bool = True,
) -> list[SampleRecord]:
    """Select by split and, for fake records, by manipulation tag."""
    out = []
    for rec in records:
        if splits and rec.split not in splits:
            continue
        if rec.label == "real":
            if keep_real:
                out.append(rec)
            continue
        if include_tags and rec.manipulation_tag not in include_tags:
            continue
        if exclude_tags and rec.manipulation_tag in exclude_tags:
            continue
        out.append(rec)
    return out


def leave_one_out(records: Sequence[SampleRecord], held_out: str) -> tuple[list[SampleRecord], list[SampleRecord]]:
    """Training records without the held-out tamper type, and the held-out type's test records."""
    tags = fake_tags(records)
    if held_out not in tags:
        raise ContractError(f"tag {held_out!r} not present; available {tags}")
    train = filter_records(records, splits=("train",), exclude_tags=(held_out,))
    test = filter_records(records, splits=("test",), include_tags=(held_out,))
    return train, test


def fake_tags(records: Sequence[SampleRecord]) -> list[str]:
    return sorted({r.manipulation_tag for r in records if r.label == "fake"})


def load_arrays(records: Sequence[SampleRecord], base: str | os.PathLike = ".") -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack images ``[n,3,H,W]`` uint8, masks ``[n,H,W]`` uint8 and labels ``[n]``."""
    if not records:
        raise ContractError("no records selected")
    images, masks, labels = [], [], []
    for rec in records:
        img = read_pnm(resolve(base, rec.image_path))
        if img.ndim != 3:
            raise DataIOError(f"image {rec.image_path!r} is not RGB")
        images.append(img)
        if rec.mask_path:
            masks.append(read_mask(resolve(base, rec.mask_path)))
        else:
            masks.append(np.zeros(img.shape[1:], dtype=np.uint8))
        labels.append(rec.label_id)
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise ContractError(f"images have differing shapes {sorted(shapes)}")
    return np.stack(images), np.stack(masks), np.array(labels, dtype=np.uint8)


# procedural corpus -------------------------------------------------------------
FINGERPRINT_AMPLITUDE = 24.0


def _smooth_field(rng: np.random.Generator, size: int, sigma: float) -> np.ndarray:
    f = ndimage.gaussian_filter(rng.normal(size=(size, size)), sigma, mode="wrap")
    return f / (f.std() + 1e-12)


def render_face(rng: np.random.Generator, size: int = 64) -> np.ndarray:
    """A textured ellipse on a textured background, uint8 ``[3, size, size]``.

    The green channel carries a +/- checkerboard, a stand-in for a sensor
    fingerprint that local tampering disturbs.
    """
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    bg_color = rng.uniform(40, 200, size=3)
    img = bg_color[:, None, None] + 18 * _smooth_field(rng, size, size / 8)[None]
    img += 2 * rng.normal(size=(3, size, size))

    cy, cx = size / 2 + rng.uniform(-size / 16, size / 16, 2)
    ay, ax = size * rng.uniform(0.32, 0.42), size * rng.uniform(0.24, 0.32)
    inside = ((yy - cy) / ay) ** 2 + ((xx - cx) / ax) ** 2 <= 1
    skin = np.array([rng.uniform(150, 230), rng.uniform(100, 170), rng.uniform(70, 140)])
    shade = 1 - 0.25 * (((yy - cy) / ay) ** 2 + ((xx - cx) / ax) ** 2)
    face = skin[:, None, None] * shade[None] + 8 * _smooth_field(rng, size, 2.0)[None]
    for side in (-1, 1):
        ey, ex = cy - 0.25 * ay, cx + side * 0.4 * ax
        eye = ((yy - ey) / (0.1 * ay)) ** 2 + ((xx - ex) / (0.18 * ax)) ** 2 <= 1
        face[:, eye] *= 0.35
    mouth = (np.abs(yy - (cy + 0.45 * ay)) < max(1.0, 0.05 * ay)) & (np.abs(xx - cx) < 0.35 * ax)
    face[:, mouth] *= 0.5
    img = np.where(inside[None], face, img)

    checker = np.where((yy + xx) % 2 == 0, 1.0, -1.0)
    img[1] += FINGERPRINT_AMPLITUDE * checker
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def random_region(rng: np.random.Generator, size: int, min_frac: float = 0.25, max_frac: float = 0.5) -> np.ndarray:
    """Boolean rectangle or ellipse mask away from the border."""
    rh, rw = (rng.integers(int(size * min_frac), int(size * max_frac) + 1, 2)).tolist()
    top = int(rng.integers(2, size - rh - 1))
    left = int(rng.integers(2, size - rw - 1))
    region = np.zeros((size, size), dtype=bool)
    if rng.random() < 0.5:
        region[top : top + rh, left : left + rw] = True
    else:
        yy, xx = np.mgrid[0:size, 0:size]
        cy, cx = top + (rh - 1) / 2, left + (rw - 1) / 2
        region = ((yy - cy) / (rh / 2)) ** 2 + ((xx - cx) / (rw / 2)) ** 2 <= 1
    return region


def apply_tamper(rng: np.random.Generator, real: np.ndarray, region: np.ndarray, op: str) -> np.ndarray:
    """Alter ``real`` inside ``region`` only; returns a new uint8 image."""
    img = real.astype(float)
    size = real.shape[-1]
    if op == "copy_move":
        ys, xs = np.nonzero(region)
        while True:
            dy, dx = rng.integers(-size // 3, size // 3 + 1, 2)
            # odd total shift flips the checkerboard phase of the pasted pixels
            if (dy + dx) % 2 == 1 and ys.min() + dy >= 0 and ys.max() + dy < size and xs.min() + dx >= 0 and xs.max() + dx < size:
                break
        src = img.copy()
        img[:, ys, xs] = src[:, ys + dy, xs + dx]
    elif op == "noise":
        img[:, region] += rng.normal(0, 20, size=(3, int(region.sum())))
    elif op == "blur":
        blurred = ndimage.gaussian_filter(img, sigma=(0, 1.5, 1.5), mode="reflect")
        img[:, region] = blurred[:, region]
    elif op == "color_shift":
        shifted = img[[2, 0, 1]] + rng.uniform(-20, 20, size=3)[:, None, None]
        img[:, region] = shifted[:, region]
    else:
        raise ContractError(f"unknown tamper op {op!r}; expected one of {TAMPER_OPS}")
    out = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return np.where(region[None], out, real)


def _assign_splits(n: int, rng: np.random.Generator) -> list[str]:
    order = rng.permutation(n)
    n_train = int(round(SPLIT_FRACTIONS[0] * n))
    n_valid = int(round(SPLIT_FRACTIONS[1] * n))
    splits = [""] * n
    for rank, i in enumerate(order):
        splits[i] = "train" if rank < n_train else "valid" if rank < n_train + n_valid else "test"
    return splits


def synth_generate(
    n_real: int,
    n_fake: int,
    seed: int,
    out_dir: str | os.PathLike,
    size: int = 64,
    ops: Sequence[str] = TAMPER_OPS,
) -> list[SampleRecord]:
    """Write a seeded corpus and return its records (also saved as ``manifest.jsonl``).

    Fakes cycle through ``ops``; each is derived from its own source image,
    saved under ``sources/`` and listed in ``pairs.jsonl`` for annotation.
    """
    if n_real < 0 or n_fake < 0:
        raise ContractError("record counts must be non-negative")
    for op in ops:
        if op not in TAMPER_OPS:
            raise ContractError(f"unknown tamper op {op!r}")
    out = Path(out_dir)
    root = np.random.SeedSequence(seed)
    real_seeds, fake_seeds, split_seed = root.spawn(3)
    records: list[SampleRecord] = []
    pairs: list[dict] = []

    real_splits = _assign_splits(n_real, np.random.default_rng(split_seed.spawn(1)[0]))
    for i, ss in enumerate(real_seeds.spawn(n_real)):
        rid = f"real_{i:05d}"
        write_pnm(out / "images" / f"{rid}.ppm", render_face(np.random.default_rng(ss), size))
        records.append(SampleRecord(f"images/{rid}.ppm", "real", None, real_splits[i], REAL_TAG, rid))

    per_op: dict[str, list[int]] = {op: [] for op in ops}
    for i in range(n_fake):
        per_op[ops[i % len(ops)]].append(i)
    fake_split: dict[int, str] = {}
    split_rngs = split_seed.spawn(len(ops) + 1)[1:]
    for op, split_ss in zip(ops, split_rngs):
        idx = per_op[op]
        for j, s in zip(idx, _assign_splits(len(idx), np.random.default_rng(split_ss))):
            fake_split[j] = s

    for i, ss in enumerate(fake_seeds.spawn(n_fake)):
        rng = np.random.default_rng(ss)
        op = ops[i % len(ops)]
        fid = f"fake_{i:05d}"
        real = render_face(rng, size)
        region = random_region(rng, size)
        fake = apply_tamper(rng, real, region, op)
        write_pnm(out / "sources" / f"{fid}_real.ppm", real)
        write_pnm(out / "images" / f"{fid}.ppm", fake)
        write_mask(out / "masks" / f"{fid}.pgm", region)
        records.append(SampleRecord(f"images/{fid}.ppm", "fake", f"masks/{fid}.pgm", fake_split[i], op, fid))
        pairs.append({"id": fid, "real": f"sources/{fid}_real.ppm", "fake": f"images/{fid}.ppm", "mask": f"masks/{fid}.pgm", "tag": op})

    save_manifest(out / "manifest.jsonl", records)
    try:
        with open(out / "pairs.jsonl", "w", encoding="utf-8") as fh:
            for p in pairs:
                fh.write(json.dumps(p, sort_keys=True) + "\n")
    except OSError as exc:
        raise DataIOError(f"cannot write {out / 'pairs.jsonl'}: {exc.strerror}") from exc
    return records


def load_pairs(path: str | os.PathLike) -> list[dict]:
    try:
        with open(path, encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]
    except OSError as exc:
        raise DataIOError(f"cannot read pairs manifest {os.fspath(path)!r}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ContractError(f"malformed pairs manifest {os.fspath(path)!r}: {exc}") from exc
