"""Dataset loaders and writers, synthetic blobs, augmentation and run export."""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import os
import struct
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from .autoencoder import atomic_write

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray
    labels: Optional[np.ndarray]
    image_shape: Tuple[int, int, int]
    name: str = "data"

    def __post_init__(self):
        c, h, w = self.image_shape
        if self.x.ndim != 2 or self.x.shape[1] != c * h * w:
            raise ValueError(f"x has shape {self.x.shape}, image shape {self.image_shape}")
        if self.labels is not None and len(self.labels) != self.x.shape[0]:
            raise ValueError("labels and samples differ in count")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def n_classes(self) -> int:
        return 0 if self.labels is None else int(self.labels.max()) + 1


# -- optdigits ----------------------------------------------------------------

def load_optdigits(path) -> Dataset:
    """UCI optdigits CSV: 64 integer pixels in [0, 16] then a class id in [0, 9]."""
    rows, labels = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            if len(fields) != 65:
                raise ValueError(f"{path}:{lineno}: expected 65 fields, found {len(fields)}")
            try:
                values = [int(f) for f in fields]
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-integer field") from None
            pixels, label = values[:64], values[64]
            if min(pixels) < 0 or max(pixels) > 16:
                raise ValueError(f"{path}:{lineno}: pixel value outside [0, 16]")
            if not 0 <= label <= 9:
                raise ValueError(f"{path}:{lineno}: class id {label} outside [0, 9]")
            rows.append(pixels)
            labels.append(label)
    if not rows:
        raise ValueError(f"{path}: no samples")
    x = np.asarray(rows, dtype=np.float64) / 16.0
    name = os.path.splitext(os.path.basename(os.fspath(path)))[0]
    return Dataset(x, np.asarray(labels, dtype=np.int64), (1, 8, 8), name)


def write_optdigits(path, data: Dataset) -> None:
    pix = np.rint(data.x * 16.0).astype(np.int64)
    buf = io.StringIO()
    for row, label in zip(pix, data.labels):
        buf.write(",".join(map(str, row.tolist())) + f",{int(label)}\n")
    atomic_write(path, buf.getvalue().encode("utf-8"))


# -- IDX ----------------------------------------------------------------------

def _read_header(blob: bytes, expected_magic: int, what: str):
    if len(blob) < 8:
        raise ValueError(f"{what} file is truncated (no header)")
    (magic,) = struct.unpack_from(">I", blob, 0)
    if magic != expected_magic:
        raise ValueError(
            f"{what} file has magic 0x{magic:08x}, expected 0x{expected_magic:08x}"
        )
    ndim = magic & 0xFF
    if len(blob) < 4 + 4 * ndim:
        raise ValueError(f"{what} file is truncated (short header)")
    dims = struct.unpack_from(f">{ndim}I", blob, 4)
    payload = blob[4 + 4 * ndim:]
    count = int(np.prod(dims))
    if len(payload) < count:
        raise ValueError(f"{what} file is truncated: {len(payload)} of {count} data bytes")
    return dims, np.frombuffer(payload, dtype=np.uint8, count=count)


def load_idx(images_path, labels_path=None) -> Dataset:
    """Big-endian IDX unsigned-byte images (and optional labels), scaled by 1/255."""
    with open(images_path, "rb") as fh:
        dims, pixels = _read_header(fh.read(), IDX_IMAGES_MAGIC, "image")
    n, h, w = dims
    x = pixels.reshape(n, h * w).astype(np.float64) / 255.0
    labels = None
    if labels_path is not None:
        with open(labels_path, "rb") as fh:
            (count,), raw = _read_header(fh.read(), IDX_LABELS_MAGIC, "label")
        if count != n:
            raise ValueError(f"{n} images but {count} labels")
        labels = raw.astype(np.int64)
    name = os.path.basename(os.fspath(images_path))
    return Dataset(x, labels, (1, h, w), name)


def write_idx(images_path, data: Dataset, labels_path=None) -> None:
    c, h, w = data.image_shape
    if c != 1:
        raise ValueError("IDX writer handles single-channel images only")
    pix = np.rint(data.x * 255.0).astype(np.uint8)
    atomic_write(images_path, struct.pack(">IIII", IDX_IMAGES_MAGIC, data.n, h, w) + pix.tobytes())
    if labels_path is not None:
        raw = np.asarray(data.labels, dtype=np.uint8)
        atomic_write(labels_path, struct.pack(">II", IDX_LABELS_MAGIC, data.n) + raw.tobytes())


# -- feature CSV (header row, optional trailing label column) -----------------

def write_feature_csv(path, data: Dataset) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = [f"f{j}" for j in range(data.x.shape[1])]
    if data.labels is not None:
        header.append("label")
    writer.writerow(header)
    for i in range(data.n):
        row = [repr(float(v)) for v in data.x[i]]
        if data.labels is not None:
            row.append(int(data.labels[i]))
        writer.writerow(row)
    atomic_write(path, buf.getvalue().encode("utf-8"))


def load_feature_csv(path) -> Dataset:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        has_label = header[-1] == "label"
        rows = [r for r in reader if r]
    arr = np.asarray(rows, dtype=np.float64)
    x = arr[:, :-1] if has_label else arr
    labels = arr[:, -1].astype(np.int64) if has_label else None
    if x.min() < 0.0 or x.max() > 1.0:
        raise ValueError(f"{path}: feature values must lie in [0, 1]")
    name = os.path.splitext(os.path.basename(os.fspath(path)))[0]
    return Dataset(x, labels, (1, 1, x.shape[1]), name)


def load_dataset(path, labels_path=None) -> Dataset:
    """Dispatch on file contents: IDX magic, a header row, or optdigits."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if len(head) == 4 and struct.unpack(">I", head)[0] == IDX_IMAGES_MAGIC:
        return load_idx(path, labels_path)
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
    if first.strip().startswith("f0"):
        return load_feature_csv(path)
    return load_optdigits(path)


# -- synthetic data -----------------------------------------------------------

def _blob_centers(K, dim, separation, rng):
    if K <= dim:
        # scaled simplex corners: every pair exactly `separation` apart
        centers = np.zeros((K, dim))
        centers[np.arange(K), np.arange(K)] = separation / math.sqrt(2.0)
        rot, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        return centers @ rot
    side = separation * K ** (1.0 / dim) * 2.0
    for _ in range(10000):
        centers = rng.uniform(0.0, side, size=(K, dim))
        d = np.sqrt(((centers[:, None] - centers[None]) ** 2).sum(-1))
        if d[np.triu_indices(K, 1)].min() >= separation:
            return centers
    raise RuntimeError("could not place blob centers; increase dim or reduce K")


def synth_blobs(n: int, K: int, dim: int, separation: float, sigma: float,
                rng: np.random.Generator) -> Dataset:
    """K isotropic Gaussian clusters with pairwise center distance >= separation.

    Sizes differ by at most one. Values are rescaled jointly (one global min
    and max) to [0, 1], which keeps the clusters isotropic.
    """
    if not n >= K >= 1:
        raise ValueError(f"need n >= K >= 1, got n={n}, K={K}")
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    centers = _blob_centers(K, dim, separation, rng)
    labels = np.repeat(np.arange(K), [n // K + (k < n % K) for k in range(K)])
    labels = labels[rng.permutation(n)]
    x = centers[labels] + sigma * rng.standard_normal((n, dim))
    lo, hi = x.min(), x.max()
    x = (x - lo) / (hi - lo) if hi > lo else np.zeros_like(x)
    return Dataset(x, labels.astype(np.int64), (1, 1, dim), f"blobs-{K}x{dim}")


# -- augmentation -------------------------------------------------------------

def rotate_image(img: np.ndarray, degrees: float) -> np.ndarray:
    """Nearest-neighbour rotation about the image center, zero fill."""
    h, w = img.shape
    theta = math.radians(degrees)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w]
    # inverse map: source pixel for each destination pixel
    sy = math.cos(theta) * (yy - cy) - math.sin(theta) * (xx - cx) + cy
    sx = math.sin(theta) * (yy - cy) + math.cos(theta) * (xx - cx) + cx
    sy, sx = np.rint(sy).astype(int), np.rint(sx).astype(int)
    ok = (sy >= 0) & (sy < h) & (sx >= 0) & (sx < w)
    out = np.zeros_like(img)
    out[ok] = img[sy[ok], sx[ok]]
    return out


def shift_image(img: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Translate by ``dx`` columns and ``dy`` rows, zero fill."""
    h, w = img.shape
    out = np.zeros_like(img)
    if abs(dx) >= w or abs(dy) >= h:
        return out
    src = img[max(0, -dy):h - max(0, dy), max(0, -dx):w - max(0, dx)]
    out[max(0, dy):max(0, dy) + src.shape[0], max(0, dx):max(0, dx) + src.shape[1]] = src
    return out


def augment(batch, image_shape, rng: np.random.Generator,
            max_rot_deg: float = 10.0, max_shift_frac: float = 0.1) -> np.ndarray:
    """Random rotation in [-max_rot_deg, max_rot_deg] and integer shift of up to
    ``floor(max_shift_frac * side)`` pixels per axis, drawn per image."""
    c, h, w = image_shape
    if h < 2 or w < 2:
        raise ValueError(f"augmentation needs 2-D images, got shape {image_shape}")
    batch = np.asarray(batch, dtype=np.float64)
    imgs = batch.reshape(-1, c, h, w)
    out = np.empty_like(imgs)
    max_dy, max_dx = int(h * max_shift_frac), int(w * max_shift_frac)
    for i in range(imgs.shape[0]):
        angle = rng.uniform(-max_rot_deg, max_rot_deg) if max_rot_deg > 0 else 0.0
        dx = int(rng.integers(-max_dx, max_dx + 1))
        dy = int(rng.integers(-max_dy, max_dy + 1))
        for ch in range(c):
            img = imgs[i, ch]
            if angle:
                img = rotate_image(img, angle)
            out[i, ch] = shift_image(img, dx, dy)
    return out.reshape(batch.shape)


# -- run export ---------------------------------------------------------------

def _record_dict(rec) -> dict:
    d = dataclasses.asdict(rec) if dataclasses.is_dataclass(rec) else dict(rec)
    return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in d.items()}


def metrics_jsonl(history: Iterable) -> str:
    return "".join(json.dumps(_record_dict(r)) + "\n" for r in history)


def export_run(history: Sequence, embeddings, path_prefix, pred_labels,
               true_labels=None) -> Tuple[str, str]:
    """Write ``<prefix>.metrics.jsonl`` and ``<prefix>.embeddings.csv``."""
    if not history:
        raise ValueError("nothing to export: history is empty")
    prefix = os.fspath(path_prefix)
    metrics_path = prefix + ".metrics.jsonl"
    emb_path = prefix + ".embeddings.csv"
    atomic_write(metrics_path, metrics_jsonl(history).encode("utf-8"))

    Z = np.asarray(embeddings, dtype=np.float64)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = [f"z{j}" for j in range(Z.shape[1])] + ["pred"]
    if true_labels is not None:
        header.append("true")
    writer.writerow(header)
    for i in range(Z.shape[0]):
        row = [repr(float(v)) for v in Z[i]] + [int(pred_labels[i])]
        if true_labels is not None:
            row.append(int(true_labels[i]))
        writer.writerow(row)
    atomic_write(emb_path, buf.getvalue().encode("utf-8"))
    return metrics_path, emb_path


def load_embeddings_csv(path):
    """Inverse of the embeddings export: (Z, pred, true-or-None)."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if r]
    has_true = header[-1] == "true"
    d = len(header) - (2 if has_true else 1)
    arr = np.asarray(rows, dtype=np.float64)
    true = arr[:, d + 1].astype(np.int64) if has_true else None
    return arr[:, :d], arr[:, d].astype(np.int64), true
