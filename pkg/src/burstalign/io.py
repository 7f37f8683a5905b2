"""Readers and writers: PNG, PFM, Middlebury .flo, poses CSV, JSON."""

from __future__ import annotations

import csv
import json
import sys
from pathlib import Path

import cv2
import numpy as np

FLO_MAGIC = 202021.25


class FormatError(ValueError):
    """A file does not follow the expected format."""

    def __init__(self, path, field, message):
        super().__init__(f"{path}: {field}: {message}")
        self.path = str(path)
        self.field = field


# -- PNG ---------------------------------------------------------------------

def write_png(path, img: np.ndarray, bits: int = 16) -> None:
    """Write a [0, 1] float image as an 8- or 16-bit PNG (no gamma)."""
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    img = np.asarray(img, dtype=float)
    peak = 255 if bits == 8 else 65535
    q = np.rint(np.clip(img, 0.0, 1.0) * peak).astype(np.uint8 if bits == 8 else np.uint16)
    if q.ndim == 3 and q.shape[2] == 3:
        q = q[..., ::-1]
    if not cv2.imwrite(str(path), np.ascontiguousarray(q)):
        raise OSError(f"could not write {path}")


def read_png(path) -> np.ndarray:
    q = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if q is None:
        raise FormatError(path, "header", "unreadable PNG")
    if q.dtype == np.uint8:
        peak = 255.0
    elif q.dtype == np.uint16:
        peak = 65535.0
    else:
        raise FormatError(path, "bit depth", f"unsupported dtype {q.dtype}")
    if q.ndim == 3:
        if q.shape[2] == 4:
            q = q[..., :3]
        q = q[..., ::-1]
    return q.astype(float) / peak


def write_mask_png(path, mask: np.ndarray) -> None:
    """Boolean mask as a 1-bit PNG (True -> white)."""
    mask = np.asarray(mask, dtype=bool)
    ok = cv2.imwrite(str(path), mask.astype(np.uint8) * 255, [cv2.IMWRITE_PNG_BILEVEL, 1])
    if not ok:
        raise OSError(f"could not write {path}")


def read_mask_png(path) -> np.ndarray:
    q = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if q is None:
        raise FormatError(path, "header", "unreadable PNG")
    return q > 127


# -- PFM ---------------------------------------------------------------------

def write_pfm(path, data: np.ndarray) -> None:
    """Little-endian PFM (scale -1.0). ``(H, W)`` -> 'Pf', ``(H, W, 3)`` -> 'PF'."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        header = "Pf"
    elif data.ndim == 3 and data.shape[2] == 3:
        header = "PF"
    else:
        raise ValueError(f"PFM holds 1 or 3 channels, got shape {data.shape}")
    h, w = data.shape[:2]
    with open(path, "wb") as f:
        f.write(f"{header}\n{w} {h}\n-1.0\n".encode("ascii"))
        # rows are stored bottom to top
        f.write(np.ascontiguousarray(data[::-1]).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header not in (b"Pf", b"PF"):
            raise FormatError(path, "header", f"expected Pf/PF, got {header!r}")
        dims = f.readline().split()
        if len(dims) != 2:
            raise FormatError(path, "dimensions", "expected 'width height'")
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        dtype = "<f4" if scale < 0 else ">f4"
        nch = 3 if header == b"PF" else 1
        raw = np.frombuffer(f.read(), dtype=dtype)
    if raw.size != w * h * nch:
        raise FormatError(path, "data", f"expected {w * h * nch} floats, got {raw.size}")
    shape = (h, w, 3) if nch == 3 else (h, w)
    return raw.reshape(shape)[::-1].astype(np.float32)


# -- Middlebury .flo ----------------------------------------------------------

def write_flo(path, flow: np.ndarray) -> None:
    flow = np.asarray(flow, dtype=np.float32)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ValueError(f"flow must be (H, W, 2), got {flow.shape}")
    h, w = flow.shape[:2]
    with open(path, "wb") as f:
        f.write(np.array([FLO_MAGIC], "<f4").tobytes())
        f.write(np.array([w, h], "<i4").tobytes())
        f.write(np.ascontiguousarray(flow).astype("<f4").tobytes())


def read_flo(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = np.frombuffer(f.read(4), "<f4")
        if magic.size != 1 or magic[0] != np.float32(FLO_MAGIC):
            raise FormatError(path, "magic", "not a Middlebury .flo file")
        w, h = (int(v) for v in np.frombuffer(f.read(8), "<i4"))
        data = np.frombuffer(f.read(), "<f4")
    if data.size != 2 * w * h:
        raise FormatError(path, "data", f"expected {2 * w * h} floats, got {data.size}")
    return data.reshape(h, w, 2).astype(np.float32)


# -- CSV / JSON ----------------------------------------------------------------

POSE_FIELDS = ["frame", "rx", "ry", "rz", "tx", "ty", "tz"]


def write_poses_csv(path, rotlogs, translations) -> None:
    """One row per frame: rotation log (axis-angle) and translation."""
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(POSE_FIELDS)
        for k, (r, t) in enumerate(zip(rotlogs, translations)):
            wr.writerow([k] + [repr(float(v)) for v in r] + [repr(float(v)) for v in t])


def read_poses_csv(path):
    """Returns ``(rotlogs, translations)`` as ``(N, 3)`` arrays."""
    rot, tr = [], []
    with open(path, newline="") as f:
        rd = csv.DictReader(f)
        if rd.fieldnames != POSE_FIELDS:
            raise FormatError(path, "header", f"expected columns {POSE_FIELDS}")
        for row in rd:
            try:
                rot.append([float(row[c]) for c in ("rx", "ry", "rz")])
                tr.append([float(row[c]) for c in ("tx", "ty", "tz")])
            except (TypeError, ValueError) as exc:
                raise FormatError(path, f"frame {row.get('frame')}", str(exc)) from exc
    return np.array(rot).reshape(-1, 3), np.array(tr).reshape(-1, 3)


def write_rows_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(header)
        for row in rows:
            wr.writerow([repr(v) if isinstance(v, float) else v for v in row])


def write_json(path, obj) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def read_json(path):
    try:
        with open(path) as f:
            return json.load(f)
    except json.JSONDecodeError as exc:
        raise FormatError(path, f"line {exc.lineno}", exc.msg) from exc


def eprint_json(obj) -> None:
    print(json.dumps(obj, sort_keys=True), file=sys.stderr)


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
