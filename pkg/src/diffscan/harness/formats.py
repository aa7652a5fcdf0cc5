"""On-disk formats: DSTLMDL1 model files, P2/P3 trigger images, and structured-text documents."""

from __future__ import annotations

import json
import math
import struct
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

MAGIC = b"DSTLMDL1"
_LEN = struct.Struct("<I")


class ModelFormatError(ValueError):
    pass


class BadMagicError(ModelFormatError):
    pass


class TruncatedError(ModelFormatError):
    pass


class HeaderMismatchError(ModelFormatError):
    pass


def render(doc) -> str:
    """Deterministic structured text: sorted keys, fixed indentation, trailing newline."""
    return json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def parse(text: str):
    return json.loads(text)


def write_doc(path, doc) -> None:
    Path(path).write_text(render(doc), encoding="utf-8")


def read_doc(path):
    return parse(Path(path).read_text(encoding="utf-8"))


def encode_model(header: dict, arrays: Sequence[np.ndarray]) -> bytes:
    """``MAGIC | u32 header length | UTF-8 header | float32 LE weights`` in declaration order."""
    header = dict(header)
    header["shapes"] = [list(np.shape(a)) for a in arrays]
    raw = render(header).encode("utf-8")
    body = b"".join(np.asarray(a, dtype="<f4").tobytes(order="C") for a in arrays)
    return MAGIC + _LEN.pack(len(raw)) + raw + body


def decode_model(blob: bytes) -> tuple[dict, list[np.ndarray]]:
    if len(blob) < len(MAGIC):
        raise TruncatedError(f"truncated model file: {len(blob)} bytes, shorter than the magic")
    if blob[: len(MAGIC)] != MAGIC:
        raise BadMagicError(f"bad magic {blob[:len(MAGIC)]!r}, expected {MAGIC!r}")
    pos = len(MAGIC)
    if len(blob) < pos + _LEN.size:
        raise TruncatedError("truncated model file: missing header length")
    (n,) = _LEN.unpack_from(blob, pos)
    pos += _LEN.size
    if len(blob) < pos + n:
        raise TruncatedError(f"truncated model file: header needs {n} bytes, {len(blob) - pos} available")
    try:
        header = parse(blob[pos : pos + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise HeaderMismatchError(f"unreadable header: {exc}") from exc
    pos += n
    shapes = header.get("shapes")
    if not isinstance(shapes, list):
        raise HeaderMismatchError("header has no shape list")
    need = sum(4 * int(np.prod(s)) for s in shapes)
    have = len(blob) - pos
    if have < need:
        raise TruncatedError(f"truncated payload: {need} weight bytes declared, {have} present")
    if have > need:
        raise HeaderMismatchError(f"payload has {have - need} bytes beyond the declared shapes")
    arrays = []
    for s in shapes:
        size = int(np.prod(s))
        arr = np.frombuffer(blob, dtype="<f4", count=size, offset=pos).astype(np.float64).reshape(s)
        arrays.append(arr)
        pos += 4 * size
    return header, arrays


def _expect_shapes(header: dict, arrays, expected: Sequence[tuple[int, ...]]) -> None:
    got = [tuple(a.shape) for a in arrays]
    want = [tuple(s) for s in expected]
    if got != want:
        raise HeaderMismatchError(f"architecture declares shapes {want} but file holds {got}")


def save_model(model, path, metadata: dict | None = None) -> None:
    """Write a classifier, detector or learned denoiser."""
    from ..classifier import Classifier
    from ..detect import Detector
    from ..diffusion import LearnedDenoiser

    if isinstance(model, Classifier):
        header = {"kind": "classifier", "arch": model.arch.to_dict()}
    elif isinstance(model, Detector):
        header = {"kind": "detector", "arch": model.arch.to_dict()}
    elif isinstance(model, LearnedDenoiser):
        header = {"kind": "denoiser", "arch": {"shape": list(model.shape), "hidden": list(model.hidden),
                                               "emb_dim": model.emb_dim,
                                               "betas": model.schedule.beta[1:].tolist()}}
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    header["metadata"] = dict(metadata or {})
    Path(path).write_bytes(encode_model(header, model.params))


def load_model(path):
    """Inverse of :func:`save_model`; returns the model (metadata via :func:`load_model_with_metadata`)."""
    return load_model_with_metadata(path)[0]


def load_model_with_metadata(path):
    from ..classifier import ArchSpec, Classifier
    from ..detect import Detector, DetectorArch
    from ..diffusion import LearnedDenoiser, NoiseSchedule

    header, arrays = decode_model(Path(path).read_bytes())
    kind = header.get("kind")
    try:
        if kind == "classifier":
            arch = ArchSpec.from_dict(header["arch"])
            _expect_shapes(header, arrays, [p.shape for p in arch.network().param_specs])
            model = Classifier(arch, arrays)
        elif kind == "detector":
            arch = DetectorArch.from_dict(header["arch"])
            _expect_shapes(header, arrays, arch.param_shapes())
            model = Detector(arch, arrays)
        elif kind == "denoiser":
            a = header["arch"]
            sched = NoiseSchedule(a["betas"])
            net = LearnedDenoiser.network(tuple(a["shape"]), tuple(a["hidden"]), a["emb_dim"])
            _expect_shapes(header, arrays, [p.shape for p in net.param_specs])
            model = LearnedDenoiser(a["shape"], sched, arrays, a["hidden"], a["emb_dim"])
        else:
            raise HeaderMismatchError(f"unknown model kind {kind!r}")
    except (KeyError, TypeError) as exc:
        raise HeaderMismatchError(f"incomplete header: {exc}") from exc
    return model, header.get("metadata", {})


def pixel_levels(pattern: np.ndarray) -> np.ndarray:
    """Map [-1, 1] linearly onto 0..255 with round-half-up (0.0 -> 128).

    Evaluated in exact rational arithmetic: in floats, values a hair below a
    half-level would round up.
    """
    p = np.clip(np.asarray(pattern, dtype=np.float64), -1.0, 1.0)
    half, scale = Fraction(1, 2), Fraction(255, 2)
    levels = [math.floor((Fraction(float(v)) + 1) * scale + half) for v in p.ravel()]
    return np.array(levels, dtype=np.int64).reshape(p.shape)


def export_trigger(pattern: np.ndarray, path) -> None:
    """ASCII PGM (P2) for 1-channel ``[1, H, W]`` patterns, PPM (P3) for 3-channel ones."""
    pattern = np.asarray(pattern)
    if pattern.ndim != 3 or pattern.shape[0] not in (1, 3):
        raise ValueError(f"only 1- or 3-channel [C,H,W] patterns can be exported, got shape {pattern.shape}")
    c, h, w = pattern.shape
    levels = pixel_levels(pattern)
    magic = "P2" if c == 1 else "P3"
    rows = levels.transpose(1, 2, 0).reshape(h, w * c)
    lines = [magic, f"{w} {h}", "255"] + [" ".join(str(v) for v in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_pnm(path) -> np.ndarray:
    """Read back an ASCII P2/P3 file as ``[C, H, W]`` integer levels."""
    tokens = Path(path).read_text(encoding="ascii").split()
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic not in ("P2", "P3") or maxval != 255:
        raise ValueError(f"unsupported image header {magic} maxval={maxval}")
    c = 1 if magic == "P2" else 3
    vals = np.array([int(t) for t in tokens[4:]], dtype=np.int64)
    if vals.size != c * h * w:
        raise ValueError(f"expected {c * h * w} samples, found {vals.size}")
    return vals.reshape(h, w, c).transpose(2, 0, 1)
