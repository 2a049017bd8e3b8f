"""GTPK tensor-bundle I/O and dataset validation.

A GTPK file carries everything needed to score a classifier's predictions
without the model itself: penultimate features, final-layer weights and
bias, ground-truth labels, and optionally the logits the model produced.

Byte layout (all integers little-endian):

    bytes 0-3   magic "GTPK"
    bytes 4-7   version u32 (currently 1)
    bytes 8-11  chunk count u32
    chunk       name_len u32 | name UTF-8 | dtype u8 | ndim u8
                | ndim x u64 dims | payload, row-major
    dtype codes 1 = f32, 2 = f64, 3 = i64, 4 = UTF-8 blob (dims = [byte len])

Required chunks: "features" [M,d] f32, "weights" [d,N] f32, "bias" [N] f32,
"labels" [M] i64.  Optional: "logits" [M,N] f32, "meta" blob of key=value
lines.  Unknown chunk names are skipped; their names are recorded in
meta["unknown_chunks"] so newer writers stay readable.
"""

from __future__ import annotations

import dataclasses
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "LastLayerBundle",
    "BundleError",
    "BadMagic",
    "UnsupportedVersion",
    "Truncated",
    "BundleFormatError",
    "InvalidBundle",
    "read_bundle",
    "write_bundle",
    "validate_bundle",
    "consistency_warnings",
    "ensure_logits",
]

MAGIC = b"GTPK"
VERSION = 1

_DT_F32, _DT_F64, _DT_I64, _DT_BLOB = 1, 2, 3, 4
_ELEM_SIZE = {_DT_F32: 4, _DT_F64: 8, _DT_I64: 8, _DT_BLOB: 1}
_NP_DTYPE = {_DT_F32: "<f4", _DT_F64: "<f8", _DT_I64: "<i8"}


class BundleError(Exception):
    """Base for every GTPK read/write failure."""


class BadMagic(BundleError):
    pass


class UnsupportedVersion(BundleError):
    pass


class Truncated(BundleError):
    pass


class BundleFormatError(BundleError):
    """Structurally broken file: bad dtype, shape mismatch, non-finite data."""


class InvalidBundle(BundleError):
    """Bundle fails its invariants; carries the violation list."""

    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


@dataclass(frozen=True)
class LastLayerBundle:
    """Per-sample features plus the final linear layer of the source model.

    Shapes: features M x d, weights d x N, bias N, labels M, logits M x N
    (optional).  Arrays are float64/int64 in memory regardless of storage.
    """

    features: np.ndarray
    weights: np.ndarray
    bias: np.ndarray
    labels: np.ndarray
    logits: np.ndarray | None = None
    meta: dict[str, str] = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_classes(self) -> int:
        return self.weights.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[0]


def make_bundle(features, weights, bias, labels, logits=None, meta=None) -> LastLayerBundle:
    """Build a bundle from array-likes, promoting to the in-memory dtypes."""
    return LastLayerBundle(
        features=np.ascontiguousarray(features, dtype=np.float64),
        weights=np.ascontiguousarray(weights, dtype=np.float64),
        bias=np.ascontiguousarray(bias, dtype=np.float64),
        labels=np.ascontiguousarray(labels, dtype=np.int64),
        logits=None if logits is None else np.ascontiguousarray(logits, dtype=np.float64),
        meta=dict(meta) if meta else {},
    )


def validate_bundle(bundle: LastLayerBundle) -> list[str]:
    """Report every invariant violation; an empty list means valid."""
    v: list[str] = []
    if bundle.features.ndim != 2:
        v.append(f"features must be 2-D, got shape {bundle.features.shape}")
        return v  # downstream shape checks are meaningless
    if bundle.weights.ndim != 2:
        v.append(f"weights must be 2-D, got shape {bundle.weights.shape}")
        return v
    m, d = bundle.features.shape
    dw, n = bundle.weights.shape
    if m < 1:
        v.append("bundle must contain at least one sample")
    if d < 1 or n < 1:
        v.append(f"feature dim and class count must be >= 1, got d={d}, N={n}")
    if dw != d:
        v.append(f"weights rows ({dw}) != feature dim ({d})")
    if bundle.bias.shape != (n,):
        v.append(f"bias shape {bundle.bias.shape} != ({n},)")
    if bundle.labels.shape != (m,):
        v.append(f"labels shape {bundle.labels.shape} != ({m},)")
    else:
        bad = np.nonzero((bundle.labels < 0) | (bundle.labels >= n))[0]
        for i in bad:
            v.append(f"labels[{i}] = {bundle.labels[i]} outside [0, {n})")
    if bundle.logits is not None and bundle.logits.shape != (m, n):
        v.append(f"logits shape {bundle.logits.shape} != ({m}, {n})")
    for name in ("features", "weights", "bias", "logits"):
        arr = getattr(bundle, name)
        if arr is None:
            continue
        if not np.all(np.isfinite(arr)):
            where = np.argwhere(~np.isfinite(arr))[0]
            v.append(f"{name} has a non-finite entry at {tuple(int(i) for i in where)}")
    return v


def consistency_warnings(bundle: LastLayerBundle, tol: float = 1e-3) -> list[str]:
    """Warn (never error) when stored logits drift from recomputed ones.

    32-bit exports accumulate rounding, so anything within `tol` is normal.
    """
    if bundle.logits is None:
        return []
    recomputed = bundle.features @ bundle.weights + bundle.bias
    worst = float(np.max(np.abs(bundle.logits - recomputed)))
    if worst > tol:
        return [f"stored logits deviate from recomputed by up to {worst:.3e} (> {tol:.0e})"]
    return []


def ensure_logits(bundle: LastLayerBundle) -> LastLayerBundle:
    """Fill in logits = features @ weights + bias when absent; no-op otherwise."""
    if bundle.logits is not None:
        return bundle
    logits = bundle.features @ bundle.weights + bundle.bias
    return dataclasses.replace(bundle, logits=logits)


def _encode_meta(meta: dict[str, str]) -> bytes:
    lines = []
    for key in sorted(meta):  # sorted so identical bundles serialize identically
        value = meta[key]
        if "=" in key or "\n" in key or "\n" in str(value):
            raise ValueError(f"meta entry {key!r} contains '=' or newline")
        lines.append(f"{key}={value}")
    return "\n".join(lines).encode("utf-8")


def _decode_meta(blob: bytes) -> dict[str, str]:
    meta: dict[str, str] = {}
    for line in blob.decode("utf-8").splitlines():
        if "=" in line:
            key, _, value = line.partition("=")
            meta[key] = value
    return meta


def _chunk_bytes(name: str, dtype: int, dims: tuple[int, ...], payload: bytes) -> bytes:
    name_b = name.encode("utf-8")
    head = struct.pack("<I", len(name_b)) + name_b + struct.pack("<BB", dtype, len(dims))
    head += b"".join(struct.pack("<Q", dim) for dim in dims)
    return head + payload


def write_bundle(bundle: LastLayerBundle, path) -> None:
    """Write a validated bundle atomically (temp file + rename)."""
    violations = validate_bundle(bundle)
    if violations:
        raise InvalidBundle(violations)

    chunks = [
        _chunk_bytes("features", _DT_F32, bundle.features.shape,
                     bundle.features.astype("<f4").tobytes()),
        _chunk_bytes("weights", _DT_F32, bundle.weights.shape,
                     bundle.weights.astype("<f4").tobytes()),
        _chunk_bytes("bias", _DT_F32, bundle.bias.shape,
                     bundle.bias.astype("<f4").tobytes()),
        _chunk_bytes("labels", _DT_I64, bundle.labels.shape,
                     bundle.labels.astype("<i8").tobytes()),
    ]
    if bundle.logits is not None:
        chunks.append(_chunk_bytes("logits", _DT_F32, bundle.logits.shape,
                                   bundle.logits.astype("<f4").tobytes()))
    if bundle.meta:
        blob = _encode_meta(bundle.meta)
        chunks.append(_chunk_bytes("meta", _DT_BLOB, (len(blob),), blob))

    body = MAGIC + struct.pack("<II", VERSION, len(chunks)) + b"".join(chunks)

    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".gtpk-", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(body)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise Truncated(f"needed {n} bytes at offset {self.pos}, file has {len(self.data)}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u8(self) -> int:
        return self.take(1)[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]


def read_bundle(path) -> LastLayerBundle:
    """Parse a GTPK file into a validated bundle.

    Unknown chunks are skipped, their names recorded in
    meta["unknown_chunks"].  Raises BadMagic, UnsupportedVersion, Truncated,
    or BundleFormatError on broken files; InvalidBundle if the parsed data
    violates the bundle invariants.
    """
    with open(os.fspath(path), "rb") as f:
        data = f.read()
    r = _Reader(data)

    if r.take(4) != MAGIC:
        raise BadMagic(f"not a GTPK file: magic {data[:4]!r}")
    version = r.u32()
    if version != VERSION:
        raise UnsupportedVersion(f"GTPK version {version} not supported (expected {VERSION})")
    n_chunks = r.u32()

    arrays: dict[str, np.ndarray] = {}
    meta: dict[str, str] = {}
    unknown: list[str] = []
    for _ in range(n_chunks):
        name = r.take(r.u32()).decode("utf-8")
        dtype = r.u8()
        ndim = r.u8()
        dims = tuple(r.u64() for _ in range(ndim))
        if dtype not in _ELEM_SIZE:
            raise BundleFormatError(f"chunk {name!r} has unknown dtype code {dtype}")
        count = 1
        for dim in dims:
            count *= dim
        payload = r.take(count * _ELEM_SIZE[dtype])

        if name == "meta":
            if dtype != _DT_BLOB:
                raise BundleFormatError("meta chunk must be a UTF-8 blob")
            meta.update(_decode_meta(payload))
        elif name in ("features", "weights", "bias", "labels", "logits"):
            if name == "labels":
                if dtype != _DT_I64:
                    raise BundleFormatError(f"labels chunk must be i64, got dtype code {dtype}")
            elif dtype not in (_DT_F32, _DT_F64):
                raise BundleFormatError(f"chunk {name!r} must be f32/f64, got dtype code {dtype}")
            arr = np.frombuffer(payload, dtype=_NP_DTYPE[dtype]).reshape(dims)
            arrays[name] = arr
        else:
            unknown.append(name)

    for required in ("features", "weights", "bias", "labels"):
        if required not in arrays:
            raise BundleFormatError(f"required chunk {required!r} missing")
    for name, want in (("features", 2), ("weights", 2), ("bias", 1), ("labels", 1), ("logits", 2)):
        if name in arrays and arrays[name].ndim != want:
            raise BundleFormatError(f"chunk {name!r} must be {want}-D, got {arrays[name].ndim}-D")

    if unknown:
        meta["unknown_chunks"] = ",".join(unknown)

    bundle = make_bundle(
        features=arrays["features"],
        weights=arrays["weights"],
        bias=arrays["bias"],
        labels=arrays["labels"],
        logits=arrays.get("logits"),
        meta=meta,
    )
    violations = validate_bundle(bundle)
    if violations:
        raise InvalidBundle(violations)
    return bundle
