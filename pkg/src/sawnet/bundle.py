"""CSNW container: the portable on-disk format for weights and features.

Layout (all integers little-endian):

    bytes 0..3    magic "CSNW"
    bytes 4..7    u32 format version, currently 1
    bytes 8..15   u64 header length H
    bytes 16..    H bytes of UTF-8 JSON
    then          payload: raw little-endian float32, no alignment padding

The JSON header carries content-specific fields plus a tensor manifest
``tensors: [{name, shape, dtype: "f32", offset}]`` with offsets relative to
the payload start, and ``payload_bytes`` declaring the payload size. Readers
must ignore header fields they do not understand.

Weight bundles store arch_id, num_classes, preproc_tag, epsilon and a
``folded`` flag; the layer list is reconstructed from arch_id, so only the
canonical architectures (optionally batch-norm folded) are persistable.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError
from .frontend import NUM_MEL_BANDS, PREPROC_TAG, LogMelSpectrogram
from .models import (
    DEFAULT_EPSILON,
    ModelSpec,
    WeightBundle,
    build_arch,
    fold_spec,
)

MAGIC = b"CSNW"
VERSION = 1


def write_container(path, header: dict, tensors: dict[str, np.ndarray]) -> None:
    """Write a CSNW file; tensors are serialized as float32 in name order."""
    manifest = []
    blobs = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(np.asarray(tensors[name], dtype="<f4"))
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": "f32",
                         "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    full_header = dict(header)
    full_header["tensors"] = manifest
    full_header["payload_bytes"] = offset
    encoded = json.dumps(full_header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(encoded)))
        fh.write(encoded)
        for blob in blobs:
            fh.write(blob)


def read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a CSNW file back into (header, name -> float32 array)."""
    data = Path(path).read_bytes()
    if len(data) < 16:
        raise FormatError(f"file too short ({len(data)} bytes) for a CSNW header")
    if data[:4] != MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}")
    (header_len,) = struct.unpack_from("<Q", data, 8)
    if 16 + header_len > len(data):
        raise FormatError("truncated header")
    try:
        header = json.loads(data[16 : 16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"header is not valid JSON: {e}") from e
    if not isinstance(header, dict) or not isinstance(header.get("tensors"), list):
        raise FormatError("header must be a JSON object with a 'tensors' manifest")
    payload = data[16 + header_len :]
    declared = header.get("payload_bytes", len(payload))
    if not isinstance(declared, int) or declared < 0:
        raise FormatError("payload_bytes must be a non-negative integer")
    if len(payload) < declared:
        raise FormatError(f"truncated payload: {len(payload)} of {declared} declared bytes")
    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        if not isinstance(entry, dict):
            raise FormatError("manifest entries must be JSON objects")
        name, shape, dtype, offset = (entry.get(k) for k in ("name", "shape", "dtype", "offset"))
        if not isinstance(name, str) or not isinstance(shape, list) or \
                not all(isinstance(d, int) and d >= 0 for d in shape):
            raise FormatError(f"malformed manifest entry {entry!r}")
        if dtype != "f32":
            raise FormatError(f"tensor {name!r} has unsupported dtype {dtype!r}")
        if not isinstance(offset, int) or offset < 0:
            raise FormatError(f"tensor {name!r} has invalid offset {offset!r}")
        if name in tensors:
            raise ValidationError(f"duplicate tensor name {name!r} in manifest")
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        if offset + 4 * count > declared:
            raise ValidationError(
                f"tensor {name!r} declares shape {shape} but the payload holds "
                f"{max(0, (declared - offset)) // 4} values from its offset"
            )
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
        tensors[name] = arr.reshape(shape).copy()
    return header, tensors


def _canonical_specs(arch_id: str, num_classes: int) -> tuple[ModelSpec, ModelSpec]:
    spec = build_arch(arch_id, num_classes)
    return spec, fold_spec(spec)


def save_bundle(bundle: WeightBundle, path) -> None:
    """Persist a weight bundle; load_bundle(save_bundle(b)) round-trips it."""
    unfolded, folded = _canonical_specs(bundle.spec.arch_id, bundle.spec.num_classes)
    if bundle.spec == unfolded:
        is_folded = False
    elif bundle.spec == folded:
        is_folded = True
    else:
        raise ValidationError(
            f"bundle layers deviate from the canonical {bundle.spec.arch_id} layout; "
            "only canonical (optionally folded) architectures are persistable"
        )
    header = {
        "kind": "weights",
        "arch_id": bundle.spec.arch_id,
        "num_classes": bundle.spec.num_classes,
        "preproc_tag": bundle.preproc_tag,
        "epsilon": bundle.epsilon,
        "folded": is_folded,
    }
    write_container(path, header, bundle.params)


def load_bundle(path, check_preproc: bool = True) -> WeightBundle:
    """Load and validate a weight bundle from a CSNW file.

    With `check_preproc` (the default), a bundle whose preproc_tag does not
    match this build's frontend convention is rejected rather than silently
    producing mismatched features.
    """
    header, tensors = read_container(path)
    arch_id = header.get("arch_id")
    num_classes = header.get("num_classes")
    if not isinstance(arch_id, str) or not isinstance(num_classes, int):
        raise ValidationError("weight container must declare arch_id and num_classes")
    preproc_tag = header.get("preproc_tag", PREPROC_TAG)
    if check_preproc and preproc_tag != PREPROC_TAG:
        raise ValidationError(
            f"bundle expects frontend {preproc_tag!r}, this build provides {PREPROC_TAG!r}"
        )
    epsilon = header.get("epsilon", DEFAULT_EPSILON)
    if not isinstance(epsilon, (int, float)) or not epsilon > 0:
        raise ValidationError(f"invalid epsilon {epsilon!r}")
    spec = build_arch(arch_id, num_classes)
    if header.get("folded", False):
        spec = fold_spec(spec)
    return WeightBundle(spec=spec, params=tensors, preproc_tag=preproc_tag,
                        epsilon=float(epsilon))


def save_spectrogram(path, spec: LogMelSpectrogram) -> None:
    """Persist one log-mel spectrogram as a single-tensor container."""
    header = {
        "kind": "logmel",
        "preproc_tag": PREPROC_TAG,
        "frame_hop_s": spec.frame_hop_s,
        "frame_len_s": spec.frame_len_s,
        "source_id": spec.source_id,
    }
    write_container(path, header, {"logmel": spec.frames})


def load_spectrogram(path) -> LogMelSpectrogram:
    header, tensors = read_container(path)
    if "logmel" not in tensors:
        raise ValidationError("container has no 'logmel' tensor")
    frames = tensors["logmel"]
    if frames.ndim != 2 or frames.shape[1] != NUM_MEL_BANDS:
        raise ValidationError(f"logmel tensor must be [frames, {NUM_MEL_BANDS}], "
                              f"got {frames.shape}")
    return LogMelSpectrogram(
        frames=frames.astype(np.float64),
        frame_hop_s=float(header.get("frame_hop_s", 0.010)),
        frame_len_s=float(header.get("frame_len_s", 0.025)),
        source_id=str(header.get("source_id", "")),
    )
