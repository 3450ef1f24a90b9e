"""RIFF/WAVE decoding: PCM16 and IEEE float32, mono or stereo.

The parser walks the chunk list explicitly so that a malformed container
(DecodeError) is distinguishable from a well-formed file in an encoding we
do not handle (UnsupportedFormat). A small PCM16/float32 writer is included
for fixture generation and round-trip tests.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import DecodeError, UnsupportedFormat
from .frontend import AudioClip

_FORMAT_PCM = 1
_FORMAT_IEEE_FLOAT = 3


def _parse_chunks(data: bytes) -> dict[bytes, bytes]:
    chunks: dict[bytes, bytes] = {}
    offset = 12
    while offset < len(data):
        if offset + 8 > len(data):
            raise DecodeError("truncated chunk header")
        cid = data[offset : offset + 4]
        (size,) = struct.unpack_from("<I", data, offset + 4)
        body_end = offset + 8 + size
        if body_end > len(data):
            raise DecodeError(f"chunk {cid!r} declares {size} bytes past end of file")
        if cid not in chunks:  # keep the first occurrence, skip repeats
            chunks[cid] = data[offset + 8 : body_end]
        offset = body_end + (size & 1)  # chunks are word-aligned
    return chunks


def decode_wav(data: bytes, source_id: str = "") -> AudioClip:
    """Decode WAV bytes to a mono AudioClip.

    Stereo is mixed down by averaging the two channels per frame; PCM16 is
    scaled by 1/32768. The sample rate is preserved from the header.
    """
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise DecodeError("not a RIFF/WAVE container")
    chunks = _parse_chunks(data)
    if b"fmt " not in chunks:
        raise DecodeError("missing fmt chunk")
    if b"data" not in chunks:
        raise DecodeError("missing data chunk")
    fmt = chunks[b"fmt "]
    if len(fmt) < 16:
        raise DecodeError(f"fmt chunk too short ({len(fmt)} bytes)")
    audio_format, channels, sample_rate, _, block_align, bits = struct.unpack_from(
        "<HHIIHH", fmt
    )
    if sample_rate <= 0:
        raise DecodeError("sample rate must be positive")
    if channels not in (1, 2):
        raise UnsupportedFormat(f"{channels} channels not supported (mono/stereo only)")
    if audio_format == _FORMAT_PCM and bits == 16:
        dtype, scale = np.dtype("<i2"), 1.0 / 32768.0
    elif audio_format == _FORMAT_IEEE_FLOAT and bits == 32:
        dtype, scale = np.dtype("<f4"), 1.0
    else:
        raise UnsupportedFormat(f"audio format {audio_format} at {bits} bits not supported")
    frame_size = channels * dtype.itemsize
    if block_align not in (0, frame_size):
        raise DecodeError(f"block align {block_align} inconsistent with {frame_size}-byte frames")
    payload = chunks[b"data"]
    if len(payload) % frame_size != 0:
        raise DecodeError(f"data chunk length {len(payload)} is not a whole number of frames")
    if len(payload) == 0:
        raise DecodeError("data chunk is empty")
    samples = np.frombuffer(payload, dtype=dtype).astype(np.float32) * np.float32(scale)
    if channels == 2:
        samples = samples.reshape(-1, 2).mean(axis=1)
    if not np.all(np.isfinite(samples)):
        raise DecodeError("payload contains non-finite samples")
    return AudioClip(samples=samples, sample_rate=sample_rate, source_id=source_id)


def encode_wav(samples: np.ndarray, sample_rate: int, fmt: str = "pcm16",
               channels: int = 1) -> bytes:
    """Encode samples as WAV bytes (fmt "pcm16" or "float32").

    Multichannel input is interleaved from a [frames, channels] array.
    """
    arr = np.asarray(samples, dtype=np.float64)
    if channels == 1:
        arr = arr.reshape(-1, 1)
    elif arr.ndim != 2 or arr.shape[1] != channels:
        raise ValueError(f"expected [frames, {channels}] samples, got shape {arr.shape}")
    if fmt == "pcm16":
        payload = np.clip(np.round(arr * 32768.0), -32768, 32767).astype("<i2").tobytes()
        audio_format, bits = _FORMAT_PCM, 16
    elif fmt == "float32":
        payload = arr.astype("<f4").tobytes()
        audio_format, bits = _FORMAT_IEEE_FLOAT, 32
    else:
        raise ValueError(f"unknown wav format {fmt!r}")
    block_align = channels * bits // 8
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, audio_format, channels, sample_rate,
        sample_rate * block_align, block_align, bits,
        b"data", len(payload),
    )
    return header + payload
