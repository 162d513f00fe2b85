"""WAV input/output, band-limited resampling and fixed-length slicing.

All waveforms are mono float64 arrays in [-1, 1]. The canonical corpus rate
is 44.1 kHz and the canonical segment length is 4 seconds.
"""
from __future__ import annotations

import struct
import warnings
import wave
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import (
    ClippedInput,
    EmptyAudio,
    InvalidRate,
    IoFailure,
    MalformedContainer,
    UnsupportedEncoding,
)

CANONICAL_RATE = 44100
CANONICAL_DURATION_S = 4.0

_WAVE_FORMAT_PCM = 0x0001
_WAVE_FORMAT_IEEE_FLOAT = 0x0003
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE

# Kaiser-windowed sinc interpolation kernel
RESAMPLE_BETA = 8.0
RESAMPLE_ZERO_CROSSINGS = 32


class TooShortWarning(UserWarning):
    """Input was shorter than one slicing window; nothing was produced."""


@dataclass(frozen=True, eq=False)
class AudioSegment:
    samples: np.ndarray
    sample_rate: int
    class_id: int = -1
    class_name: str = ""
    source_file: str = ""
    slice_start_s: float = 0.0
    slice_end_s: float | None = None

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate

    @property
    def segment_id(self) -> str:
        """Stable reference used for ordering and metadata."""
        return f"{self.source_file}@{self.slice_start_s:.6f}"

    def with_samples(self, samples: np.ndarray, sample_rate: int | None = None) -> "AudioSegment":
        rate = self.sample_rate if sample_rate is None else sample_rate
        return replace(self, samples=samples, sample_rate=rate,
                       slice_end_s=self.slice_start_s + len(samples) / rate)


def _iter_chunks(data: bytes):
    pos = 12
    while pos + 8 <= len(data):
        cid, size = struct.unpack_from("<4sI", data, pos)
        body = data[pos + 8: pos + 8 + size]
        yield cid, body
        pos += 8 + size + (size & 1)


def _decode(body: bytes, fmt_tag: int, bits: int, channels: int) -> np.ndarray:
    frame_bytes = channels * bits // 8
    n_frames = len(body) // frame_bytes
    body = body[: n_frames * frame_bytes]
    if fmt_tag == _WAVE_FORMAT_IEEE_FLOAT:
        if bits == 32:
            x = np.frombuffer(body, dtype="<f4").astype(np.float64)
        elif bits == 64:
            x = np.frombuffer(body, dtype="<f8").astype(np.float64)
        else:
            raise UnsupportedEncoding(f"{bits}-bit float samples")
    elif bits == 8:
        x = (np.frombuffer(body, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    elif bits == 16:
        x = np.frombuffer(body, dtype="<i2").astype(np.float64) / 2.0**15
    elif bits == 24:
        raw = np.frombuffer(body, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        ints = raw[:, 0] | (raw[:, 1] << 8) | (raw[:, 2] << 16)
        ints = np.where(ints >= 1 << 23, ints - (1 << 24), ints)
        x = ints.astype(np.float64) / 2.0**23
    elif bits == 32:
        x = np.frombuffer(body, dtype="<i4").astype(np.float64) / 2.0**31
    else:
        raise UnsupportedEncoding(f"{bits}-bit integer PCM")
    return x.reshape(n_frames, channels)


def _read_container(path: Path):
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedContainer(f"{path}: not a RIFF/WAVE file")

    fmt = None
    body = None
    for cid, chunk in _iter_chunks(data):
        if cid == b"fmt " and fmt is None:
            if len(chunk) < 16:
                raise MalformedContainer(f"{path}: truncated fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", chunk, 0)
            if fmt[0] == _WAVE_FORMAT_EXTENSIBLE:
                if len(chunk) < 26:
                    raise MalformedContainer(f"{path}: truncated extensible fmt chunk")
                sub = struct.unpack_from("<H", chunk, 24)[0]
                fmt = (sub,) + fmt[1:]
        elif cid == b"data" and body is None:
            body = chunk
    if fmt is None or body is None:
        raise MalformedContainer(f"{path}: missing fmt or data chunk")

    fmt_tag, channels, rate, _, _, bits = fmt
    if fmt_tag not in (_WAVE_FORMAT_PCM, _WAVE_FORMAT_IEEE_FLOAT):
        raise UnsupportedEncoding(f"{path}: format tag 0x{fmt_tag:04x}")
    if channels not in (1, 2):
        raise UnsupportedEncoding(f"{path}: {channels} channels")
    if rate <= 0:
        raise MalformedContainer(f"{path}: sample rate {rate}")
    if bits <= 0 or bits % 8:
        raise UnsupportedEncoding(f"{path}: {bits} bits per sample")
    return fmt_tag, channels, rate, bits, body


def wav_info(path) -> tuple[int, int]:
    """(frame count, sample rate) without decoding samples."""
    _, channels, rate, bits, body = _read_container(Path(path))
    return len(body) // (channels * bits // 8), int(rate)


def load_wav(path) -> AudioSegment:
    """Read a PCM or float WAV file as a mono segment at its native rate.

    Stereo input is downmixed by averaging the two channels. Integer PCM is
    divided by the magnitude of its most negative code, so a 16-bit value of
    16384 loads as 0.5.
    """
    path = Path(path)
    fmt_tag, channels, rate, bits, body = _read_container(path)
    frames = _decode(body, fmt_tag, bits, channels)
    if frames.shape[0] == 0:
        raise EmptyAudio(f"{path}: zero frames")
    mono = frames.mean(axis=1) if channels == 2 else frames[:, 0].copy()
    return AudioSegment(mono, int(rate), source_file=path.name)


def save_wav(seg: AudioSegment, path) -> None:
    """Write a segment as 16-bit mono PCM; refuses samples outside [-1, 1]."""
    x = np.asarray(seg.samples, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ClippedInput("non-finite samples")
    if x.size and np.max(np.abs(x)) > 1.0:
        raise ClippedInput(f"peak {np.max(np.abs(x)):.4f} exceeds 1.0")
    codes = np.clip(np.round(x * 2.0**15), -32768, 32767).astype("<i2")
    try:
        with wave.open(str(path), "wb") as w:
            w.setnchannels(1)
            w.setsampwidth(2)
            w.setframerate(int(seg.sample_rate))
            w.writeframes(codes.tobytes())
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def _kaiser(x: np.ndarray, beta: float) -> np.ndarray:
    inside = np.clip(1.0 - x * x, 0.0, None)
    return np.i0(beta * np.sqrt(inside)) / np.i0(beta) * (np.abs(x) <= 1.0)


def resample(seg: AudioSegment, target_rate: int, chunk: int = 8192) -> AudioSegment:
    """Kaiser-windowed sinc resampling (beta 8, 32 zero crossings per side).

    The cutoff tracks the lower of the two Nyquist rates so downsampling is
    anti-aliased. Each output tap set is normalized to unit DC gain.
    """
    src = seg.sample_rate
    if src <= 0 or target_rate <= 0:
        raise InvalidRate(f"rates must be positive (got {src} -> {target_rate})")
    if src == target_rate:
        return seg
    x = np.asarray(seg.samples, dtype=np.float64)
    n_in = len(x)
    n_out = int(round(n_in * target_rate / src))
    cutoff = min(1.0, target_rate / src)
    half = RESAMPLE_ZERO_CROSSINGS / cutoff
    reach = int(np.ceil(half))
    offsets = np.arange(-reach + 1, reach + 1)

    out = np.empty(n_out)
    step = src / target_rate
    for lo in range(0, n_out, chunk):
        t = np.arange(lo, min(lo + chunk, n_out)) * step
        base = np.floor(t).astype(np.int64)
        idx = base[:, None] + offsets[None, :]
        dist = t[:, None] - idx
        h = cutoff * np.sinc(cutoff * dist) * _kaiser(dist / half, RESAMPLE_BETA)
        h /= h.sum(axis=1, keepdims=True)
        valid = (idx >= 0) & (idx < n_in)
        vals = np.where(valid, x[np.clip(idx, 0, n_in - 1)], 0.0)
        out[lo: lo + len(t)] = np.sum(h * vals, axis=1)
    return seg.with_samples(out, target_rate)


def slice_segments(raw: AudioSegment, duration_s: float = CANONICAL_DURATION_S) -> list[AudioSegment]:
    """Cut consecutive non-overlapping windows; the trailing remainder is dropped."""
    if duration_s <= 0:
        raise ValueError("duration_s must be positive")
    win = int(round(duration_s * raw.sample_rate))
    n = len(raw.samples) // win
    if n == 0:
        warnings.warn(
            f"{raw.source_file or 'input'}: {raw.duration_s:.3f} s is shorter than one "
            f"{duration_s} s window", TooShortWarning, stacklevel=2)
        return []
    out = []
    for i in range(n):
        start = i * win
        out.append(replace(
            raw,
            samples=raw.samples[start: start + win].copy(),
            slice_start_s=start / raw.sample_rate,
            slice_end_s=(start + win) / raw.sample_rate,
        ))
    return out


def load_segments(path, class_id: int = -1, class_name: str = "",
                  rate: int = CANONICAL_RATE,
                  duration_s: float = CANONICAL_DURATION_S) -> list[AudioSegment]:
    """Load a recording, bring it to ``rate`` and cut it into fixed windows."""
    raw = resample(load_wav(path), rate)
    raw = replace(raw, class_id=class_id, class_name=class_name)
    return slice_segments(raw, duration_s)
