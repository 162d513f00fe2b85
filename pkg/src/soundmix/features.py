"""Time-frequency features: STFT, power spectrogram, Mel filter bank,
log-Mel spectrogram and MFCC, plus the shaping steps that turn them into
fixed-size network inputs.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image, PngImagePlugin

from .audio_io import CANONICAL_RATE, AudioSegment
from .errors import DegenerateStd, InvalidRange, IoFailure, TooShort, UnknownSchema

LOG_FLOOR = 1e-10
STD_FLOOR = 1e-10

LOG_MEL = "logmel"
MFCC = "mfcc"
_KIND_CODES = {LOG_MEL: 0, MFCC: 1}
_SMFX_MAGIC = b"SMFX"


@dataclass(frozen=True)
class StftConfig:
    n_fft: int = 2048
    hop: int = 512

    def __post_init__(self):
        if not 0 < self.hop <= self.n_fft:
            raise ValueError(f"need 0 < hop <= n_fft (hop={self.hop}, n_fft={self.n_fft})")

    @property
    def window(self) -> np.ndarray:
        # symmetric Hann
        return np.hanning(self.n_fft)

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1


@dataclass(frozen=True, eq=False)
class Spectrogram:
    values: np.ndarray
    bin_freqs: np.ndarray | None = None
    frame_times: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class MelFilterBank:
    weights: np.ndarray  # [n_mels, n_bins]
    edges_hz: np.ndarray  # n_mels + 2 band edges
    sample_rate: int
    n_fft: int
    f_min: float
    f_max: float

    @property
    def n_mels(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    kind: str
    values: np.ndarray
    stats: "Standardization | None" = None

    @property
    def shape(self):
        return self.values.shape

    def with_values(self, values: np.ndarray, **kw) -> "FeatureMatrix":
        return replace(self, values=values, **kw)


def _samples(x) -> np.ndarray:
    return np.asarray(x.samples if isinstance(x, AudioSegment) else x, dtype=np.float64)


def frame_signal(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Frames ``[n_frames, n_fft]``; frame ``p`` starts at sample ``p * hop``."""
    if len(x) < cfg.n_fft:
        raise TooShort(f"signal of {len(x)} samples is shorter than n_fft={cfg.n_fft}")
    n_frames = (len(x) - cfg.n_fft) // cfg.hop + 1
    view = np.lib.stride_tricks.sliding_window_view(x, cfg.n_fft)
    return view[:: cfg.hop][:n_frames]


def stft(seg, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Windowed DFT of each frame, bins as rows: ``[n_fft/2 + 1, n_frames]``."""
    frames = frame_signal(_samples(seg), cfg) * cfg.window
    return np.fft.rfft(frames, axis=1).T


def power_spectrogram(stft_out: np.ndarray, sample_rate: int | None = None,
                      cfg: StftConfig | None = None) -> Spectrogram:
    power = stft_out.real ** 2 + stft_out.imag ** 2
    freqs = times = None
    if sample_rate is not None and cfg is not None:
        freqs = np.arange(power.shape[0]) * sample_rate / cfg.n_fft
        times = np.arange(power.shape[1]) * cfg.hop / sample_rate
    return Spectrogram(power, freqs, times)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def triangular_weights(freqs: np.ndarray, edges_hz: np.ndarray) -> np.ndarray:
    """Peak-1 triangles; filter ``i`` spans ``edges[i]..edges[i+2]``, apex at ``edges[i+1]``."""
    freqs = np.asarray(freqs, dtype=np.float64)
    lo, mid, hi = edges_hz[:-2, None], edges_hz[1:-1, None], edges_hz[2:, None]
    rising = (freqs[None, :] - lo) / (mid - lo)
    falling = (hi - freqs[None, :]) / (hi - mid)
    return np.clip(np.minimum(rising, falling), 0.0, None)


def mel_filterbank(n_mels: int = 128, n_fft: int = 2048, sr: int = CANONICAL_RATE,
                   f_min: float = 0.0, f_max: float = 8000.0) -> MelFilterBank:
    if not 0 <= f_min < f_max <= sr / 2:
        raise InvalidRange(f"need 0 <= f_min < f_max <= sr/2 (got {f_min}, {f_max}, sr={sr})")
    if n_mels < 2:
        raise InvalidRange("n_mels must be >= 2")
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sr / n_fft
    return MelFilterBank(triangular_weights(freqs, edges), edges, sr, n_fft, f_min, f_max)


def mel_energies(seg, cfg: StftConfig, fb: MelFilterBank) -> np.ndarray:
    power = power_spectrogram(stft(seg, cfg)).values
    return fb.weights @ power


def log_mel_spectrogram(seg, cfg: StftConfig, fb: MelFilterBank) -> FeatureMatrix:
    return FeatureMatrix(LOG_MEL, np.log(mel_energies(seg, cfg, fb) + LOG_FLOOR))


def dct_matrix(n_coeffs: int, n_filters: int) -> np.ndarray:
    """Unscaled type-II cosine basis ``cos(pi*k*(u - 0.5)/U)``, u = 1..U."""
    k = np.arange(n_coeffs)[:, None]
    u = np.arange(1, n_filters + 1)[None, :]
    return np.cos(np.pi * k * (u - 0.5) / n_filters)


def cepstrum(log_energies: np.ndarray, n_coeffs: int) -> np.ndarray:
    """Apply the cosine basis along axis 0 of ``[U, frames]`` log energies."""
    n_filters = log_energies.shape[0]
    if n_coeffs > n_filters:
        raise InvalidRange(f"n_coeffs={n_coeffs} exceeds filter count {n_filters}")
    return dct_matrix(n_coeffs, n_filters) @ log_energies


def mfcc(seg, cfg: StftConfig, fb: MelFilterBank, n_coeffs: int = 40) -> FeatureMatrix:
    energies = np.maximum(mel_energies(seg, cfg, fb), LOG_FLOOR)
    return FeatureMatrix(MFCC, cepstrum(np.log(energies), n_coeffs))


def fit_frames(m: FeatureMatrix, target_frames: int = 400) -> FeatureMatrix:
    """Right-pad with zeros or right-truncate to exactly ``target_frames`` columns."""
    if target_frames <= 0:
        raise ValueError("target_frames must be positive")
    v = m.values
    if v.shape[1] >= target_frames:
        return m.with_values(v[:, :target_frames].copy())
    out = np.zeros((v.shape[0], target_frames), dtype=v.dtype)
    out[:, : v.shape[1]] = v
    return m.with_values(out)


@dataclass(frozen=True)
class Standardization:
    """Affine normalization statistics; arrays are per row when ``per_row``."""

    mean: float | tuple
    std: float | tuple
    per_row: bool = False

    def _arrays(self):
        if self.per_row:
            return np.asarray(self.mean)[:, None], np.asarray(self.std)[:, None]
        return float(self.mean), float(self.std)

    def apply(self, values: np.ndarray) -> np.ndarray:
        mean, std = self._arrays()
        return (values - mean) / std

    def invert(self, values: np.ndarray) -> np.ndarray:
        mean, std = self._arrays()
        return values * std + mean

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "Standardization":
        mean, std = d["mean"], d["std"]
        if d.get("per_row"):
            mean, std = tuple(mean), tuple(std)
        return cls(mean, std, bool(d.get("per_row", False)))


def fit_standardization(matrices, per_row: bool = False) -> Standardization:
    """Fit global (or per-row) mean/std over one or more matrices."""
    if isinstance(matrices, FeatureMatrix):
        matrices = [matrices]
    stack = np.stack([np.asarray(getattr(m, "values", m), dtype=np.float64) for m in matrices])
    if per_row:
        mean = stack.mean(axis=(0, 2))
        std = stack.std(axis=(0, 2))
        if np.any(std <= STD_FLOOR):
            raise DegenerateStd("constant row in standardization data")
        return Standardization(tuple(mean.tolist()), tuple(std.tolist()), True)
    mean, std = float(stack.mean()), float(stack.std())
    if std <= STD_FLOOR:
        raise DegenerateStd(f"std {std} of constant input")
    return Standardization(mean, std)


def standardize(m: FeatureMatrix, stats: Standardization | None = None,
                per_row: bool = False) -> FeatureMatrix:
    """``(x - mean) / std`` with the given stats, or stats fit on ``m`` itself."""
    if stats is None:
        stats = fit_standardization(m, per_row=per_row)
    elif not stats.per_row and float(stats.std) <= 0:
        raise DegenerateStd("supplied std must be positive")
    return m.with_values(stats.apply(m.values), stats=stats)


def _axis_coords(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if n_out == 1 or n_in == 1:
        pos = np.zeros(n_out)
    else:
        pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    i0 = np.clip(np.floor(pos).astype(np.int64), 0, max(n_in - 2, 0))
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, pos - i0


def resize_bilinear(m, out_rows: int, out_cols: int):
    """Corner-aligned bilinear interpolation to ``[out_rows, out_cols]``.

    Accepts a FeatureMatrix or a bare 2-D array and returns the same kind.
    """
    values = np.asarray(getattr(m, "values", m), dtype=np.float64)
    if values.size == 0:
        raise ValueError("cannot resize an empty matrix")
    if values.shape == (out_rows, out_cols):
        out = values.copy()
    else:
        r0, r1, fr = _axis_coords(values.shape[0], out_rows)
        c0, c1, fc = _axis_coords(values.shape[1], out_cols)
        top = values[r0][:, c0] * (1 - fc) + values[r0][:, c1] * fc
        bot = values[r1][:, c0] * (1 - fc) + values[r1][:, c1] * fc
        out = top * (1 - fr)[:, None] + bot * fr[:, None]
    return m.with_values(out) if isinstance(m, FeatureMatrix) else out


def export_png(m: FeatureMatrix, path) -> None:
    """8-bit grayscale PNG, linear [min, max] -> [0, 255]; range kept in a text chunk."""
    v = np.asarray(m.values, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("cannot export non-finite values")
    lo, hi = float(v.min()), float(v.max())
    span = hi - lo
    img = np.zeros(v.shape, dtype=np.uint8) if span == 0 else \
        np.round((v - lo) / span * 255.0).astype(np.uint8)
    info = PngImagePlugin.PngInfo()
    info.add_text("soundmix", json.dumps({"kind": m.kind, "min": lo, "max": hi}))
    try:
        Image.fromarray(img, mode="L").save(path, pnginfo=info)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def import_png(path) -> FeatureMatrix:
    with Image.open(path) as im:
        meta = json.loads(im.text.get("soundmix", "{}")) if hasattr(im, "text") else {}
        px = np.asarray(im.convert("L"), dtype=np.float64)
    lo, hi = meta.get("min", 0.0), meta.get("max", 255.0)
    return FeatureMatrix(meta.get("kind", LOG_MEL), lo + px / 255.0 * (hi - lo))


def write_feature(m: FeatureMatrix, path) -> None:
    """Binary layout: b"SMFX", u32 rows, u32 cols, kind byte, f32 row-major (LE)."""
    v = np.ascontiguousarray(m.values, dtype="<f4")
    header = _SMFX_MAGIC + struct.pack("<IIB", v.shape[0], v.shape[1], _KIND_CODES[m.kind])
    try:
        Path(path).write_bytes(header + v.tobytes())
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def read_feature(path) -> FeatureMatrix:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    if data[:4] != _SMFX_MAGIC or len(data) < 13:
        raise UnknownSchema(f"{path}: not a feature file")
    rows, cols, code = struct.unpack_from("<IIB", data, 4)
    kinds = {v: k for k, v in _KIND_CODES.items()}
    if code not in kinds or len(data) != 13 + 4 * rows * cols:
        raise UnknownSchema(f"{path}: corrupt feature header")
    values = np.frombuffer(data, dtype="<f4", offset=13).reshape(rows, cols).astype(np.float64)
    return FeatureMatrix(kinds[code], values)


@dataclass(frozen=True)
class FeatureConfig:
    """Everything needed to turn a waveform into a network input."""

    kind: str = LOG_MEL
    sample_rate: int = CANONICAL_RATE
    n_fft: int = 2048
    hop: int = 512
    n_mels: int = 128
    f_min: float = 0.0
    f_max: float = 8000.0
    n_mfcc: int = 40
    mfcc_frames: int = 400
    input_size: tuple[int, int] = (128, 128)
    per_coefficient_std: bool = False
    _fb: MelFilterBank | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in _KIND_CODES:
            raise ValueError(f"unknown feature kind {self.kind!r}")
        object.__setattr__(self, "input_size", tuple(self.input_size))

    @property
    def stft_config(self) -> StftConfig:
        return StftConfig(self.n_fft, self.hop)

    @property
    def filterbank(self) -> MelFilterBank:
        if self._fb is None:
            object.__setattr__(self, "_fb", mel_filterbank(
                self.n_mels, self.n_fft, self.sample_rate, self.f_min, self.f_max))
        return self._fb

    def extract(self, seg) -> FeatureMatrix:
        """Raw feature matrix for one waveform (no standardization or resizing)."""
        if self.kind == LOG_MEL:
            return log_mel_spectrogram(seg, self.stft_config, self.filterbank)
        return mfcc(seg, self.stft_config, self.filterbank, self.n_mfcc)

    def shape_frames(self, m: FeatureMatrix) -> FeatureMatrix:
        return fit_frames(m, self.mfcc_frames) if m.kind == MFCC else m

    def fit_stats(self, matrices) -> Standardization:
        shaped = [self.shape_frames(m) for m in matrices]
        return fit_standardization(shaped, per_row=self.per_coefficient_std and self.kind == MFCC)

    def to_input(self, m: FeatureMatrix, stats: Standardization) -> np.ndarray:
        """Frame fitting, standardization, then resize to ``input_size``."""
        shaped = self.shape_frames(m)
        return resize_bilinear(stats.apply(shaped.values), *self.input_size)

    def to_json(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if not k.startswith("_")}
        d["input_size"] = list(self.input_size)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "FeatureConfig":
        return cls(**{k: v for k, v in d.items() if not k.startswith("_")})
