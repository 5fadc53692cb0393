"""Short-time spectral analysis and acoustic feature extraction.

Everything downstream of the waveform runs through one shared STFT
(n_fft 2048, hop 512, Hann window) at the canonical 16 kHz rate. Seven
frame-level features are supported; any subset can be stacked into a
fixed 256-frame feature matrix for the utterance branch, and a 128-band
log-mel image rendered for the spectrogram branch.

Row counts per feature: chroma_stft 12, chroma_cens 12, mfcc 13, rmse 1,
spectral_centroid 1, spectral_contrast 7, tonnetz 6 (52 in total; the
default working set mfcc + spectral_centroid + chroma_stft +
spectral_contrast is 33 rows).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.fft import dct

from .audio_io import AudioClip

#: Floor added inside every logarithm.
EPS = 1e-10

N_FFT = 2048
HOP = 512
N_FRAMES = 256
IMAGE_SIZE = 512
IMAGE_MELS = 128

A440 = 440.0


class FeatureKind(Enum):
    """The seven frame-level features, in canonical stacking order."""

    CHROMA_STFT = "chroma_stft"
    CHROMA_CENS = "chroma_cens"
    MFCC = "mfcc"
    RMSE = "rmse"
    SPECTRAL_CENTROID = "spectral_centroid"
    SPECTRAL_CONTRAST = "spectral_contrast"
    TONNETZ = "tonnetz"


FEATURE_ROWS = {
    FeatureKind.CHROMA_STFT: 12,
    FeatureKind.CHROMA_CENS: 12,
    FeatureKind.MFCC: 13,
    FeatureKind.RMSE: 1,
    FeatureKind.SPECTRAL_CENTROID: 1,
    FeatureKind.SPECTRAL_CONTRAST: 7,
    FeatureKind.TONNETZ: 6,
}

ALL_FEATURES = tuple(FeatureKind)

#: Experimentally strongest 4-subset (33 rows).
BEST_FOUR = (
    FeatureKind.CHROMA_STFT,
    FeatureKind.MFCC,
    FeatureKind.SPECTRAL_CENTROID,
    FeatureKind.SPECTRAL_CONTRAST,
)


def feature_width(kinds) -> int:
    return sum(FEATURE_ROWS[k] for k in kinds)


def hz_to_mel(f):
    """Map frequency in Hz to mel: 2595 * log10(1 + f / 700)."""
    f = np.asarray(f, dtype=np.float64)
    if np.any(f < 0):
        raise ValueError("frequency must be non-negative")
    out = 2595.0 * np.log10(1.0 + f / 700.0)
    return float(out) if out.ndim == 0 else out


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    out = 700.0 * (10.0 ** (m / 2595.0) - 1.0)
    return float(out) if out.ndim == 0 else out


@dataclass
class Spectrogram:
    """Magnitude STFT with its frequency and time axes."""

    magnitudes: np.ndarray  # [n_bins, n_frames]
    bin_freqs: np.ndarray  # [n_bins]
    frame_times: np.ndarray  # [n_frames]
    n_fft: int
    hop: int
    sample_rate: int


def _hann(n: int) -> np.ndarray:
    # Symmetric Hann; exactly reversal-invariant, which keeps the STFT of
    # a time-reversed clip equal to the frame-reversed STFT.
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n) / (n - 1)))


def stft(
    clip: AudioClip,
    n_fft: int = N_FFT,
    hop: int = HOP,
    window: str = "hann",
) -> Spectrogram:
    """Magnitude STFT with reflect center-padding of n_fft/2 samples.

    n_fft must be a power of two and hop at most n_fft. The frame count
    is 1 + floor(len / hop).
    """
    if n_fft <= 0 or n_fft & (n_fft - 1):
        raise ValueError(f"n_fft must be a power of two, got {n_fft}")
    if not 0 < hop <= n_fft:
        raise ValueError(f"hop must be in (0, n_fft], got {hop}")
    if window == "hann":
        win = _hann(n_fft)
    elif window in ("rectangular", "boxcar"):
        win = np.ones(n_fft)
    else:
        raise ValueError(f"unknown window {window!r}")
    x = clip.samples
    pad = n_fft // 2
    if x.size >= 2:
        padded = np.pad(x, pad, mode="reflect")
    else:
        padded = np.pad(x, pad, mode="edge")
    n_frames = 1 + x.size // hop
    stride = padded.strides[0]
    frames = np.lib.stride_tricks.as_strided(
        padded, shape=(n_frames, n_fft), strides=(hop * stride, stride)
    )
    spectrum = np.fft.rfft(frames * win, axis=1)
    mags = np.abs(spectrum).T.copy()
    n_bins = n_fft // 2 + 1
    bin_freqs = np.arange(n_bins) * clip.sample_rate / n_fft
    frame_times = np.arange(n_frames) * hop / clip.sample_rate
    return Spectrogram(mags, bin_freqs, frame_times, n_fft, hop, clip.sample_rate)


def mel_frequencies(n_mels: int, fmin: float, fmax: float) -> np.ndarray:
    """n_mels + 2 frequencies equally spaced on the mel scale, in Hz."""
    mels = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    return mel_to_hz(mels)


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """Triangular mel filterbank, shape [n_mels, n_fft // 2 + 1].

    Filter centers are equally spaced on the mel scale between 0 Hz and
    the Nyquist frequency; each row is a triangle over the FFT bin
    frequencies.
    """
    if n_mels < 1:
        raise ValueError("n_mels must be positive")
    pts = mel_frequencies(n_mels, 0.0, sample_rate / 2.0)
    bin_freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    bank = np.zeros((n_mels, bin_freqs.size))
    for m in range(n_mels):
        lo, center, hi = pts[m], pts[m + 1], pts[m + 2]
        up = (bin_freqs - lo) / (center - lo)
        down = (hi - bin_freqs) / (hi - center)
        bank[m] = np.maximum(0.0, np.minimum(up, down))
    return bank


def mfcc(spec: Spectrogram, n_mels: int = 40, n_coeffs: int = 13) -> np.ndarray:
    """MFCCs: DCT-II (orthonormal) of log mel energies of the power
    spectrum, keeping the first n_coeffs coefficients. Shape
    [n_coeffs, n_frames]."""
    bank = mel_filterbank(n_mels, spec.n_fft, spec.sample_rate)
    mel_energy = bank @ (spec.magnitudes**2)
    log_energy = np.log(mel_energy + EPS)
    return dct(log_energy, type=2, axis=0, norm="ortho")[:n_coeffs]


def _pitch_class_map(spec: Spectrogram) -> np.ndarray:
    """[12, n_bins] indicator folding each nonzero bin onto a pitch class.

    Classes are numbered C=0 .. B=11 with A440 landing on class 9.
    """
    fold = np.zeros((12, spec.bin_freqs.size))
    freqs = spec.bin_freqs[1:]  # skip DC
    classes = (np.round(12.0 * np.log2(freqs / A440)).astype(int) + 9) % 12
    fold[classes, np.arange(1, spec.bin_freqs.size)] = 1.0
    return fold


def chroma_stft(spec: Spectrogram) -> np.ndarray:
    """Spectral energy folded into 12 pitch classes, max-normalized per
    frame. Silent frames give all-zero columns. Shape [12, n_frames]."""
    fold = _pitch_class_map(spec)
    chroma = fold @ (spec.magnitudes**2)
    peak = chroma.max(axis=0)
    scale = np.where(peak > 0, peak, 1.0)
    return chroma / scale


def chroma_cens(spec: Spectrogram, win: int = 41) -> np.ndarray:
    """Energy-normalized chroma: L1 normalization, amplitude quantization,
    moving-average smoothing over `win` frames, then per-frame L2
    normalization. Shape [12, n_frames]."""
    if win < 1:
        raise ValueError("smoothing window must be positive")
    chroma = chroma_stft(spec)
    l1 = chroma.sum(axis=0)
    chroma = chroma / np.where(l1 > 0, l1, 1.0)
    quant = np.zeros_like(chroma)
    for threshold in (0.4, 0.2, 0.1, 0.05):
        quant += 0.25 * (chroma > threshold)
    kernel = np.ones(win) / win
    n = quant.shape[1]
    start = (win - 1) // 2
    # full convolution sliced to input length; np.convolve's "same" mode
    # would return kernel-length output for clips shorter than the window
    smooth = np.stack(
        [np.convolve(row, kernel, mode="full")[start : start + n] for row in quant]
    )
    l2 = np.sqrt((smooth**2).sum(axis=0))
    return smooth / np.where(l2 > 0, l2, 1.0)


def rmse(clip: AudioClip, frame: int = N_FFT, hop: int = HOP) -> np.ndarray:
    """Per-frame root mean square energy, framed like the STFT (reflect
    center-padding, 1 + floor(len / hop) frames). Shape [1, n_frames]."""
    if frame <= 0 or not 0 < hop <= frame:
        raise ValueError("need 0 < hop <= frame")
    x = clip.samples
    pad = frame // 2
    padded = np.pad(x, pad, mode="reflect") if x.size >= 2 else np.pad(x, pad, mode="edge")
    n_frames = 1 + x.size // hop
    stride = padded.strides[0]
    frames = np.lib.stride_tricks.as_strided(
        padded, shape=(n_frames, frame), strides=(hop * stride, stride)
    )
    return np.sqrt((frames**2).mean(axis=1))[np.newaxis, :]


def spectral_centroid(spec: Spectrogram) -> np.ndarray:
    """Magnitude-weighted mean frequency per frame; 0 for silent frames.
    Shape [1, n_frames]."""
    total = spec.magnitudes.sum(axis=0)
    weighted = (spec.bin_freqs[:, np.newaxis] * spec.magnitudes).sum(axis=0)
    out = np.where(total > 0, weighted / np.where(total > 0, total, 1.0), 0.0)
    return out[np.newaxis, :]


def _contrast_bands(sample_rate: int, n_bands: int, fmin: float) -> list[tuple[float, float]]:
    edges = [0.0, fmin] + [fmin * 2.0**k for k in range(1, n_bands)]
    edges.append(np.inf)  # last band runs to Nyquist
    return list(zip(edges[:-1], edges[1:]))


def spectral_contrast(
    spec: Spectrogram,
    n_bands: int = 6,
    fmin: float = 200.0,
    alpha: float = 0.02,
) -> np.ndarray:
    """Per-band spectral contrast: log of the mean of the top alpha
    fraction of magnitudes minus log of the mean of the bottom alpha
    fraction, in octave bands starting at fmin (band 0 covers [0, fmin)).
    Shape [n_bands + 1, n_frames]."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must be in (0, 1)")
    bands = _contrast_bands(spec.sample_rate, n_bands, fmin)
    out = np.zeros((len(bands), spec.magnitudes.shape[1]))
    for b, (lo, hi) in enumerate(bands):
        mask = (spec.bin_freqs >= lo) & (spec.bin_freqs < hi)
        sub = spec.magnitudes[mask]
        if sub.shape[0] == 0:
            continue
        take = max(1, int(round(alpha * sub.shape[0])))
        ordered = np.sort(sub, axis=0)
        valley = ordered[:take].mean(axis=0)
        peak = ordered[-take:].mean(axis=0)
        out[b] = np.log(peak + EPS) - np.log(valley + EPS)
    return out


def _tonnetz_basis() -> np.ndarray:
    """[6, 12] projection onto the fifths / minor-third / major-third
    circles; rows are (sin, cos) pairs, the major-third circle has
    radius 0.5."""
    k = np.arange(12)
    angles = [7.0 * np.pi / 6.0 * k, 3.0 * np.pi / 2.0 * k, 2.0 * np.pi / 3.0 * k]
    radii = [1.0, 1.0, 0.5]
    rows = []
    for theta, r in zip(angles, radii):
        rows.append(r * np.sin(theta))
        rows.append(r * np.cos(theta))
    return np.stack(rows)


def tonnetz(chroma: np.ndarray) -> np.ndarray:
    """Tonal centroid features from a [12, n_frames] chroma matrix:
    project each L1-normalized chroma column onto the 6-dimensional
    harmonic basis. Shape [6, n_frames]."""
    chroma = np.asarray(chroma, dtype=np.float64)
    if chroma.ndim != 2 or chroma.shape[0] != 12:
        raise ValueError("chroma must have 12 rows")
    l1 = np.abs(chroma).sum(axis=0)
    normed = chroma / np.where(l1 > 0, l1, 1.0)
    return _tonnetz_basis() @ normed


def extract_feature_rows(
    clip: AudioClip,
    kinds=ALL_FEATURES,
    n_fft: int = N_FFT,
    hop: int = HOP,
) -> dict[FeatureKind, np.ndarray]:
    """Compute the raw [rows, n_frames] blocks for the requested feature
    kinds from one shared STFT."""
    kinds = tuple(kinds)
    if not kinds:
        raise ValueError("at least one feature kind is required")
    spec = stft(clip, n_fft=n_fft, hop=hop)
    out: dict[FeatureKind, np.ndarray] = {}
    chroma_cache: np.ndarray | None = None
    for kind in kinds:
        if kind is FeatureKind.CHROMA_STFT:
            if chroma_cache is None:
                chroma_cache = chroma_stft(spec)
            block = chroma_cache
        elif kind is FeatureKind.CHROMA_CENS:
            block = chroma_cens(spec)
        elif kind is FeatureKind.MFCC:
            block = mfcc(spec)
        elif kind is FeatureKind.RMSE:
            block = rmse(clip, frame=n_fft, hop=hop)
        elif kind is FeatureKind.SPECTRAL_CENTROID:
            block = spectral_centroid(spec)
        elif kind is FeatureKind.SPECTRAL_CONTRAST:
            block = spectral_contrast(spec)
        elif kind is FeatureKind.TONNETZ:
            if chroma_cache is None:
                chroma_cache = chroma_stft(spec)
            block = tonnetz(chroma_cache)
        else:
            raise ValueError(f"unknown feature kind {kind!r}")
        out[kind] = block
    return out


@dataclass
class FeatureMatrix:
    """A fixed-length [256, width] frames-by-features matrix."""

    values: np.ndarray
    kinds: tuple[FeatureKind, ...]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def assemble_feature_matrix(
    rows_by_kind: dict[FeatureKind, np.ndarray],
    kinds,
    n_frames: int = N_FRAMES,
    standardize: bool = True,
) -> FeatureMatrix:
    """Stack feature blocks in canonical order, transpose to
    frames-major, zero-pad or center-truncate the time axis to n_frames,
    then standardize each column to mean 0 and unit variance (constant
    columns become 0)."""
    kinds = tuple(sorted(set(kinds), key=list(FeatureKind).index))
    stacked = np.concatenate([rows_by_kind[k] for k in kinds], axis=0).T  # [frames, width]
    t = stacked.shape[0]
    if t < n_frames:
        stacked = np.pad(stacked, ((0, n_frames - t), (0, 0)))
    elif t > n_frames:
        start = (t - n_frames) // 2
        stacked = stacked[start : start + n_frames]
    if standardize:
        mean = stacked.mean(axis=0)
        std = stacked.std(axis=0)
        stacked = np.where(std > 0, (stacked - mean) / np.where(std > 0, std, 1.0), 0.0)
    return FeatureMatrix(values=stacked, kinds=kinds)


def extract_features(
    clip: AudioClip,
    kinds=BEST_FOUR,
    n_fft: int = N_FFT,
    hop: int = HOP,
    n_frames: int = N_FRAMES,
    standardize: bool = True,
) -> FeatureMatrix:
    """Extract the requested feature kinds into one standardized
    [n_frames, width] matrix."""
    rows = extract_feature_rows(clip, kinds, n_fft=n_fft, hop=hop)
    return assemble_feature_matrix(rows, kinds, n_frames=n_frames, standardize=standardize)


@dataclass
class SpectrogramImage:
    """A [size, size] image with pixel values in [0, 1]; rows are mel
    bands (low frequencies at row 0), columns are time."""

    pixels: np.ndarray


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Endpoint-aligned bilinear resampling of a 2-D array."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape

    def grid(n_in, n_out):
        if n_in == 1 or n_out == 1:
            return np.zeros(n_out)
        return np.arange(n_out) * (n_in - 1) / (n_out - 1)

    ys, xs = grid(h, out_h), grid(w, out_w)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, np.newaxis]
    wx = (xs - x0)[np.newaxis, :]
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bottom = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return top * (1 - wy) + bottom * wy


def render_spectrogram_image(
    clip: AudioClip,
    size: int = IMAGE_SIZE,
    n_mels: int = IMAGE_MELS,
    n_fft: int = N_FFT,
    hop: int = HOP,
) -> SpectrogramImage:
    """Render a log-power mel spectrogram as a square [size, size] image,
    min-max normalized to [0, 1]. A silent clip gives an all-zero image."""
    spec = stft(clip, n_fft=n_fft, hop=hop)
    bank = mel_filterbank(n_mels, n_fft, clip.sample_rate)
    log_power = np.log(bank @ (spec.magnitudes**2) + EPS)
    lo, hi = log_power.min(), log_power.max()
    if hi > lo:
        img = (log_power - lo) / (hi - lo)
    else:
        img = np.zeros_like(log_power)
    return SpectrogramImage(pixels=bilinear_resize(img, size, size))


# ---------------------------------------------------------------------------
# ASVF: the on-disk record format for feature matrices and ASV vectors.
# Layout: magic "ASVF", version u16, kind bitmask u16, rows u32, cols u32,
# then rows*cols little-endian float32 values, row-major.

ASVF_MAGIC = b"ASVF"
ASVF_VERSION = 1


class AsvfError(Exception):
    """Raised for malformed ASVF records."""


def kinds_to_bitmask(kinds) -> int:
    order = list(FeatureKind)
    mask = 0
    for k in kinds:
        mask |= 1 << order.index(k)
    return mask


def bitmask_to_kinds(mask: int) -> tuple[FeatureKind, ...]:
    order = list(FeatureKind)
    return tuple(k for i, k in enumerate(order) if mask & (1 << i))


def pack_asvf(values: np.ndarray, kinds=()) -> bytes:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[np.newaxis, :]
    rows, cols = values.shape
    header = ASVF_MAGIC + struct.pack(
        "<HHII", ASVF_VERSION, kinds_to_bitmask(kinds), rows, cols
    )
    return header + values.astype("<f4").tobytes()


def unpack_asvf(blob: bytes) -> tuple[np.ndarray, tuple[FeatureKind, ...]]:
    if len(blob) < 16 or blob[:4] != ASVF_MAGIC:
        raise AsvfError("not an ASVF record")
    version, mask, rows, cols = struct.unpack("<HHII", blob[4:16])
    if version != ASVF_VERSION:
        raise AsvfError(f"unsupported ASVF version {version}")
    need = rows * cols * 4
    if len(blob) < 16 + need:
        raise AsvfError("truncated ASVF record")
    values = np.frombuffer(blob[16 : 16 + need], dtype="<f4").reshape(rows, cols)
    return values.astype(np.float64), bitmask_to_kinds(mask)


def write_feature_file(path: str | Path, matrix: FeatureMatrix) -> None:
    Path(path).write_bytes(pack_asvf(matrix.values, matrix.kinds))


def read_feature_file(path: str | Path) -> FeatureMatrix:
    values, kinds = unpack_asvf(Path(path).read_bytes())
    return FeatureMatrix(values=values, kinds=kinds)
