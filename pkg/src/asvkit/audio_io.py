"""WAV decoding, resampling, and dataset manifests.

The loader handles the encodings that occur in the wild for speech
corpora: 8/16/24/32-bit integer PCM and 32-bit float, mono or stereo.
Stereo is collapsed to mono by averaging. Dataset manifests are CSV
files listing utterances grouped into videos, and every utterance owns
exactly one context window centered on it.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

#: Rate every clip is resampled to before feature extraction.
CANONICAL_RATE = 16000

MANIFEST_COLUMNS = ("utterance_id", "video_id", "position", "audio_path", "label_score")

SCORE_MIN, SCORE_MAX = -3.0, 3.0


class AudioIOError(Exception):
    """Base class for audio and manifest loading failures."""


class MalformedRiffError(AudioIOError):
    """The RIFF/WAVE container is structurally invalid or truncated."""


class UnsupportedEncodingError(AudioIOError):
    """WAV encoding outside 8/16/24/32-bit PCM or 32-bit float, mono/stereo."""


class ManifestError(AudioIOError):
    """The manifest CSV violates the schema or one of its invariants."""


@dataclass
class AudioClip:
    """A mono waveform with its sample rate.

    Samples are float64 in [-1, 1], never empty, always finite.
    """

    samples: np.ndarray
    sample_rate: int
    utterance_id: str = ""

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("clip samples must be one-dimensional")
        if self.samples.size == 0:
            raise ValueError("clip has no samples")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("clip contains non-finite samples")
        if int(self.sample_rate) <= 0:
            raise ValueError("sample rate must be positive")
        self.sample_rate = int(self.sample_rate)

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class UtteranceRecord:
    """One manifest row: an utterance inside a video."""

    utterance_id: str
    video_id: str
    position: int
    audio_path: str
    label_score: float


@dataclass
class Manifest:
    """An ordered collection of utterance records grouped by video.

    Invariants checked on construction: (video_id, position) pairs are
    unique, positions within each video are contiguous from 0, utterance
    ids are unique, and every label score lies in [-3, 3].
    """

    records: list[UtteranceRecord]
    by_video: dict[str, list[UtteranceRecord]] = field(init=False, repr=False)
    by_id: dict[str, UtteranceRecord] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if not self.records:
            raise ManifestError("manifest has no records")
        groups: dict[str, dict[int, UtteranceRecord]] = {}
        by_id: dict[str, UtteranceRecord] = {}
        for rec in self.records:
            if not (SCORE_MIN <= rec.label_score <= SCORE_MAX):
                raise ManifestError(
                    f"label_score {rec.label_score} for {rec.utterance_id!r} "
                    f"outside [{SCORE_MIN}, {SCORE_MAX}]"
                )
            if rec.utterance_id in by_id:
                raise ManifestError(f"duplicate utterance_id {rec.utterance_id!r}")
            by_id[rec.utterance_id] = rec
            group = groups.setdefault(rec.video_id, {})
            if rec.position in group:
                raise ManifestError(
                    f"duplicate position {rec.position} in video {rec.video_id!r}"
                )
            group[rec.position] = rec
        for vid, group in groups.items():
            positions = sorted(group)
            if positions != list(range(len(positions))):
                raise ManifestError(
                    f"positions in video {vid!r} are not contiguous from 0: {positions}"
                )
        self.by_video = {
            vid: [group[i] for i in range(len(group))] for vid, group in groups.items()
        }
        self.by_id = by_id

    def __len__(self) -> int:
        return len(self.records)

    def video_ids(self) -> list[str]:
        return list(self.by_video)


def _decode_pcm(data: bytes, audio_format: int, bits: int) -> np.ndarray:
    if audio_format == 1 and bits == 8:
        x = np.frombuffer(data, dtype=np.uint8).astype(np.float64)
        return (x - 128.0) / 128.0
    if audio_format == 1 and bits == 16:
        x = np.frombuffer(data, dtype="<i2").astype(np.float64)
        return x / 32768.0
    if audio_format == 1 and bits == 24:
        b = np.frombuffer(data, dtype=np.uint8).reshape(-1, 3).astype(np.int64)
        x = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        x = np.where(x & 0x800000, x - (1 << 24), x).astype(np.float64)
        return x / float(1 << 23)
    if audio_format == 1 and bits == 32:
        x = np.frombuffer(data, dtype="<i4").astype(np.float64)
        return x / float(1 << 31)
    if audio_format == 3 and bits == 32:
        x = np.frombuffer(data, dtype="<f4").astype(np.float64)
        if not np.all(np.isfinite(x)):
            raise MalformedRiffError("float WAV contains non-finite samples")
        return np.clip(x, -1.0, 1.0)
    raise UnsupportedEncodingError(
        f"unsupported WAV encoding: format tag {audio_format}, {bits}-bit"
    )


def load_wav(path: str | Path, utterance_id: str = "") -> AudioClip:
    """Decode a WAV file into a mono AudioClip.

    Raises FileNotFoundError for a missing file, MalformedRiffError for a
    broken container, and UnsupportedEncodingError for encodings outside
    8/16/24/32-bit PCM or 32-bit float with one or two channels.
    """
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such file: {p}")
    raw = p.read_bytes()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise MalformedRiffError(f"not a RIFF/WAVE file: {p}")
    fmt: bytes | None = None
    data: bytes | None = None
    pos = 12
    while pos + 8 <= len(raw):
        chunk_id = raw[pos : pos + 4]
        (size,) = struct.unpack("<I", raw[pos + 4 : pos + 8])
        body = raw[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise MalformedRiffError(f"truncated {chunk_id!r} chunk in {p}")
        if chunk_id == b"fmt ":
            fmt = body
        elif chunk_id == b"data":
            data = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned
    if fmt is None or data is None:
        raise MalformedRiffError(f"missing fmt or data chunk in {p}")
    if len(fmt) < 16:
        raise MalformedRiffError(f"fmt chunk too short in {p}")
    audio_format, channels, rate, _byte_rate, _block_align, bits = struct.unpack(
        "<HHIIHH", fmt[:16]
    )
    if channels not in (1, 2):
        raise UnsupportedEncodingError(f"unsupported channel count {channels}")
    frame_bytes = channels * (bits // 8)
    if frame_bytes == 0:
        raise UnsupportedEncodingError(f"unsupported bit depth {bits}")
    usable = len(data) - len(data) % frame_bytes
    if usable == 0:
        raise MalformedRiffError(f"empty data chunk in {p}")
    samples = _decode_pcm(data[:usable], audio_format, bits)
    if channels == 2:
        samples = samples.reshape(-1, 2).mean(axis=1)
    return AudioClip(samples=samples, sample_rate=rate, utterance_id=utterance_id)


def write_wav(path: str | Path, clip: AudioClip) -> None:
    """Write a clip as 16-bit mono PCM.

    Values produced by load_wav from a 16-bit source round-trip exactly.
    """
    q = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    data = q.tobytes()
    header = b"RIFF" + struct.pack("<I", 36 + len(data)) + b"WAVE"
    header += b"fmt " + struct.pack(
        "<IHHIIHH", 16, 1, 1, clip.sample_rate, clip.sample_rate * 2, 2, 16
    )
    header += b"data" + struct.pack("<I", len(data))
    Path(path).write_bytes(header + data)


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Linearly resample a clip to target_rate.

    Output length is round(len * target / source). Resampling to the
    clip's own rate returns an identical copy.
    """
    if target_rate <= 0:
        raise ValueError("target rate must be positive")
    if target_rate == clip.sample_rate:
        return AudioClip(clip.samples.copy(), clip.sample_rate, clip.utterance_id)
    n_out = max(1, int(round(clip.samples.size * target_rate / clip.sample_rate)))
    positions = np.arange(n_out) * (clip.sample_rate / target_rate)
    out = np.interp(positions, np.arange(clip.samples.size), clip.samples)
    return AudioClip(out, target_rate, clip.utterance_id)


def load_manifest(path: str | Path) -> Manifest:
    """Parse a manifest CSV with columns utterance_id, video_id, position,
    audio_path, label_score."""
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such file: {p}")
    records: list[UtteranceRecord] = []
    with open(p, newline="") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        missing = [c for c in MANIFEST_COLUMNS if c not in fields]
        if missing:
            raise ManifestError(f"manifest missing column(s): {', '.join(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                position = int(row["position"])
                score = float(row["label_score"])
            except (TypeError, ValueError) as exc:
                raise ManifestError(f"line {lineno}: {exc}") from exc
            records.append(
                UtteranceRecord(
                    utterance_id=row["utterance_id"],
                    video_id=row["video_id"],
                    position=position,
                    audio_path=row["audio_path"],
                    label_score=score,
                )
            )
    return Manifest(records)


def write_manifest(manifest: Manifest, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        for rec in manifest.records:
            writer.writerow(
                [rec.utterance_id, rec.video_id, rec.position, rec.audio_path, rec.label_score]
            )


def context_windows(manifest: Manifest) -> list[tuple[str, str, str]]:
    """Enumerate one (previous, center, next) utterance id triple per utterance.

    Windows never cross video boundaries; at video edges the boundary
    utterance is repeated, so a video [a, b, c, d] yields
    (a,a,b), (a,b,c), (b,c,d), (c,d,d) and a singleton video [a] yields
    (a,a,a).
    """
    windows: list[tuple[str, str, str]] = []
    for group in manifest.by_video.values():
        ids = [rec.utterance_id for rec in group]
        last = len(ids) - 1
        for i in range(len(ids)):
            windows.append((ids[max(i - 1, 0)], ids[i], ids[min(i + 1, last)]))
    return windows
