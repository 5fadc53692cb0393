import struct
import wave

import numpy as np
import pytest

from asvkit import audio_io
from asvkit.audio_io import (
    AudioClip,
    MalformedRiffError,
    Manifest,
    ManifestError,
    UnsupportedEncodingError,
    UtteranceRecord,
    context_windows,
    load_manifest,
    load_wav,
    resample,
    write_manifest,
    write_wav,
)


def _write_wave_stdlib(path, samples_int, sampwidth, rate=16000, channels=1):
    # The stdlib wave module is the independent encoder for integer PCM.
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(channels)
        fh.setsampwidth(sampwidth)
        fh.setframerate(rate)
        if sampwidth == 1:
            frames = bytes(samples_int)
        elif sampwidth == 2:
            frames = b"".join(struct.pack("<h", s) for s in samples_int)
        elif sampwidth == 3:
            frames = b"".join(struct.pack("<i", s << 8)[1:] for s in samples_int)
        else:
            frames = b"".join(struct.pack("<i", s) for s in samples_int)
        fh.writeframes(frames)


def _write_float_wav(path, samples, rate=16000, channels=1):
    data = np.asarray(samples, dtype="<f4").tobytes()
    header = b"RIFF" + struct.pack("<I", 36 + len(data)) + b"WAVE"
    header += b"fmt " + struct.pack(
        "<IHHIIHH", 16, 3, channels, rate, rate * 4 * channels, 4 * channels, 32
    )
    header += b"data" + struct.pack("<I", len(data))
    path.write_bytes(header + data)


class TestLoadWav:
    def test_16bit_extreme_codes(self, tmp_path):
        p = tmp_path / "a.wav"
        _write_wave_stdlib(p, [0, 32767, -32768], 2)
        clip = load_wav(p)
        assert clip.sample_rate == 16000
        np.testing.assert_array_equal(
            clip.samples, [0.0, 32767.0 / 32768.0, -1.0]
        )
        assert abs(clip.samples[1] - 0.99997) < 1e-5

    def test_8bit_codes(self, tmp_path):
        p = tmp_path / "a.wav"
        _write_wave_stdlib(p, [128, 255, 0], 1)
        clip = load_wav(p)
        np.testing.assert_allclose(clip.samples, [0.0, 127 / 128, -1.0])

    def test_24bit_codes(self, tmp_path):
        p = tmp_path / "a.wav"
        _write_wave_stdlib(p, [0, (1 << 23) - 1, -(1 << 23)], 3)
        clip = load_wav(p)
        np.testing.assert_allclose(
            clip.samples, [0.0, ((1 << 23) - 1) / (1 << 23), -1.0]
        )

    def test_32bit_int_codes(self, tmp_path):
        p = tmp_path / "a.wav"
        _write_wave_stdlib(p, [0, (1 << 31) - 1, -(1 << 31)], 4)
        clip = load_wav(p)
        np.testing.assert_allclose(clip.samples, [0.0, 1.0, -1.0], atol=1e-9)

    def test_float32(self, tmp_path):
        p = tmp_path / "a.wav"
        _write_float_wav(p, [0.25, -0.5, 1.0])
        clip = load_wav(p)
        np.testing.assert_array_equal(clip.samples, [0.25, -0.5, 1.0])

    def test_stereo_averages_channels(self, tmp_path):
        p = tmp_path / "a.wav"
        _write_float_wav(p, [1.0, 0.0, 0.5, 0.5], channels=2)
        clip = load_wav(p)
        np.testing.assert_array_equal(clip.samples, [0.5, 0.5])

    def test_duration_one_second(self, tmp_path):
        p = tmp_path / "a.wav"
        _write_wave_stdlib(p, [0] * 15999 + [1], 2, rate=16000)
        clip = load_wav(p)
        assert clip.samples.size == 16000
        assert clip.duration == pytest.approx(1.0)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_wav(tmp_path / "nope.wav")

    def test_malformed_riff(self, tmp_path):
        p = tmp_path / "bad.wav"
        p.write_bytes(b"this is not a wav file at all")
        with pytest.raises(MalformedRiffError):
            load_wav(p)

    def test_truncated_data_chunk(self, tmp_path):
        p = tmp_path / "trunc.wav"
        _write_wave_stdlib(p, list(range(100)), 2)
        raw = p.read_bytes()
        p.write_bytes(raw[:60])
        with pytest.raises(MalformedRiffError):
            load_wav(p)

    def test_unsupported_format_tag(self, tmp_path):
        p = tmp_path / "adpcm.wav"
        data = struct.pack("<4h", 1, 2, 3, 4)
        header = b"RIFF" + struct.pack("<I", 36 + len(data)) + b"WAVE"
        header += b"fmt " + struct.pack("<IHHIIHH", 16, 2, 1, 16000, 32000, 2, 16)
        header += b"data" + struct.pack("<I", len(data))
        p.write_bytes(header + data)
        with pytest.raises(UnsupportedEncodingError):
            load_wav(p)

    def test_unsupported_channel_count(self, tmp_path):
        p = tmp_path / "many.wav"
        data = struct.pack("<6h", 1, 2, 3, 4, 5, 6)
        header = b"RIFF" + struct.pack("<I", 36 + len(data)) + b"WAVE"
        header += b"fmt " + struct.pack("<IHHIIHH", 16, 1, 3, 16000, 96000, 6, 16)
        header += b"data" + struct.pack("<I", len(data))
        p.write_bytes(header + data)
        with pytest.raises(UnsupportedEncodingError):
            load_wav(p)

    def test_16bit_roundtrip_exact(self, tmp_path):
        rng = np.random.default_rng(7)
        codes = rng.integers(-32768, 32768, size=2048)
        src = tmp_path / "src.wav"
        _write_wave_stdlib(src, list(codes), 2)
        clip = load_wav(src)
        dst = tmp_path / "dst.wav"
        write_wav(dst, clip)
        again = load_wav(dst)
        np.testing.assert_array_equal(clip.samples, again.samples)
        assert again.sample_rate == clip.sample_rate


class TestResample:
    def test_identity_rate(self):
        clip = AudioClip(np.linspace(-1, 1, 100), 8000)
        out = resample(clip, 8000)
        np.testing.assert_array_equal(out.samples, clip.samples)
        assert out.samples is not clip.samples

    def test_constant_upsample(self):
        clip = AudioClip(np.full(8000, 0.5), 8000)
        out = resample(clip, 16000)
        assert out.samples.size == 16000
        assert out.sample_rate == 16000
        np.testing.assert_array_equal(out.samples, np.full(16000, 0.5))

    def test_length_rounding(self):
        clip = AudioClip(np.zeros(1001), 44100)
        out = resample(clip, 16000)
        assert out.samples.size == round(1001 * 16000 / 44100)

    def test_downsample_preserves_slow_ramp(self):
        t = np.arange(16000) / 16000
        clip = AudioClip(t - 0.5, 16000)
        out = resample(clip, 8000)
        expect = np.arange(8000) * 2 / 16000 - 0.5
        np.testing.assert_allclose(out.samples, expect, atol=1e-12)

    def test_bad_rate(self):
        clip = AudioClip(np.zeros(10), 8000)
        with pytest.raises(ValueError):
            resample(clip, 0)


def _manifest_csv(tmp_path, rows):
    p = tmp_path / "manifest.csv"
    lines = ["utterance_id,video_id,position,audio_path,label_score"]
    lines += [",".join(str(c) for c in row) for row in rows]
    p.write_text("\n".join(lines) + "\n")
    return p


class TestManifest:
    def test_parse_and_grouping(self, tmp_path):
        p = _manifest_csv(
            tmp_path,
            [
                ("u1", "v1", 0, "u1.wav", 1.5),
                ("u2", "v1", 1, "u2.wav", -2.0),
                ("u3", "v2", 0, "u3.wav", 0.0),
            ],
        )
        m = load_manifest(p)
        assert len(m) == 3
        assert [r.utterance_id for r in m.by_video["v1"]] == ["u1", "u2"]
        assert m.by_id["u2"].label_score == -2.0
        assert m.video_ids() == ["v1", "v2"]

    def test_position_gap_rejected(self, tmp_path):
        p = _manifest_csv(
            tmp_path,
            [("u1", "v1", 0, "a.wav", 0.0), ("u2", "v1", 2, "b.wav", 0.0)],
        )
        with pytest.raises(ManifestError):
            load_manifest(p)

    def test_duplicate_video_position_rejected(self, tmp_path):
        p = _manifest_csv(
            tmp_path,
            [("u1", "v1", 0, "a.wav", 0.0), ("u2", "v1", 0, "b.wav", 0.0)],
        )
        with pytest.raises(ManifestError):
            load_manifest(p)

    def test_score_out_of_range_rejected(self, tmp_path):
        p = _manifest_csv(tmp_path, [("u1", "v1", 0, "a.wav", 3.2)])
        with pytest.raises(ManifestError):
            load_manifest(p)

    def test_missing_column_rejected(self, tmp_path):
        p = tmp_path / "manifest.csv"
        p.write_text("utterance_id,video_id,position,audio_path\nu1,v1,0,a.wav\n")
        with pytest.raises(ManifestError):
            load_manifest(p)

    def test_duplicate_utterance_id_rejected(self, tmp_path):
        p = _manifest_csv(
            tmp_path,
            [("u1", "v1", 0, "a.wav", 0.0), ("u1", "v2", 0, "b.wav", 0.0)],
        )
        with pytest.raises(ManifestError):
            load_manifest(p)

    def test_non_numeric_score_rejected(self, tmp_path):
        p = _manifest_csv(tmp_path, [("u1", "v1", 0, "a.wav", "high")])
        with pytest.raises(ManifestError):
            load_manifest(p)

    def test_write_roundtrip(self, tmp_path):
        m = Manifest(
            [
                UtteranceRecord("u1", "v1", 0, "a.wav", 1.0),
                UtteranceRecord("u2", "v1", 1, "b.wav", -0.5),
            ]
        )
        p = tmp_path / "out.csv"
        write_manifest(m, p)
        again = load_manifest(p)
        assert again.records == m.records


class TestContextWindows:
    def _manifest(self, sizes):
        records = []
        for v, k in enumerate(sizes):
            for i in range(k):
                records.append(
                    UtteranceRecord(f"v{v}u{i}", f"v{v}", i, f"v{v}u{i}.wav", 0.0)
                )
        return Manifest(records)

    def test_four_utterance_video(self):
        m = self._manifest([4])
        assert context_windows(m) == [
            ("v0u0", "v0u0", "v0u1"),
            ("v0u0", "v0u1", "v0u2"),
            ("v0u1", "v0u2", "v0u3"),
            ("v0u2", "v0u3", "v0u3"),
        ]

    def test_singleton_video(self):
        m = self._manifest([1])
        assert context_windows(m) == [("v0u0", "v0u0", "v0u0")]

    def test_pair_video(self):
        m = self._manifest([2])
        assert context_windows(m) == [
            ("v0u0", "v0u0", "v0u1"),
            ("v0u0", "v0u1", "v0u1"),
        ]

    def test_one_window_per_utterance_and_no_video_crossing(self):
        sizes = [3, 1, 5, 2, 7]
        m = self._manifest(sizes)
        wins = context_windows(m)
        assert len(wins) == sum(sizes)
        centers = [w[1] for w in wins]
        assert sorted(centers) == sorted(r.utterance_id for r in m.records)
        video_of = {r.utterance_id: r.video_id for r in m.records}
        for prev, center, nxt in wins:
            assert video_of[prev] == video_of[center] == video_of[nxt]
