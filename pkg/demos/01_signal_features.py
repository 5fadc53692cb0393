"""Walk one clip through the signal-analysis layer.

Synthesizes a two-note clip, then shows what each stage produces: the
magnitude spectrogram, a few raw feature rows, the stacked standardized
feature matrix, the packed .asvf record, and the rendered spectrogram
image. Artifacts land in demos/out/.
"""

from pathlib import Path

import numpy as np

from asvkit.audio_io import AudioClip, write_wav
from asvkit.dsp import (
    ALL_FEATURES,
    BEST_FOUR,
    FeatureKind,
    extract_feature_rows,
    extract_features,
    read_feature_file,
    render_spectrogram_image,
    stft,
    write_feature_file,
)

OUT = Path(__file__).with_name("out")
SR = 16000


def two_note_clip() -> AudioClip:
    t = np.arange(SR) / SR
    low = np.sin(2 * np.pi * 220.0 * t) * (t < 0.5)
    high = 0.6 * np.sin(2 * np.pi * 880.0 * t) * (t >= 0.5)
    return AudioClip(0.8 * (low + high), SR)


def main() -> None:
    OUT.mkdir(exist_ok=True)
    clip = two_note_clip()
    write_wav(OUT / "two_note.wav", clip)
    print(f"clip: {clip.samples.size} samples at {clip.sample_rate} Hz "
          f"({clip.samples.size / clip.sample_rate:.1f}s), A3 then A5")

    spec = stft(clip)
    print(f"\nstft: {spec.magnitudes.shape[0]} frequency bins x "
          f"{spec.magnitudes.shape[1]} frames")
    loudest = spec.bin_freqs[np.argmax(spec.magnitudes, axis=0)]
    print(f"loudest bin over time: starts near {loudest[3]:.0f} Hz, "
          f"ends near {loudest[-4]:.0f} Hz")

    rows = extract_feature_rows(clip, ALL_FEATURES)
    print("\nraw feature rows (rows x frames):")
    for kind, block in rows.items():
        print(f"  {kind.value:17s} {block.shape[0]:2d} x {block.shape[1]}")

    chroma = rows[FeatureKind.CHROMA_STFT]
    names = ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"]
    print("chroma argmax in the first half:",
          names[int(np.argmax(chroma[:, 5:20].sum(axis=1)))],
          "(both notes are As, an octave apart)")

    matrix = extract_features(clip, BEST_FOUR)
    print(f"\nstacked best-4 matrix: {matrix.values.shape}, per-column "
          f"mean {matrix.values.mean(axis=0).round(6).max()}, "
          f"std {matrix.values.std(axis=0).max():.3f}")

    write_feature_file(OUT / "two_note.asvf", matrix)
    back = read_feature_file(OUT / "two_note.asvf")
    print(f"asvf roundtrip: {(OUT / 'two_note.asvf').stat().st_size} bytes, "
          f"kinds {[k.value for k in back.kinds]}, "
          f"float32 max gap {np.abs(back.values - matrix.values).max():.2e}")

    image = render_spectrogram_image(clip)
    print(f"\nspectrogram image: {image.pixels.shape}, range "
          f"[{image.pixels.min():.2f}, {image.pixels.max():.2f}]")
    print(f"artifacts in {OUT}/")


if __name__ == "__main__":
    main()
