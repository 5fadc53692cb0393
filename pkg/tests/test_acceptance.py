"""The ten acceptance criteria, one test each.

Each test prints a single [PASS]/[FAIL] line with the measured numbers;
run with `pytest tests/test_acceptance.py -v -s` to see them. Criteria
with runtime budgets measure wall time and fail when over budget.
"""

import itertools
import json
import math
import time

import numpy as np

from asvkit import dsp
from asvkit.audio_io import AudioClip
from asvkit.dsp import (
    ALL_FEATURES,
    BEST_FOUR,
    FeatureKind,
    extract_feature_rows,
    extract_features,
    hz_to_mel,
    mel_filterbank,
    mfcc,
    render_spectrogram_image,
    rmse,
    spectral_centroid,
    stft,
)
from asvkit.model import SentimentModel, gradcheck_full_model, miniature_config
from asvkit.nn import Tensor, cross_entropy, matmul
from asvkit.nn.gradcheck import gradient_check, standard_suite
from asvkit.train_eval import (
    TrainConfig,
    combination_key,
    evaluate_model,
    f_beta,
    feature_sweep,
    macro_f1,
    make_synthetic_dataset,
    prepare_dataset,
    split_dataset,
    sweep_cells,
    train,
    weighted_accuracy,
)
from oracles import confusion_counts, metrics_from_confusion, naive_dct2_ortho, naive_stft

SR = 16000


def _report(number: int, detail: str, passed: bool) -> None:
    status = "PASS" if passed else "FAIL"
    print(f"[{status}] criterion {number:2d}: {detail}")
    assert passed, f"criterion {number}: {detail}"


def tone(freq: float, duration: float = 1.0, amplitude: float = 1.0) -> AudioClip:
    t = np.arange(int(round(duration * SR))) / SR
    return AudioClip(amplitude * np.sin(2 * np.pi * freq * t), SR)


def test_criterion_01_dsp_oracles():
    start = time.time()
    rng = np.random.default_rng(7)
    worst_stft = 0.0
    for i in range(50):
        n = int(rng.integers(300, 4097))
        x = rng.standard_normal(n)
        n_fft = int(rng.choice([256, 512, 1024, 2048]))
        hop = n_fft // 4
        got = stft(AudioClip(x, SR), n_fft=n_fft, hop=hop).magnitudes
        want = naive_stft(x, n_fft, hop)
        err = np.linalg.norm(got - want) / np.linalg.norm(want)
        worst_stft = max(worst_stft, err)

    worst_mfcc = 0.0
    bank = mel_filterbank(24, 512, SR)
    for i in range(10):
        x = rng.standard_normal(3000)
        got = mfcc(stft(AudioClip(x, SR), n_fft=512, hop=128), n_mels=24, n_coeffs=13)
        mags = naive_stft(x, 512, 128)
        want = naive_dct2_ortho(np.log(bank @ (mags**2) + dsp.EPS))[:13]
        worst_mfcc = max(worst_mfcc, float(np.abs(got - want).max()))

    elapsed = time.time() - start
    _report(1, f"stft vs naive dft {worst_stft:.2e} (<1e-9), "
               f"mfcc vs composed oracle {worst_mfcc:.2e} (<1e-8), "
               f"{elapsed:.1f}s (<30s)",
            worst_stft < 1e-9 and worst_mfcc < 1e-8 and elapsed < 30)


def test_criterion_02_analytic_signals():
    spec = stft(tone(440.0))
    chroma = dsp.chroma_stft(spec)
    voiced = chroma.sum(axis=0) > 0
    a_fraction = float(np.mean(np.argmax(chroma[:, voiced], axis=0) == 9))

    # edge frames see the reflect padding; judge the interior like rmse below
    centroid = spectral_centroid(spec)[0, 2:-2]
    centroid_err = float(np.abs(centroid - 440.0).max())
    bin_width = SR / 2048

    energy = rmse(tone(440.0, amplitude=1.0))
    interior = energy[0, 2:-2]
    rmse_err = float(np.abs(interior - 1 / math.sqrt(2)).max())

    rows = extract_feature_rows(AudioClip(np.zeros(SR), SR), ALL_FEATURES)
    silent_zero = all(
        np.abs(block).max() == 0.0
        for kind, block in rows.items() if kind is not FeatureKind.MFCC)
    # mfcc of silence has no zero fallback: its dc term carries log(eps)
    silent_zero = silent_zero and np.abs(rows[FeatureKind.MFCC][1:]).max() == 0.0

    _report(2, f"chroma argmax=A on {a_fraction:.0%} of voiced frames (>=95%), "
               f"centroid err {centroid_err:.3f}Hz (<{bin_width}), "
               f"rmse err {rmse_err:.2e} (<1e-3), silence zeros {silent_zero}",
            a_fraction >= 0.95 and centroid_err < bin_width
            and rmse_err < 1e-3 and silent_zero)


def test_criterion_03_mel_formula():
    at_zero = hz_to_mel(0.0)
    err_700 = abs(hz_to_mel(700.0) - 2595.0 * math.log10(2.0))
    _report(3, f"hz_to_mel(0)={at_zero} (exact 0), "
               f"|hz_to_mel(700)-2595*log10(2)|={err_700:.2e} (<1e-9)",
            at_zero == 0.0 and err_700 < 1e-9)


def test_criterion_04_gradient_checks():
    start = time.time()
    suite = standard_suite(seed=0)
    worst_layer = max(r.max_rel_error for r in suite.results)

    rng = np.random.default_rng(0)
    w = Tensor(rng.standard_normal((6, 5)), requires_grad=True)
    x = Tensor(rng.standard_normal((4, 6)))
    targets = rng.integers(0, 5, size=4)
    ce = gradient_check(lambda: cross_entropy(matmul(x, w), targets),
                        {"w": w}, name="softmax_ce")
    worst_layer = max(worst_layer, ce.max_rel_error)

    full = gradcheck_full_model(seed=0)
    elapsed = time.time() - start
    _report(4, f"layers+softmax_ce {worst_layer:.2e} (<1e-4), "
               f"full model {full.max_rel_error:.2e} (<1e-3), "
               f"{elapsed:.1f}s (<120s)",
            suite.passed and worst_layer < 1e-4
            and full.max_rel_error < 1e-3 and elapsed < 120)


def test_criterion_05_shape_contract():
    clip = tone(440.0, duration=0.3)
    best = extract_features(clip, BEST_FOUR).values.shape
    full = extract_features(clip, ALL_FEATURES).values.shape
    image = render_spectrogram_image(clip).pixels.shape
    _report(5, f"best-4 {best} (256, 33), all-7 {full} (256, 52), "
               f"image {image} (512, 512)",
            best == (256, 33) and full == (256, 52) and image == (512, 512))


def test_criterion_06_metric_oracles():
    rng = np.random.default_rng(123)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.choice([2, 3, 5, 7]))
        size = int(rng.integers(1, 50))
        labels = rng.integers(0, n, size=size)
        preds = rng.integers(0, n, size=size)
        ref = metrics_from_confusion(confusion_counts(preds, labels, n))
        worst = max(worst, abs(weighted_accuracy(preds, labels) - ref["accuracy"]))
        worst = max(worst, abs(macro_f1(preds, labels, n) - ref["macro_f1"]))
        if n == 2:
            worst = max(worst, abs(f_beta(preds, labels) - ref["f1"][1]))
    spot = weighted_accuracy(
        (np.arange(583) < 406).astype(int), np.ones(583, dtype=int))
    _report(6, f"1000 oracle trials, worst gap {worst:.2e} (<1e-12); "
               f"406/583 formats to {spot:.4f} (0.6964)",
            worst < 1e-12 and f"{spot:.4f}" == "0.6964")


def test_criterion_07_learning_sanity(tmp_path):
    start = time.time()
    manifest = make_synthetic_dataset(tmp_path)
    train_m, test_m = split_dataset(manifest, ratio=0.8, seed=0)
    config = miniature_config()
    train_ds = prepare_dataset(train_m, config, root=tmp_path)
    test_ds = prepare_dataset(test_m, config, root=tmp_path)

    model = SentimentModel(config, seed=0)
    settings = TrainConfig(lr=0.01, batch_size=16, epochs=60, seed=0)
    result = train(model, train_ds, settings)
    train_acc = evaluate_model(model, train_ds).weighted_accuracy
    test_acc = evaluate_model(model, test_ds).weighted_accuracy
    first_full = next((r.epoch for r in result.curves if r.accuracy == 1.0),
                      settings.epochs)
    elapsed = time.time() - start
    _report(7, f"{len(train_ds)}/{len(test_ds)} split, train acc {train_acc} "
               f"(=1.0, reached by epoch {first_full} <=200), "
               f"test acc {test_acc} (>=0.9), {elapsed:.1f}s (<600s)",
            len(train_ds) == 64 and len(test_ds) == 16
            and train_acc == 1.0 and first_full <= 200
            and test_acc >= 0.9 and elapsed < 600)


def test_criterion_08_attention_invariants():
    config = miniature_config()
    model = SentimentModel(config, seed=0)
    rng = np.random.default_rng(5)

    same = rng.standard_normal((2, 1, config.n_frames, config.feature_width))
    features = Tensor(np.repeat(same, 3, axis=1))
    same_img = rng.random((2, 1, config.image_size, config.image_size))
    images = Tensor(np.repeat(same_img, 3, axis=1))
    _, parts = model(features, images)
    uniform_gap = float(np.abs(parts["lasv_alpha"].data - 1 / 3).max())
    uniform_gap = max(uniform_gap,
                      float(np.abs(parts["casv_alpha"].data - 1 / 3).max()))

    mixed_feats = Tensor(rng.standard_normal((3, 3, config.n_frames,
                                              config.feature_width)))
    mixed_imgs = Tensor(rng.random((3, 3, config.image_size, config.image_size)))
    _, parts = model(mixed_feats, mixed_imgs)
    sum_gap = max(
        float(np.abs(parts[key].data.sum(axis=-1) - 1.0).max())
        for key in ("lasv_alpha", "casv_alpha", "fusion_alpha"))
    _report(8, f"identical members uniform within {uniform_gap:.2e} (<1e-9), "
               f"weights sum to 1 within {sum_gap:.2e} (<1e-12)",
            uniform_gap < 1e-9 and sum_gap < 1e-12)


def test_criterion_09_train_determinism(tmp_path):
    manifest = make_synthetic_dataset(tmp_path, n_videos=6)
    train_m, _ = split_dataset(manifest, ratio=0.75, seed=0)
    config = miniature_config()
    dataset = prepare_dataset(train_m, config, root=tmp_path)
    settings = TrainConfig(lr=0.01, batch_size=8, epochs=3, seed=5)

    blobs = []
    texts = []
    for tag in ("a", "b"):
        model = SentimentModel(config, seed=2)
        train(model, dataset, settings,
              checkpoint_path=tmp_path / f"{tag}.asvm",
              curves_path=tmp_path / f"{tag}.csv")
        blobs.append((tmp_path / f"{tag}.asvm").read_bytes())
        texts.append((tmp_path / f"{tag}.csv").read_text())
    same = blobs[0] == blobs[1] and texts[0] == texts[1]
    _report(9, f"repeated training: checkpoints identical {blobs[0] == blobs[1]}, "
               f"curves identical {texts[0] == texts[1]}", same)


def test_criterion_10_sweep_machinery(tmp_path):
    per_k = {k: len(sweep_cells(sizes=(k,), model_kinds=("lstm",)))
             for k in range(1, 8)}
    counts_ok = all(per_k[k] == math.comb(7, k) for k in per_k)
    total = len(sweep_cells())

    calls = []

    def runner(kinds, model_kind):
        calls.append((combination_key(kinds), model_kind))
        return {2: (hash((combination_key(kinds), model_kind)) % 100) / 100}

    csv_path = tmp_path / "sweep.csv"
    ledger = tmp_path / "ledger.jsonl"
    rows = feature_sweep(None, csv_path, ledger, sizes=(1, 4), runner=runner)
    first_calls = len(calls)
    feature_sweep(None, csv_path, ledger, sizes=(1, 4), runner=runner)
    resumed_cleanly = len(calls) == first_calls

    lines = csv_path.read_text().strip().splitlines()
    accs = [float(line.split(",")[3]) for line in lines[1:]]
    csv_ok = (lines[0] == "combination,model,k,accuracy_2"
              and len(lines) == len(rows) + 1
              and accs == sorted(accs, reverse=True)
              and len(json.loads(ledger.read_text().splitlines()[0])) == 4)
    _report(10, f"C(7,4)={per_k[4]} (35), full sweep {total} cells (254), "
                f"resume recomputed {len(calls) - first_calls} cells (0), "
                f"ranked csv well-formed {csv_ok}",
            counts_ok and per_k[4] == 35 and total == 254
            and first_calls == (7 + 35) * 2 and resumed_cleanly and csv_ok)
