"""Training, evaluation, and the feature-combination sweep.

Continuous sentiment scores in [-3, 3] are discretized by a ClassScheme
(2, 5, or 7 classes), datasets are split into train/test by whole
videos, and models are trained with mini-batch cross entropy. Reports
carry weighted accuracy, F1 (binary) or macro F1 (multi-class),
per-class precision/recall, and the confusion matrix. The sweep trains
the recurrent branch alone on every k-subset of the seven features and
keeps an append-only ledger so interrupted runs resume without
recomputing finished cells.
"""

from __future__ import annotations

import itertools
import json
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .audio_io import (
    CANONICAL_RATE,
    AudioClip,
    Manifest,
    UtteranceRecord,
    write_manifest,
    write_wav,
)
from .dsp import ALL_FEATURES, extract_features, render_spectrogram_image
from .model import (
    BranchClassifier,
    ModelConfig,
    SentimentModel,
    load_clip,
    miniature_config,
    window_records,
)
from .nn import Adam, Sgd, Tensor, cross_entropy, save_checkpoint

MODEL_KINDS = ("lstm", "bilstm")


# ----- label schemes --------------------------------------------------------------


@dataclass(frozen=True)
class ClassScheme:
    """Discretization of the continuous score range [-3, 3].

    cuts holds the n_classes - 1 interior boundaries in increasing
    order; a score equal to a boundary goes to the class above it.
    """

    n_classes: int
    cuts: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.n_classes < 2:
            raise ValueError("a scheme needs at least two classes")
        if len(self.cuts) != self.n_classes - 1:
            raise ValueError("need exactly n_classes - 1 cut points")
        for lo, hi in zip(self.cuts, self.cuts[1:]):
            if not lo < hi:
                raise ValueError("cut points must be strictly increasing")
        if self.cuts and not (-3.0 < self.cuts[0] and self.cuts[-1] < 3.0):
            raise ValueError("cut points must lie strictly inside [-3, 3]")


# 5-class cuts are uniform quintiles of [-3, 3]; 7-class cuts implement
# rounding the score to the nearest integer, halves toward the class above.
_SCHEMES = {
    2: ClassScheme(2, (0.0,)),
    5: ClassScheme(5, (-1.8, -0.6, 0.6, 1.8)),
    7: ClassScheme(7, (-2.5, -1.5, -0.5, 0.5, 1.5, 2.5)),
}


def class_scheme(n_classes: int) -> ClassScheme:
    scheme = _SCHEMES.get(n_classes)
    if scheme is None:
        raise ValueError(f"no {n_classes}-class scheme; choose from 2, 5, 7")
    return scheme


def map_score_to_class(score: float, scheme: ClassScheme) -> int:
    """Class index for a continuous score. A score on a boundary maps to
    the class above it, so 0 is positive in the binary scheme."""
    score = float(score)
    if not -3.0 <= score <= 3.0:
        raise ValueError(f"score {score} outside [-3, 3]")
    return int(np.searchsorted(scheme.cuts, score, side="right"))


def labels_for(manifest: Manifest, scheme: ClassScheme) -> np.ndarray:
    """Class index per manifest record, in record order."""
    return np.array(
        [map_score_to_class(rec.label_score, scheme) for rec in manifest.records],
        dtype=np.int64,
    )


# ----- dataset splitting ----------------------------------------------------------


def split_dataset(manifest: Manifest, ratio: float = 0.7,
                  seed: int = 0) -> tuple[Manifest, Manifest]:
    """Split into train/test by whole videos, so no video (and hence no
    utterance window) straddles the boundary.

    Videos are shuffled by the seed and assigned to the train side until
    it holds at least ratio of the utterances; the rest go to test. Both
    sides are guaranteed non-empty.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must be strictly between 0 and 1")
    videos = list(manifest.by_video)
    if len(videos) < 2:
        raise ValueError("need at least 2 videos to split")
    rng = np.random.default_rng(seed)
    order = [videos[i] for i in rng.permutation(len(videos))]

    target = ratio * len(manifest.records)
    train_videos: set[str] = set()
    count = 0
    for video_id in order:
        if count < target:
            train_videos.add(video_id)
            count += len(manifest.by_video[video_id])
    if len(train_videos) == len(videos):
        train_videos.discard(order[-1])

    train = [r for r in manifest.records if r.video_id in train_videos]
    test = [r for r in manifest.records if r.video_id not in train_videos]
    return Manifest(train), Manifest(test)


# ----- dataset preparation --------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PreparedDataset:
    """Windowed model inputs with integer class labels.

    features: [n, 3, n_frames, width]; images: [n, 3, size, size] or
    None when prepared without the convolutional branch in mind.
    """

    features: np.ndarray
    images: np.ndarray | None
    labels: np.ndarray
    utterance_ids: tuple[str, ...]
    n_classes: int

    def __len__(self) -> int:
        return len(self.labels)


def prepare_dataset(manifest: Manifest, config: ModelConfig, root=".",
                    with_images: bool = True) -> PreparedDataset:
    """Extract window inputs and labels for every utterance in the
    manifest. Per-clip features and images are computed once and shared
    by all windows containing the clip."""
    scheme = class_scheme(config.n_classes)
    base = Path(root)
    feats: dict[str, np.ndarray] = {}
    imgs: dict[str, np.ndarray] = {}

    def prepare_clip(rec: UtteranceRecord) -> None:
        if rec.utterance_id in feats:
            return
        clip = load_clip(base / rec.audio_path)
        feats[rec.utterance_id] = (
            extract_features(clip, config.feature_kinds).values[::config.frame_stride]
        )
        if with_images:
            imgs[rec.utterance_id] = (
                render_spectrogram_image(clip, size=config.image_size).pixels
            )

    features = []
    images = []
    for rec in manifest.records:
        window = window_records(manifest, rec.utterance_id)
        for r in window:
            prepare_clip(r)
        features.append(np.stack([feats[r.utterance_id] for r in window]))
        if with_images:
            images.append(np.stack([imgs[r.utterance_id] for r in window]))

    return PreparedDataset(
        features=np.stack(features),
        images=np.stack(images) if with_images else None,
        labels=labels_for(manifest, scheme),
        utterance_ids=tuple(rec.utterance_id for rec in manifest.records),
        n_classes=config.n_classes,
    )


# ----- training -------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.0001
    batch_size: int = 30
    epochs: int = 200
    optimizer: str = "adam"
    seed: int = 0
    split_ratio: float = 0.7

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not 0.0 < self.split_ratio < 1.0:
            raise ValueError("split_ratio must be strictly between 0 and 1")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    loss: float
    accuracy: float


@dataclass(eq=False)
class TrainResult:
    curves: list[EpochStats]
    optimizer: object

    @property
    def final(self) -> EpochStats:
        return self.curves[-1]


def _forward_logits(model, dataset: PreparedDataset, idx,
                    needs_images: bool) -> Tensor:
    features = Tensor(dataset.features[idx])
    if needs_images:
        logits, _ = model(features, Tensor(dataset.images[idx]))
        return logits
    return model(features)


def _dataset_metrics(model, dataset: PreparedDataset, needs_images: bool,
                     batch_size: int = 256) -> tuple[float, float]:
    """Mean loss and accuracy over the whole dataset in eval mode."""
    n = len(dataset)
    total_loss = 0.0
    correct = 0
    model.set_training(False)
    try:
        for start in range(0, n, batch_size):
            sl = slice(start, min(start + batch_size, n))
            logits = _forward_logits(model, dataset, sl, needs_images)
            loss = cross_entropy(logits, dataset.labels[sl])
            total_loss += float(loss.data) * (sl.stop - sl.start)
            preds = np.argmax(logits.data, axis=1)
            correct += int(np.sum(preds == dataset.labels[sl]))
    finally:
        model.set_training(True)
    return total_loss / n, correct / n


def train(model, dataset: PreparedDataset, config: TrainConfig,
          checkpoint_path=None, curves_path=None) -> TrainResult:
    """Mini-batch cross-entropy training.

    Batches are reshuffled every epoch by an RNG seeded from the config,
    so identical seeds give bitwise-identical curves and checkpoints.
    Curve row 0 records the untrained model over the full set; rows
    1..epochs record the running training loss and accuracy of each
    epoch. The trained parameters (and optimizer state) land in the
    checkpoint file when a path is given.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    needs_images = isinstance(model, SentimentModel)
    if needs_images and dataset.images is None:
        raise ValueError("model has a convolutional branch but the dataset "
                         "was prepared without images")

    params = model.named_parameters()
    make_opt = Adam if config.optimizer == "adam" else Sgd
    opt = make_opt(params, config.lr)
    rng = np.random.default_rng(config.seed)
    labels = dataset.labels
    n = len(dataset)

    model.set_training(True)
    curves = [EpochStats(0, *_dataset_metrics(model, dataset, needs_images))]
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        epoch_loss = 0.0
        correct = 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            opt.zero_grad()
            logits = _forward_logits(model, dataset, idx, needs_images)
            loss = cross_entropy(logits, labels[idx])
            loss.backward()
            opt.step()
            epoch_loss += float(loss.data) * len(idx)
            preds = np.argmax(logits.data, axis=1)
            correct += int(np.sum(preds == labels[idx]))
        curves.append(EpochStats(epoch, epoch_loss / n, correct / n))

    if curves_path is not None:
        write_curves(curves_path, curves)
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, params, opt)
    return TrainResult(curves=curves, optimizer=opt)


def write_curves(path, curves) -> None:
    """CSV with full-precision (repr) floats, one row per epoch."""
    lines = ["epoch,loss,accuracy"]
    lines.extend(f"{row.epoch},{row.loss!r},{row.accuracy!r}" for row in curves)
    Path(path).write_text("\n".join(lines) + "\n")


def read_curves(path) -> list[EpochStats]:
    lines = Path(path).read_text().strip().splitlines()
    if not lines or lines[0] != "epoch,loss,accuracy":
        raise ValueError("not a curves file")
    out = []
    for line in lines[1:]:
        epoch, loss, accuracy = line.split(",")
        out.append(EpochStats(int(epoch), float(loss), float(accuracy)))
    return out


# ----- metrics --------------------------------------------------------------------


def _label_array(values, name: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        raise ValueError(f"{name} must hold integer class indices")
    return arr.astype(np.int64)


def weighted_accuracy(preds, labels) -> float:
    """Fraction of predictions equal to their label."""
    p = _label_array(preds, "preds")
    t = _label_array(labels, "labels")
    if p.size != t.size:
        raise ValueError("preds and labels must have equal length")
    if p.size == 0:
        raise ValueError("cannot score an empty prediction set")
    return float(np.mean(p == t))


def f_beta(preds, labels, positive_class: int = 1, beta: float = 1.0) -> float:
    """F score over binary labels; any zero denominator gives 0."""
    p = _label_array(preds, "preds")
    t = _label_array(labels, "labels")
    if p.size != t.size:
        raise ValueError("preds and labels must have equal length")
    if beta <= 0:
        raise ValueError("beta must be positive")
    if positive_class not in (0, 1):
        raise ValueError("positive_class must be 0 or 1")
    observed = set(np.unique(p)) | set(np.unique(t))
    if not observed <= {0, 1}:
        raise ValueError("f_beta is defined for binary labels only")
    tp = int(np.sum((p == positive_class) & (t == positive_class)))
    fp = int(np.sum((p == positive_class) & (t != positive_class)))
    fn = int(np.sum((p != positive_class) & (t == positive_class)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    denom = beta * beta * precision + recall
    if denom == 0.0:
        return 0.0
    return float((1 + beta * beta) * precision * recall / denom)


def confusion_matrix(preds, labels, n_classes: int) -> np.ndarray:
    """[n_classes, n_classes] count matrix; rows are true classes,
    columns predicted, so row sums equal per-class support."""
    if n_classes < 2:
        raise ValueError("need at least two classes")
    p = _label_array(preds, "preds")
    t = _label_array(labels, "labels")
    if p.size != t.size:
        raise ValueError("preds and labels must have equal length")
    if p.size:
        lo = min(p.min(), t.min())
        hi = max(p.max(), t.max())
        if lo < 0 or hi >= n_classes:
            raise ValueError(f"class index out of range for {n_classes} classes")
    matrix = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(matrix, (t, p), 1)
    return matrix


def macro_f1(preds, labels, n_classes: int) -> float:
    """Unweighted mean of the per-class one-vs-rest F1 scores."""
    matrix = confusion_matrix(preds, labels, n_classes)
    scores = []
    for c in range(n_classes):
        tp = int(matrix[c, c])
        fp = int(matrix[:, c].sum()) - tp
        fn = int(matrix[c, :].sum()) - tp
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        denom = precision + recall
        scores.append(2 * precision * recall / denom if denom else 0.0)
    return float(np.mean(scores))


# ----- evaluation reports ---------------------------------------------------------


@dataclass(frozen=True)
class EvalReport:
    """Test-set scorecard. f1 is filled for the binary scheme only;
    macro_f1 is always present. Confusion rows are true classes."""

    n_classes: int
    n_examples: int
    weighted_accuracy: float
    f1: float | None
    macro_f1: float
    precision: tuple[float, ...]
    recall: tuple[float, ...]
    support: tuple[int, ...]
    confusion: tuple[tuple[int, ...], ...]

    def to_dict(self) -> dict:
        return {
            "n_examples": self.n_examples,
            "n_classes": self.n_classes,
            "weighted_accuracy": self.weighted_accuracy,
            "f1": self.f1,
            "macro_f1": self.macro_f1,
            "precision": list(self.precision),
            "recall": list(self.recall),
            "support": list(self.support),
            "confusion_matrix": [list(row) for row in self.confusion],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        head = [
            ("examples", str(self.n_examples)),
            ("classes", str(self.n_classes)),
            ("weighted_accuracy", repr(self.weighted_accuracy)),
        ]
        if self.f1 is not None:
            head.append(("f1", repr(self.f1)))
        head.append(("macro_f1", repr(self.macro_f1)))
        width = max(len(name) for name, _ in head)
        lines = [f"{name.ljust(width)}  {value}" for name, value in head]

        lines.append("")
        rows = [("class", "precision", "recall", "support")]
        for c in range(self.n_classes):
            rows.append((str(c), repr(self.precision[c]), repr(self.recall[c]),
                         str(self.support[c])))
        widths = [max(len(row[j]) for row in rows) for j in range(4)]
        for row in rows:
            lines.append("  ".join(row[j].ljust(widths[j]) for j in range(4)).rstrip())

        lines.append("")
        lines.append("confusion (rows = true class)")
        cell = max(len(str(v)) for row in self.confusion for v in row)
        for row in self.confusion:
            lines.append("  ".join(str(v).rjust(cell) for v in row))
        return "\n".join(lines) + "\n"


def build_report(preds, labels, n_classes: int) -> EvalReport:
    """Score predictions against labels. Pure; shared by evaluate_model
    and anything scoring externally produced predictions."""
    matrix = confusion_matrix(preds, labels, n_classes)
    precision = []
    recall = []
    for c in range(n_classes):
        tp = int(matrix[c, c])
        predicted = int(matrix[:, c].sum())
        actual = int(matrix[c, :].sum())
        precision.append(tp / predicted if predicted else 0.0)
        recall.append(tp / actual if actual else 0.0)
    return EvalReport(
        n_classes=n_classes,
        n_examples=int(matrix.sum()),
        weighted_accuracy=weighted_accuracy(preds, labels),
        f1=f_beta(preds, labels) if n_classes == 2 else None,
        macro_f1=macro_f1(preds, labels, n_classes),
        precision=tuple(precision),
        recall=tuple(recall),
        support=tuple(int(s) for s in matrix.sum(axis=1)),
        confusion=tuple(tuple(int(v) for v in row) for row in matrix),
    )


def predict_classes(model, dataset: PreparedDataset,
                    batch_size: int = 256) -> np.ndarray:
    """Eval-mode class predictions for every example, in dataset order."""
    if len(dataset) == 0:
        raise ValueError("cannot predict on an empty dataset")
    needs_images = isinstance(model, SentimentModel)
    if needs_images and dataset.images is None:
        raise ValueError("model has a convolutional branch but the dataset "
                         "was prepared without images")
    preds = []
    model.set_training(False)
    try:
        for start in range(0, len(dataset), batch_size):
            sl = slice(start, min(start + batch_size, len(dataset)))
            logits = _forward_logits(model, dataset, sl, needs_images)
            preds.append(np.argmax(logits.data, axis=1))
    finally:
        model.set_training(True)
    return np.concatenate(preds)


def evaluate_model(model, dataset: PreparedDataset,
                   batch_size: int = 256) -> EvalReport:
    preds = predict_classes(model, dataset, batch_size)
    return build_report(preds, dataset.labels, dataset.n_classes)


# ----- synthetic dataset ----------------------------------------------------------

NEGATIVE_BAND = (150.0, 320.0)
POSITIVE_BAND = (1200.0, 2600.0)


def make_synthetic_dataset(root, n_videos: int = 20,
                           utterances_per_video: int = 4, seed: int = 0,
                           duration: float = 0.5) -> Manifest:
    """Write a deterministic desk-scale dataset of pitched tones.

    Even-numbered videos are negative (scores in [-3, -0.5], low
    register), odd ones positive (scores in [0.5, 3], high register),
    so the class is audible from pitch alone and every video is pure
    enough that context windows never mix classes. Clips get a random
    amplitude, a soft noise floor, and edge fades. Writes the wav files
    plus manifest.csv under root and returns the manifest.
    """
    base = Path(root)
    base.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    t = np.arange(int(round(duration * CANONICAL_RATE))) / CANONICAL_RATE
    fade = min(int(0.01 * CANONICAL_RATE), t.size // 2)

    records = []
    for v in range(n_videos):
        video_id = f"vid{v:03d}"
        positive = v % 2 == 1
        for u in range(utterances_per_video):
            utterance_id = f"{video_id}_utt{u}"
            band = POSITIVE_BAND if positive else NEGATIVE_BAND
            freq = rng.uniform(*band)
            magnitude = rng.uniform(0.5, 3.0)
            score = magnitude if positive else -magnitude
            amp = rng.uniform(0.3, 0.8)
            samples = amp * np.sin(2 * np.pi * freq * t)
            samples += 0.005 * rng.standard_normal(t.size)
            if fade:
                ramp = np.linspace(0.0, 1.0, fade)
                samples[:fade] *= ramp
                samples[-fade:] *= ramp[::-1]
            path = f"{utterance_id}.wav"
            write_wav(base / path, AudioClip(samples, CANONICAL_RATE, utterance_id))
            records.append(UtteranceRecord(
                utterance_id=utterance_id,
                video_id=video_id,
                position=u,
                audio_path=path,
                label_score=float(score),
            ))
    manifest = Manifest(records)
    write_manifest(manifest, base / "manifest.csv")
    return manifest


# ----- feature-combination sweep --------------------------------------------------


def combination_key(kinds) -> str:
    return "+".join(kind.value for kind in kinds)


def sweep_cells(sizes=range(1, 8), model_kinds=MODEL_KINDS) -> list[tuple]:
    """Every (feature subset, model kind) cell, subsets enumerated in
    canonical feature order within ascending subset size."""
    sizes = list(sizes)
    if len(set(sizes)) != len(sizes):
        raise ValueError("sizes must be distinct")
    for k in sizes:
        if not 1 <= k <= len(ALL_FEATURES):
            raise ValueError(f"subset size {k} outside 1..{len(ALL_FEATURES)}")
    for kind in model_kinds:
        if kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {kind!r}")
    return [
        (combo, kind)
        for k in sizes
        for combo in itertools.combinations(ALL_FEATURES, k)
        for kind in model_kinds
    ]


def _training_runner(manifest: Manifest, config: ModelConfig,
                     train_config: TrainConfig, schemes, root):
    """Default sweep cell runner: train the recurrent branch alone on
    the train split, score weighted accuracy on the test split."""
    train_m, test_m = split_dataset(manifest, train_config.split_ratio,
                                    train_config.seed)

    def runner(kinds, model_kind: str) -> dict[int, float]:
        base_cfg = replace(config, feature_kinds=tuple(kinds),
                           bidirectional=model_kind == "bilstm")
        train_ds = prepare_dataset(train_m, base_cfg, root=root, with_images=False)
        test_ds = prepare_dataset(test_m, base_cfg, root=root, with_images=False)
        accuracies = {}
        for n in schemes:
            cfg = replace(base_cfg, n_classes=n)
            scheme = class_scheme(n)
            tr = replace(train_ds, labels=labels_for(train_m, scheme), n_classes=n)
            te = replace(test_ds, labels=labels_for(test_m, scheme), n_classes=n)
            classifier = BranchClassifier(cfg, seed=train_config.seed)
            train(classifier, tr, train_config)
            accuracies[n] = evaluate_model(classifier, te).weighted_accuracy
        return accuracies

    return runner


def _read_ledger(path: Path, schemes) -> dict[tuple[str, str], dict]:
    """Completed cells from an append-only JSONL ledger. Torn or foreign
    lines (and rows missing a requested scheme) are ignored, which makes
    them eligible to run again."""
    done: dict[tuple[str, str], dict] = {}
    if not path.exists():
        return done
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        try:
            row = json.loads(line)
        except ValueError:
            continue
        if not isinstance(row, dict):
            continue
        if "combination" not in row or "model" not in row:
            continue
        accuracy = row.get("accuracy")
        if not isinstance(accuracy, dict):
            continue
        if not all(str(n) in accuracy for n in schemes):
            continue
        done[(row["combination"], row["model"])] = row
    return done


def feature_sweep(manifest: Manifest, out_csv, ledger_path, *,
                  sizes=range(1, 8), model_kinds=MODEL_KINDS, schemes=(2,),
                  config: ModelConfig | None = None,
                  train_config: TrainConfig | None = None,
                  root=".", jobs: int = 1, runner=None) -> list[dict]:
    """Train-and-score every (feature subset, model kind) cell, then
    write a CSV ranked by the first scheme's accuracy.

    Each finished cell is appended to the JSONL ledger as it completes;
    a rerun skips every cell already present, so interrupted sweeps
    resume without repeating work. Cells are independent and run on a
    thread pool when jobs > 1. A custom runner(kinds, model_kind) ->
    {scheme: accuracy} replaces the default train-and-evaluate runner.
    """
    cells = sweep_cells(sizes, model_kinds)
    ledger = Path(ledger_path)
    done = _read_ledger(ledger, schemes)
    pending = [cell for cell in cells
               if (combination_key(cell[0]), cell[1]) not in done]

    if pending:
        if runner is None:
            runner = _training_runner(
                manifest,
                config if config is not None else miniature_config(),
                train_config if train_config is not None else
                TrainConfig(lr=0.01, batch_size=16, epochs=40),
                schemes,
                root,
            )
        lock = threading.Lock()
        ledger.parent.mkdir(parents=True, exist_ok=True)
        with open(ledger, "a") as fh:
            def run_cell(cell) -> None:
                kinds, model_kind = cell
                accuracies = runner(kinds, model_kind)
                row = {
                    "combination": combination_key(kinds),
                    "model": model_kind,
                    "k": len(kinds),
                    "accuracy": {str(n): float(accuracies[n]) for n in schemes},
                }
                with lock:
                    fh.write(json.dumps(row) + "\n")
                    fh.flush()
                    done[(row["combination"], row["model"])] = row

            if jobs > 1:
                with ThreadPoolExecutor(max_workers=jobs) as pool:
                    list(pool.map(run_cell, pending))
            else:
                for cell in pending:
                    run_cell(cell)

    rows = [done[(combination_key(kinds), kind)] for kinds, kind in cells]
    primary = str(schemes[0])
    rows.sort(key=lambda r: (-r["accuracy"][primary], r["combination"], r["model"]))

    header = ["combination", "model", "k"]
    header.extend(f"accuracy_{n}" for n in schemes)
    lines = [",".join(header)]
    for row in rows:
        cols = [row["combination"], row["model"], str(row["k"])]
        cols.extend(repr(row["accuracy"][str(n)]) for n in schemes)
        lines.append(",".join(cols))
    Path(out_csv).write_text("\n".join(lines) + "\n")
    return rows
