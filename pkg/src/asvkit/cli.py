"""Command-line interface.

One subcommand per pipeline stage: extract, render, train, evaluate,
predict, sweep, export-asv, gradcheck. Exit codes: 0 on success, 1 on a
usage error (unknown flag, bad feature name), 2 on a data error (broken
manifest, missing audio, mismatched checkpoint). Model and training
hyperparameters come from an optional flat key=value config file; flag
values override nothing in it, the two namespaces are disjoint. Paths
given as flags are relative to the working directory; audio paths
inside a manifest are relative to the manifest file. The ASVKIT_SEED
environment variable supplies the default seed where --seed is omitted.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .audio_io import (
    MalformedRiffError,
    ManifestError,
    load_manifest,
    write_manifest,
)
from .dsp import (
    ALL_FEATURES,
    BEST_FOUR,
    AsvfError,
    FeatureKind,
    extract_features,
    render_spectrogram_image,
    write_feature_file,
)
from .model import (
    ModelConfig,
    SentimentModel,
    export_asv,
    gradcheck_full_model,
    load_clip,
    miniature_config,
    predict_window,
)
from .nn import CheckpointError, load_into
from .nn.gradcheck import standard_suite
from .train_eval import (
    TrainConfig,
    class_scheme,
    evaluate_model,
    feature_sweep,
    prepare_dataset,
    split_dataset,
    train,
)


class DataError(Exception):
    """Bad input data; reported on stderr with exit code 2."""


_DATA_ERRORS = (DataError, ManifestError, MalformedRiffError, AsvfError,
                CheckpointError, ValueError, KeyError, OSError)

_FEATURE_ALIASES = {"centroid": "spectral_centroid", "contrast": "spectral_contrast"}


def feature_list(text: str) -> tuple[FeatureKind, ...]:
    """Comma-separated feature names into kinds; duplicates collapse."""
    kinds = []
    for raw in text.split(","):
        name = raw.strip().lower()
        if not name:
            continue
        name = _FEATURE_ALIASES.get(name, name)
        try:
            kinds.append(FeatureKind(name))
        except ValueError:
            raise ValueError(
                f"unknown feature {raw.strip()!r}; choose from "
                + ", ".join(k.value for k in ALL_FEATURES)) from None
    if not kinds:
        raise ValueError("empty feature list")
    return tuple(dict.fromkeys(kinds))


def _feature_arg(text: str) -> tuple[FeatureKind, ...]:
    try:
        return feature_list(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _classes_arg(text: str) -> int:
    try:
        return class_scheme(int(text)).n_classes
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _scheme_list_arg(text: str) -> tuple[int, ...]:
    try:
        return tuple(class_scheme(int(p)).n_classes
                     for p in text.split(",") if p.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _size_list_arg(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(p) for p in text.split(",") if p.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad subset sizes {text!r}") from None


def _model_list_arg(text: str) -> tuple[str, ...]:
    kinds = tuple(p.strip() for p in text.split(",") if p.strip())
    for kind in kinds:
        if kind not in ("lstm", "bilstm"):
            raise argparse.ArgumentTypeError(f"unknown model kind {kind!r}")
    return kinds


def resolve_seed(value: int | None) -> int:
    if value is not None:
        return value
    raw = os.environ.get("ASVKIT_SEED", "").strip()
    if not raw:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise DataError(f"ASVKIT_SEED must be an integer, got {raw!r}") from None


# ----- config files ---------------------------------------------------------------


def read_config_file(path) -> dict[str, str]:
    """Flat key=value lines; blank lines and # comments ignored."""
    values: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise DataError(f"{path}:{lineno}: expected key=value")
        values[key.strip()] = value.strip()
    return values


def _parse_bool(raw: str) -> bool:
    lowered = raw.lower()
    if lowered in ("true", "yes", "1"):
        return True
    if lowered in ("false", "no", "0"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def _parse_int_tuple(raw: str) -> tuple[int, ...]:
    return tuple(int(p) for p in raw.split(",") if p.strip())


_MODEL_KEYS = {
    "feature_kinds": feature_list,
    "bilstm1_hidden": int,
    "bilstm2_hidden": int,
    "dense_hidden": int,
    "cnn_channels": _parse_int_tuple,
    "cnn_blocks_per_stage": int,
    "dropout": float,
    "image_size": int,
    "frame_stride": int,
    "bidirectional": _parse_bool,
}

_TRAIN_KEYS = {
    "lr": float,
    "batch_size": int,
    "epochs": int,
    "optimizer": str,
    "split_ratio": float,
}


def build_configs(overrides: dict[str, str], n_classes: int,
                  seed: int) -> tuple[ModelConfig, TrainConfig]:
    """Configs from flat key=value overrides. The scale key picks the
    base model: "miniature" (default, desk-sized) or "full"."""
    overrides = dict(overrides)
    scale = overrides.pop("scale", "miniature")
    if scale == "full":
        base = ModelConfig(n_classes=n_classes)
    elif scale == "miniature":
        base = miniature_config(n_classes=n_classes)
    else:
        raise DataError(f"scale must be miniature or full, got {scale!r}")

    model_kwargs = {}
    train_kwargs = {}
    for key, raw in overrides.items():
        try:
            if key in _MODEL_KEYS:
                model_kwargs[key] = _MODEL_KEYS[key](raw)
            elif key in _TRAIN_KEYS:
                train_kwargs[key] = _TRAIN_KEYS[key](raw)
            else:
                raise DataError(f"unknown config key {key!r}")
        except ValueError as exc:
            raise DataError(f"config key {key}: {exc}") from None
    return (replace(base, **model_kwargs),
            TrainConfig(seed=seed, **train_kwargs))


# ----- shared plumbing ------------------------------------------------------------


def _load_manifest_and_root(path):
    manifest = load_manifest(path)
    return manifest, Path(path).parent


def _restored_model(args) -> SentimentModel:
    overrides = read_config_file(args.config) if args.config else {}
    config, _ = build_configs(overrides, args.classes, seed=0)
    model = SentimentModel(config, seed=0)
    load_into(model.named_parameters(), args.checkpoint)
    return model


def write_pgm(path, pixels: np.ndarray) -> None:
    """8-bit binary PGM (P5) from pixel values in [0, 1]."""
    data = np.clip(np.rint(pixels * 255.0), 0, 255).astype(np.uint8)
    h, w = data.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + data.tobytes())


# ----- subcommands ----------------------------------------------------------------


def cmd_extract(args) -> int:
    manifest, root = _load_manifest_and_root(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def one(record) -> None:
        clip = load_clip(root / record.audio_path)
        matrix = extract_features(clip, args.features)
        write_feature_file(out / f"{record.utterance_id}.asvf", matrix)

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            list(pool.map(one, manifest.records))
    else:
        for record in manifest.records:
            one(record)
    print(f"wrote {len(manifest.records)} feature files to {out}")
    return 0


def cmd_render(args) -> int:
    manifest, root = _load_manifest_and_root(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for record in manifest.records:
        clip = load_clip(root / record.audio_path)
        image = render_spectrogram_image(clip, size=args.size)
        write_pgm(out / f"{record.utterance_id}.pgm", image.pixels)
    print(f"wrote {len(manifest.records)} spectrogram images to {out}")
    return 0


def cmd_train(args) -> int:
    seed = resolve_seed(args.seed)
    overrides = read_config_file(args.config) if args.config else {}
    model_config, train_config = build_configs(overrides, args.classes, seed)
    manifest, root = _load_manifest_and_root(args.manifest)

    train_m, test_m = split_dataset(manifest, train_config.split_ratio, seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    # split manifests point at the audio by absolute path so they stay
    # valid when read from the output directory
    for part, name in ((train_m, "train_split.csv"), (test_m, "test_split.csv")):
        absolute = [replace(r, audio_path=str((root / r.audio_path).resolve()))
                    for r in part.records]
        write_manifest(type(part)(absolute), out / name)

    dataset = prepare_dataset(train_m, model_config, root=root)
    model = SentimentModel(model_config, seed=seed)
    result = train(model, dataset, train_config,
                   checkpoint_path=out / "checkpoint.asvm",
                   curves_path=out / "curves.csv")
    final = result.final
    print(f"train utterances {len(train_m.records)}, "
          f"test utterances {len(test_m.records)}")
    print(f"epoch {final.epoch}: loss {final.loss!r}, "
          f"accuracy {final.accuracy!r}")
    print(f"checkpoint {out / 'checkpoint.asvm'}")
    print(f"curves {out / 'curves.csv'}")
    return 0


def cmd_evaluate(args) -> int:
    model = _restored_model(args)
    manifest, root = _load_manifest_and_root(args.manifest)
    dataset = prepare_dataset(manifest, model.config, root=root)
    report = evaluate_model(model, dataset)
    print(report.to_text())
    print(report.to_json())
    return 0


def cmd_predict(args) -> int:
    model = _restored_model(args)
    clip = load_clip(args.wav)
    label, probabilities, _ = predict_window(model, [clip, clip, clip])
    print(f"class: {label}")
    print(f"probabilities: {json.dumps(probabilities.tolist())}")
    return 0


def cmd_export_asv(args) -> int:
    model = _restored_model(args)
    manifest, root = _load_manifest_and_root(args.manifest)
    count = export_asv(model, manifest, args.out, root=root)
    print(f"wrote {count} vectors to {args.out}")
    return 0


def cmd_sweep(args) -> int:
    seed = resolve_seed(args.seed)
    overrides = read_config_file(args.config) if args.config else {}
    model_config, train_config = build_configs(overrides, args.classes[0], seed)
    manifest, root = _load_manifest_and_root(args.manifest)
    rows = feature_sweep(
        manifest, args.out, args.ledger,
        sizes=args.sizes, model_kinds=args.models, schemes=args.classes,
        config=model_config, train_config=train_config,
        root=root, jobs=args.jobs)
    best = rows[0]
    print(f"{len(rows)} cells ranked into {args.out}")
    print(f"best: {best['combination']} ({best['model']}), "
          f"accuracy {best['accuracy'][str(args.classes[0])]!r}")
    return 0


def cmd_gradcheck(args) -> int:
    seed = resolve_seed(args.seed)
    report = standard_suite(seed=seed)
    print(report.to_text())
    ok = report.passed
    if args.full:
        result = gradcheck_full_model(seed=seed)
        status = "ok" if result.passed else "FAILED"
        print(f"{result.name}: max rel error {result.max_rel_error:.3e} "
              f"({result.worst_param}) [{status}]")
        ok = ok and result.passed
    return 0 if ok else 2


# ----- parser ---------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; this tool reserves 2 for data
    errors, so usage problems exit 1 instead."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> _Parser:
    parser = _Parser(prog="asvkit",
                     description="Audio sentiment vectors from wav files.")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("extract", help="write per-utterance feature files")
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", type=_feature_arg, default=BEST_FOUR,
                   help="comma-separated feature names (aliases: centroid, contrast)")
    p.add_argument("--out", required=True, help="output directory for .asvf files")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("render", help="write spectrogram images as PGM")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output directory for .pgm files")
    p.add_argument("--size", type=int, default=512)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("train", help="split, train, and checkpoint a model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--classes", type=_classes_arg, default=2)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--classes", type=_classes_arg, default=2)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="classify a single wav file")
    p.add_argument("--wav", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--classes", type=_classes_arg, default=2)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("sweep", help="rank feature combinations")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="ranked CSV path")
    p.add_argument("--ledger", required=True, help="resume ledger path")
    p.add_argument("--sizes", type=_size_list_arg,
                   default=tuple(range(1, len(ALL_FEATURES) + 1)))
    p.add_argument("--models", type=_model_list_arg, default=("lstm", "bilstm"))
    p.add_argument("--classes", type=_scheme_list_arg, default=(2,))
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("export-asv", help="write sentiment vectors for a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--classes", type=_classes_arg, default=2)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_asv)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--full", action="store_true",
                   help="also check the assembled two-branch model")
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        if isinstance(exc.code, int):
            return exc.code
        return 0 if exc.code is None else 1
    try:
        return args.func(args)
    except _DATA_ERRORS as exc:
        sys.stderr.write(f"asvkit: error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
