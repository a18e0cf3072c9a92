"""
Command-line pipeline: synth, train, eval, cam, attention.

Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
"""

import argparse
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from .analysis import RegionBands, TableStyle, aggregate_attention, report_table
from .cam import CamResult, class_activation_map, render_overlay
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_run_config, settings
from .data import DatasetManifest, load_manifest, load_sample, save_manifest, split
from .errors import CamError, ConfigError, GDCNNError, ManifestNotFoundError
from .logger import setup_logger
from .model import CLASS_NAMES, ModelConfig, Parameters
from .monitoring import metrics
from .synthetic import generate_synthetic_dataset
from .training import TrainHyper, evaluate, history_to_csv, train

logger = setup_logger(__name__)

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2
CHECKPOINT_NAME = "model.gdcn"
HISTORY_NAME = "history.csv"
METRICS_NAME = "metrics.csv"
PREDICTIONS_NAME = "predictions.csv"
ATTENTION_NAME = "attention.csv"
ATTENTION_IMAGES_NAME = "attention_images.csv"


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _key_value(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    key, value = text.split("=", 1)
    return key.strip(), value.strip()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gdcnn", description="Hand-radiograph gender CNN with class activation maps")
    commands = parser.add_subparsers(dest="command", required=True)

    def add_common(sub):
        sub.add_argument("--config", type=Path, help="flat key = value run configuration")
        sub.add_argument("--seed", type=int, help="overrides the config seed")
        sub.add_argument("--out", type=Path, help="output directory")
        sub.add_argument("--set", dest="overrides", type=_key_value, action="append", default=[],
                         metavar="KEY=VALUE", help="override one config key")
        return sub

    synth = add_common(commands.add_parser("synth", help="write a synthetic two-class dataset"))
    synth.add_argument("--n", type=_positive_int, required=True, help="images per class")

    training = add_common(commands.add_parser("train", help="train and write checkpoint + history"))
    training.add_argument("--manifest", type=Path)

    for name, text in (("eval", "per-class metrics report"),
                       ("cam", "class activation maps and overlays"),
                       ("attention", "attention-region histogram")):
        sub = add_common(commands.add_parser(name, help=text))
        sub.add_argument("--checkpoint", type=Path, required=True)
        sub.add_argument("--manifest", type=Path)
        if name == "cam":
            sub.add_argument("--class", dest="target_class", type=int, choices=(0, 1),
                             help="render this class instead of the predicted one")
    return parser


def _run_config(args) -> RunConfig:
    overrides = dict(args.overrides)
    for key, value in (("seed", args.seed), ("out_dir", args.out), ("manifest", getattr(args, "manifest", None))):
        if value is not None:
            overrides[key] = value
    return load_run_config(args.config, overrides)


def _require_manifest(cfg: RunConfig) -> DatasetManifest:
    if cfg.manifest is None:
        raise ConfigError("a manifest path is required (--manifest or 'manifest' config key)")
    return load_manifest(cfg.manifest)


def _bands(cfg: RunConfig) -> RegionBands:
    try:
        return RegionBands(
            phalanges_end=cfg.phalanges_end, metacarpals_end=cfg.metacarpals_end, carpals_end=cfg.carpals_end,
            forearm_split=cfg.forearm_split, threshold=cfg.attention_threshold, min_overlap=cfg.min_overlap,
            mirror=cfg.mirror
        )
    except ValueError as e:
        raise ConfigError(f"invalid region bands: {e}") from e


def cmd_synth(args) -> Path:
    cfg = _run_config(args)
    manifest = generate_synthetic_dataset(args.n, cfg.seed, cfg.out_dir)
    path = cfg.out_dir / "manifest.csv"
    counts = manifest.class_counts()
    print(f"manifest: {path}")
    print(f"classes: {CLASS_NAMES[0]}={counts[0]} {CLASS_NAMES[1]}={counts[1]}")
    return path


def cmd_train(args) -> Path:
    cfg = _run_config(args)
    manifest = _require_manifest(cfg)
    train_set, val_set, test_set = split(manifest, cfg.fractions, cfg.seed)
    for name, part in (("train", train_set), ("val", val_set), ("test", test_set)):
        save_manifest(part, cfg.out_dir / "splits" / f"{name}.csv")

    try:
        config = ModelConfig(input_size=cfg.input_size, conv_filters=cfg.conv_filters, head=cfg.head,
                             dense_hidden=cfg.dense_hidden, dropout_rate=cfg.dropout_rate)
    except ValueError as e:
        raise ConfigError(f"invalid model configuration: {e}") from e
    hyper = TrainHyper(batch_size=cfg.batch_size, epochs=cfg.epochs, lr=cfg.lr, seed=cfg.seed,
                       noise_sigma=cfg.noise_sigma, augment=cfg.augment)

    params, history = train(config, train_set, hyper, val_set=val_set)
    checkpoint = save_checkpoint(params, config, cfg.out_dir / CHECKPOINT_NAME)
    history_path = cfg.out_dir / HISTORY_NAME
    history_path.write_text(history_to_csv(history), encoding="utf-8")
    print(f"checkpoint: {checkpoint}")
    print(f"history: {history_path}")
    return checkpoint


def cmd_eval(args) -> Path:
    cfg = _run_config(args)
    params, config = load_checkpoint(args.checkpoint)
    manifest = _require_manifest(cfg)
    counts, _ = evaluate(params, config, manifest)
    table = report_table([(name, counts[name]) for name in CLASS_NAMES], TableStyle.STANDARD)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    path = cfg.out_dir / METRICS_NAME
    path.write_text(table, encoding="utf-8")
    print(table, end="")
    return path


def _cam_results(params: Parameters, config: ModelConfig, manifest: DatasetManifest,
                 target_class: Optional[int], method: str) -> list[tuple[str, int, CamResult, np.ndarray]]:
    """CAM for every manifest row, in manifest order; verifies the score identity per image"""
    if config.head != "gap":
        raise CamError("CAM requires gap head")

    def run(row):
        sample = load_sample(manifest, row, config.input_size)
        return sample, class_activation_map(params, config, sample.image, target_class, method=method)

    with ThreadPoolExecutor(max_workers=settings.MAX_WORKERS) as pool:
        outcomes = list(pool.map(run, manifest.rows))

    # tallies are recorded on this thread only
    results = []
    for sample, result in outcomes:
        holds = result.identity.holds()
        metrics.record_cam(holds)
        logger.info(f"{sample.sample_id}: class {result.class_index} score {result.identity.score:.6g} "
                    f"map total {result.identity.map_total:.6g} identity {'ok' if holds else 'FAILED'}")
        results.append((sample.sample_id, sample.label, result, sample.image))
    return results


def _check_identities(results):
    failed = [sample_id for sample_id, _, result, _ in results if not result.identity.holds()]
    if failed:
        raise CamError(f"CAM score identity failed for {len(failed)} image(s): {', '.join(failed[:5])}")


def cmd_cam(args) -> Path:
    cfg = _run_config(args)
    params, config = load_checkpoint(args.checkpoint)
    if config.head != "gap":
        raise CamError("CAM requires gap head")
    manifest = _require_manifest(cfg)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    results = _cam_results(params, config, manifest, args.target_class, cfg.upsample)

    records = []
    for sample_id, label, result, image in results:
        render_overlay(image, result.heatmap, cfg.out_dir / sample_id)
        records.append((sample_id, label, result.prediction.label, f"{result.prediction.probability:.3f}",
                        result.class_index))
    path = cfg.out_dir / PREDICTIONS_NAME
    pd.DataFrame(records, columns=["id", "label", "predicted", "probability", "cam_class"]).to_csv(
        path, index=False, lineterminator="\n")
    print(f"wrote {2 * len(results)} maps to {cfg.out_dir}")
    _check_identities(results)
    return path


def cmd_attention(args) -> Path:
    cfg = _run_config(args)
    params, config = load_checkpoint(args.checkpoint)
    if config.head != "gap":
        raise CamError("CAM requires gap head")
    manifest = _require_manifest(cfg)
    if len(manifest) == 0:
        raise ConfigError(f"manifest {cfg.manifest} has no rows")
    bands = _bands(cfg)
    results = _cam_results(params, config, manifest, None, cfg.upsample)

    histogram = aggregate_attention((result.heatmap for _, _, result, _ in results), bands)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    path = cfg.out_dir / ATTENTION_NAME
    path.write_text(histogram.to_csv(), encoding="utf-8")
    pd.DataFrame(
        [(sample_id, "+".join(sorted(regions)))
         for (sample_id, _, _, _), regions in zip(results, histogram.image_regions)],
        columns=["id", "regions"]
    ).to_csv(cfg.out_dir / ATTENTION_IMAGES_NAME, index=False, lineterminator="\n")
    print(histogram.to_csv(), end="")
    _check_identities(results)
    return path


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "cam": cmd_cam,
    "attention": cmd_attention,
}


def main(argv: Optional[list[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    try:
        COMMANDS[args.command](args)
        return EXIT_OK
    except (ConfigError, ManifestNotFoundError) as e:
        logger.error(f"{args.command}: {e}")
        return EXIT_USAGE
    except GDCNNError as e:
        logger.error(f"{args.command}: {e}")
        return EXIT_FAILURE
    except Exception as e:
        logger.error(f"Unexpected error in {args.command}: {e}", exc_info=True)
        raise
    finally:
        logger.info(f"{args.command} finished, stats: {metrics.get_stats()}")
        metrics.flush()
