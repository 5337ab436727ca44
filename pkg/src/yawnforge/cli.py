"""Command line front end for the labeling pipeline.

One subcommand per stage. Each stage prints a JSON summary to stdout and
drops a machine-readable run record (config hash, seeds, versions) next to
its output so a run can be audited and reproduced. `--store` falls back to
the YAWNFORGE_STORE environment variable, then to `paths.store` in the
config file.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
from pathlib import Path

from . import __version__, netspec
from .config import PipelineConfig
from .errors import ConfigError, DatasetError, YawnforgeError

logger = logging.getLogger(__name__)


class JsonLineHandler(logging.Handler):
    """One JSON object per log record, for scriptable assertions."""

    def __init__(self, path: str):
        super().__init__()
        self.path = path

    def emit(self, record):
        line = json.dumps({
            "ts": record.created,
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
        }, sort_keys=True)
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")


def _store_dir(args, cfg: PipelineConfig) -> Path:
    value = (getattr(args, "store", None)
             or os.environ.get("YAWNFORGE_STORE")
             or cfg.get("paths.store"))
    if not value:
        raise ConfigError(
            "no annotation store given: pass --store DIR, set YAWNFORGE_STORE, "
            "or set paths.store in the config"
        )
    return Path(value)


def _run_info(cfg: PipelineConfig | None = None) -> dict:
    info = {
        "yawnforge_version": __version__,
        "python_version": platform.python_version(),
    }
    if cfg is not None:
        info["config_hash"] = cfg.hash()
        info["seeds"] = {
            "train": cfg.get("train.seed"),
            "split": cfg.get("train.split_seed"),
            "export": cfg.get("export.seed"),
        }
    return info


def _emit(summary: dict, record_path: Path | None = None) -> None:
    text = json.dumps(summary, indent=2, sort_keys=True, default=str)
    print(text)
    if record_path is not None:
        record_path.parent.mkdir(parents=True, exist_ok=True)
        record_path.write_text(text + "\n", encoding="utf-8")


def _cfg(args, overrides: dict | None = None) -> PipelineConfig:
    return PipelineConfig.load(args.config, overrides or {})


def _flag_overrides(args, mapping: dict[str, str]) -> dict:
    """argparse dest -> dotted config key, skipping flags the user left unset."""
    out = {}
    for dest, dotted in mapping.items():
        value = getattr(args, dest, None)
        if value is not None:
            out[dotted] = value
    return out


def cmd_synth(args) -> int:
    from .fixtures import make_fixture_corpus, write_mouth_dataset

    out = Path(args.out)
    truth = make_fixture_corpus(
        out / "corpus",
        n_videos=args.videos,
        frames_per_video=args.frames_per_video,
    )
    mouths = write_mouth_dataset(out / "mouths", n=args.mouth_images, seed=args.seed)
    _emit({
        "command": "synth",
        "corpus_dir": str(out / "corpus"),
        "truth": truth.path,
        "videos": sorted(truth.videos),
        "corpus_labels": truth.label_counts(),
        "mouth_dataset": mouths,
        **_run_info(),
    }, record_path=out / "run_synth.json")
    return 0


def cmd_ingest(args) -> int:
    from .ingest import build_corpus_manifest, extract_corpus, save_manifest

    cfg = _cfg(args, _flag_overrides(args, {
        "stride": "ingest.stride", "image_format": "ingest.image_format",
    }))
    view_mapping = cfg.get("corpus.view_mapping")
    if args.view_mapping:
        view_mapping = json.loads(Path(args.view_mapping).read_text(encoding="utf-8"))
    manifest = build_corpus_manifest(args.root, view_mapping=view_mapping)
    out = Path(args.out)
    extract_corpus(
        manifest, out,
        stride=int(cfg.get("ingest.stride")),
        image_format=cfg.get("ingest.image_format"),
    )
    manifest_path = out / "manifest.json"
    save_manifest(manifest, manifest_path)
    _emit({
        "command": "ingest",
        "manifest": str(manifest_path),
        "corpus_id": manifest.corpus_id,
        "videos": len(manifest.videos),
        "total_frames": manifest.total_frames,
        "stills": sum(len(v) for v in manifest.frames.values()),
        "stride": cfg.get("ingest.stride"),
        **_run_info(cfg),
    }, record_path=out / "run_ingest.json")
    return 0


def cmd_train(args) -> int:
    from .training import train_directory

    cfg = _cfg(args, _flag_overrides(args, {
        "epochs": "train.epochs",
        "batch_size": "train.batch_size",
        "learning_rate": "train.learning_rate",
        "seed": "train.seed",
        "augment_multiplier": "train.augmentation_multiplier",
    }))
    out = Path(args.out)
    artifact = train_directory(args.data, out_path=out, config=cfg.train_config())
    _emit({
        "command": "train",
        "model": str(out),
        "data": str(args.data),
        "metrics": artifact.metrics,
        "parameters": netspec.count_parameters(artifact.spec).total,
        **_run_info(cfg),
    }, record_path=out.with_suffix(out.suffix + ".run.json"))
    return 0


def _build_classifier(args, cfg: PipelineConfig):
    model = args.model or cfg.get("paths.model")
    if model:
        from .model import ArtifactClassifier

        return ArtifactClassifier(model)
    if args.classifier == "mean":
        from .fixtures import MeanIntensityClassifier

        return MeanIntensityClassifier()
    raise ConfigError(
        "no classifier configured: run train first "
        "(yawnforge train --data DIR --out model.yfz) and supply --model, "
        "or pass --classifier mean for synthetic corpora"
    )


def cmd_annotate(args) -> int:
    from .annotate import auto_annotate
    from .backends import DetectorConfig
    from .ingest import load_manifest

    cfg = _cfg(args, _flag_overrides(args, {
        "detector": "detector.backend",
        "mesh": "mesh.backend",
        "margin_px": "mouth.margin_px",
    }))
    detector_section = cfg.section("detector")
    det_options = dict(detector_section["options"])
    mesh_options = dict(cfg.get("mesh.options"))
    if args.truth:
        det_options.setdefault("truth", args.truth)
        mesh_options.setdefault("truth", args.truth)
    det_cfg = DetectorConfig(
        confidence_threshold=float(detector_section["confidence_threshold"]),
        nms_iou_threshold=float(detector_section["nms_iou_threshold"]),
        backend_id=detector_section["backend"],
        options=det_options,
    )
    manifest = load_manifest(args.manifest)
    store_dir = _store_dir(args, cfg)
    report = auto_annotate(
        manifest,
        classifier=_build_classifier(args, cfg),
        store_dir=store_dir,
        detector_cfg=det_cfg,
        mesh_backend=cfg.get("mesh.backend"),
        mesh_options=mesh_options,
        margin_px=int(cfg.get("mouth.margin_px")),
    )
    summary = report.to_dict()
    summary.update({"command": "annotate", "store": str(store_dir), **_run_info(cfg)})
    _emit(summary, record_path=store_dir / "run_annotate.json")
    return 0


def cmd_serve(args) -> int:  # pragma: no cover - blocks on uvicorn
    from .server import serve

    cfg = _cfg(args, _flag_overrides(args, {
        "host": "review.host", "port": "review.port", "reviewers": "review.reviewers",
    }))
    reviewers = cfg.get("review.reviewers")
    if not reviewers:
        raise ConfigError(
            "no reviewer allow-list: pass --reviewers reviewers.json "
            "(a JSON list of names) or set review.reviewers in the config"
        )
    serve(
        _store_dir(args, cfg),
        reviewers,
        host=cfg.get("review.host"),
        port=int(cfg.get("review.port")),
        ui_dir=args.ui,
    )
    return 0


def cmd_export(args) -> int:
    from .export import export_classification, export_detection
    from .store import AnnotationStore

    cfg = _cfg(args, _flag_overrides(args, {
        "include": "export.include",
        "split": "export.train_fraction",
        "seed": "export.seed",
    }))
    store = AnnotationStore.open(_store_dir(args, cfg))
    out = Path(args.out)
    if args.layout == "classification":
        summary = export_classification(store, out, include=cfg.get("export.include"))
    else:
        summary = export_detection(
            store, out,
            include=cfg.get("export.include"),
            train_fraction=float(cfg.get("export.train_fraction")),
            seed=int(cfg.get("export.seed")),
        )
    summary.update({"command": "export", "out_dir": str(out), **_run_info(cfg)})
    _emit(summary, record_path=out / "run_export.json")
    return 0


def cmd_stats(args) -> int:
    from .errors import NothingVerifiedError
    from .export import class_balance, timeline_report
    from .store import AnnotationStore

    cfg = _cfg(args)
    store = AnnotationStore.open(_store_dir(args, cfg))
    try:
        agreement = store.agreement_report()
    except NothingVerifiedError:
        agreement = None
    summary = {
        "command": "stats",
        "progress": store.progress(),
        "class_balance": class_balance(store, include="all"),
        "agreement": agreement,
        "timeline": timeline_report(store, video_id=args.video, plot_path=args.plot),
        **_run_info(cfg),
    }
    if args.plot:
        summary["timeline_plot"] = str(args.plot)
    _emit(summary)
    return 0


def cmd_model(args) -> int:
    if args.action != "inspect":
        raise ConfigError(f"unknown model action {args.action!r}")
    if args.artifact:
        from .model import ModelArtifact

        artifact = ModelArtifact.load(args.artifact)
        print(netspec.format_parameter_table(artifact.spec))
        _emit({"metrics": artifact.metrics, "meta": artifact.meta,
               "preprocessing": artifact.preprocessing})
    else:
        print(netspec.format_parameter_table(netspec.build_network()))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="yawnforge",
        description="Semi-automated frame labeling for yawning video corpora.",
    )
    parser.add_argument("--config", help="YAML pipeline configuration file")
    parser.add_argument("--log-level", default="INFO",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    parser.add_argument("--log-json", help="append structured JSONL logs to this file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic demo corpus and mouth dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--videos", type=int, default=2)
    p.add_argument("--frames-per-video", type=int, default=10)
    p.add_argument("--mouth-images", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="discover videos, extract stills, write the manifest")
    p.add_argument("--root", required=True, help="directory holding the source videos")
    p.add_argument("--out", required=True, help="workdir for stills and manifest.json")
    p.add_argument("--stride", type=int)
    p.add_argument("--image-format", choices=["png", "jpg"])
    p.add_argument("--view-mapping", help="JSON file with filename-pattern rules")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train the mouth-state classifier")
    p.add_argument("--data", required=True, help="dataset root with yawn/ and no_yawn/")
    p.add_argument("--out", required=True, help="output model artifact (.yfz)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--augment-multiplier", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("annotate", help="run the machine pass over a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--store", help="annotation store directory (or YAWNFORGE_STORE)")
    p.add_argument("--model", help="trained .yfz classifier")
    p.add_argument("--classifier", choices=["mean"],
                   help="built-in classifier for synthetic corpora")
    p.add_argument("--detector", help="face detector backend id")
    p.add_argument("--mesh", help="landmark backend id")
    p.add_argument("--truth", help="fixture truth.json (for the fixture backends)")
    p.add_argument("--margin-px", type=int)
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("serve", help="run the review API and UI")
    p.add_argument("--store", help="annotation store directory (or YAWNFORGE_STORE)")
    p.add_argument("--reviewers", help="JSON allow-list of reviewer names")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--ui", help="directory with the built review UI")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("export", help="write a training dataset from the store")
    p.add_argument("--store", help="annotation store directory (or YAWNFORGE_STORE)")
    p.add_argument("--out", required=True)
    p.add_argument("--layout", choices=["classification", "detection"], required=True)
    p.add_argument("--include", choices=["verified_only", "all"])
    p.add_argument("--split", type=float, help="train fraction for the detection split")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("stats", help="progress, class balance, agreement, timelines")
    p.add_argument("--store", help="annotation store directory (or YAWNFORGE_STORE)")
    p.add_argument("--video", help="restrict the timeline to one video id")
    p.add_argument("--plot", help="write a timeline step plot to this PNG path")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("model", help="model artifact utilities")
    p.add_argument("action", choices=["inspect"])
    p.add_argument("artifact", nargs="?", help=".yfz path; omit for the default architecture")
    p.set_defaults(func=cmd_model)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    root = logging.getLogger()
    root.setLevel(getattr(logging, args.log_level))
    for handler in list(root.handlers):
        if isinstance(handler, JsonLineHandler):
            root.removeHandler(handler)
    if args.log_json:
        root.addHandler(JsonLineHandler(args.log_json))
    try:
        return args.func(args)
    except (ConfigError, DatasetError) as exc:
        print(json.dumps({"error": str(exc), "type": type(exc).__name__}),
              file=sys.stderr)
        return 2
    except YawnforgeError as exc:
        print(json.dumps({"error": str(exc), "type": type(exc).__name__}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
