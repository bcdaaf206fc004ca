"""Command-line front end for the streaming detection pipeline."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .clustering import ClusterRegistry
from .config import ConfigError, PipelineConfig
from .core import Box
from .evaluate import (cluster_purity, detection_pr, gt_index, recall_at_n,
                       temporal_consistency)
from .imio import (list_frames, load_edge_map, read_ppm, resize_nearest,
                   write_jsonl, write_pgm)
from .motion import load_flow
from .propagation import (ClassifierProtocolError, StreamStats, detect_stream,
                          make_classifier, stream_cluster)
from .segmentation import foreground_prior, prior_mask
from .synth import render, spec_from_dict, write_video

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_CLASSIFIER = 4


def _add_config_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--config", metavar="PATH", help="JSON config file")
    parser.add_argument("--lambda", dest="lam", type=float, metavar="F",
                        help="temporal edge weight in [0, 1]")
    parser.add_argument("--subseq-len", type=int, metavar="N")
    parser.add_argument("--k", metavar="N|auto",
                        help="cluster count, or 'auto' for self-tuning")
    parser.add_argument("--rho", type=float, metavar="F")
    parser.add_argument("--tau-kl", type=float, metavar="F")
    parser.add_argument("--max-proposals", type=int, metavar="N")
    parser.add_argument("--classifier", metavar="oracle|cmd:PATH|always")
    parser.add_argument("--seed", type=int, metavar="N")
    parser.add_argument("--resize", type=int, metavar="N",
                        help="square resize target; 0 keeps the native size")


def _build_config(args) -> PipelineConfig:
    config = (PipelineConfig.from_file(args.config) if args.config
              else PipelineConfig())
    overrides = {}
    for name in ("lam", "subseq_len", "rho", "tau_kl", "max_proposals",
                 "classifier", "seed"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    k = getattr(args, "k", None)
    if k is not None:
        if k == "auto":
            overrides["self_tune"] = True
        else:
            try:
                overrides["k"] = int(k)
            except ValueError:
                raise ConfigError(f"--k must be an integer or 'auto', got {k!r}")
    resize = getattr(args, "resize", None)
    if resize is not None:
        overrides["resize"] = None if resize == 0 else resize
    return config.replace(**overrides)


def _load_frames(frames_dir, config: PipelineConfig):
    paths = list_frames(frames_dir)
    if not paths:
        raise FileNotFoundError(f"no .ppm frames found in {frames_dir}")
    frames = [read_ppm(p) for p in paths]
    if config.resize is not None:
        target = (config.resize, config.resize)
        frames = [resize_nearest(f, target) for f in frames]
    return frames, paths


def _flow_source(frames, flow_dir):
    if flow_dir is None:
        return None
    paths = list_frames(flow_dir, suffix=".flo")
    if len(paths) < len(frames) - 1:
        raise FileNotFoundError(
            f"{flow_dir}: found {len(paths)} flow files for "
            f"{len(frames)} frames (need {len(frames) - 1})")
    shape = np.asarray(frames[0]).shape

    def lookup(i: int):
        return load_flow(paths[i], frame_shape=shape)
    return lookup


def _edge_map_source(frames, config: PipelineConfig):
    if config.edges_dir is None:
        return None
    paths = list_frames(config.edges_dir, suffix=".pgm")

    def lookup(i: int):
        if i < len(paths):
            return load_edge_map(paths[i])
        return None
    return lookup


def cmd_synth(args) -> int:
    with open(args.spec, "r", encoding="utf-8") as fh:
        spec = spec_from_dict(json.load(fh))
    video = render(spec)
    os.makedirs(args.out, exist_ok=True)
    write_video(video, args.out)
    print(f"wrote {spec.n_frames} frames, {len(video.flows)} flow files and "
          f"gt.json under {args.out}")
    return EXIT_OK


def cmd_propose(args) -> int:
    config = _build_config(args)
    frames, _ = _load_frames(args.frames_dir, config)
    flow_source = _flow_source(frames, args.flow_dir)
    edge_maps = _edge_map_source(frames, config)
    seen: set[int] = set()
    records = []
    for rec in stream_cluster(frames, flow_source, config,
                              registry=ClusterRegistry(), stats=StreamStats(),
                              edge_maps=edge_maps):
        for p in rec.proposals:
            if p.frame_index in seen:
                continue
            records.append({"frame": p.frame_index, "x": p.box.x, "y": p.box.y,
                            "w": p.box.w, "h": p.box.h,
                            "score": round(p.score, 6)})
        seen.update(rec.frame_ids)
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "proposals.jsonl")
    write_jsonl(out_path, records)
    print(f"wrote {len(records)} proposals to {out_path}")
    return EXIT_OK


def cmd_cluster(args) -> int:
    config = _build_config(args)
    frames, _ = _load_frames(args.frames_dir, config)
    flow_source = _flow_source(frames, args.flow_dir)
    edge_maps = _edge_map_source(frames, config)
    records = []
    for rec in stream_cluster(frames, flow_source, config,
                              edge_maps=edge_maps):
        emit = set(rec.emit_frames)
        for idx, p in enumerate(rec.proposals):
            if p.frame_index not in emit:
                continue
            records.append({"frame": p.frame_index, "x": p.box.x, "y": p.box.y,
                            "w": p.box.w, "h": p.box.h,
                            "local_cluster": int(rec.labels[idx]),
                            "global_id": rec.global_ids[int(rec.labels[idx])]})
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "clusters.jsonl")
    write_jsonl(out_path, records)
    print(f"wrote {len(records)} cluster assignments to {out_path}")
    return EXIT_OK


def cmd_detect(args) -> int:
    config = _build_config(args)
    frames, paths = _load_frames(args.frames_dir, config)
    flow_source = _flow_source(frames, args.flow_dir)
    edge_maps = _edge_map_source(frames, config)
    classifier, always = make_classifier(config.classifier, config.classes)
    if always:
        config = config.replace(classify_always=True)
    os.makedirs(args.out, exist_ok=True)
    det_path = os.path.join(args.out, "detections.jsonl")
    stats_path = os.path.join(args.out, "stats.json")
    try:
        detections, stats, _ = detect_stream(
            frames, flow_source, config, classifier,
            frame_paths=paths if config.resize is None else None,
            edge_maps=edge_maps)
    except ClassifierProtocolError as exc:
        if exc.partial is not None:
            detections, stats = exc.partial
            write_jsonl(det_path, [d.to_record() for d in detections])
            with open(stats_path, "w", encoding="utf-8") as fh:
                json.dump(stats.to_record(), fh, indent=2)
        print(f"classifier protocol failure: {exc}", file=sys.stderr)
        return EXIT_CLASSIFIER
    finally:
        if hasattr(classifier, "close"):
            classifier.close()
    write_jsonl(det_path, [d.to_record() for d in detections])
    with open(stats_path, "w", encoding="utf-8") as fh:
        json.dump(stats.to_record(), fh, indent=2)
    print(f"wrote {len(detections)} detections to {det_path}")
    print(json.dumps(stats.to_record(), indent=2))
    return EXIT_OK


def cmd_segment_prior(args) -> int:
    config = _build_config(args)
    frames, _ = _load_frames(args.frames_dir, config)
    height, width = np.asarray(frames[0]).shape[:2]
    from .imio import read_jsonl
    records = read_jsonl(args.clusters)
    by_key: dict = {}
    for rec in records:
        by_key.setdefault((rec["frame"], rec["global_id"]), []).append(
            Box(rec["x"], rec["y"], rec["w"], rec["h"]))
    os.makedirs(args.out, exist_ok=True)
    index = []
    for (frame, gid), boxes in sorted(by_key.items()):
        prior = foreground_prior(boxes, (width, height))
        mask = prior_mask(prior, args.threshold)
        prior_name = f"prior_f{frame:05d}_c{gid}.pgm"
        mask_name = f"mask_f{frame:05d}_c{gid}.pgm"
        write_pgm(os.path.join(args.out, prior_name),
                  np.round(prior * 255).astype(np.uint8))
        write_pgm(os.path.join(args.out, mask_name), mask)
        index.append({"frame": frame, "global_id": gid, "boxes": len(boxes),
                      "prior": prior_name, "mask": mask_name})
    write_jsonl(os.path.join(args.out, "priors.jsonl"), index)
    print(f"wrote {len(index)} prior/mask pairs to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .imio import read_jsonl
    with open(args.gt, "r", encoding="utf-8") as fh:
        gt_doc = json.load(fh)
    gts = gt_index(gt_doc)
    preds = read_jsonl(args.pred)
    if args.mode == "recall":
        by_frame: dict = {}
        for rec in preds:
            by_frame.setdefault(rec["frame"], []).append(rec)
        ns = [int(v) for v in args.at.split(",")] if args.at else [10, 50, 100]
        metrics = {f"recall@{n}": recall_at_n(by_frame, gts, n) for n in ns}
    elif args.mode == "purity":
        metrics = {"purity": cluster_purity(preds, gts)}
    elif args.mode == "consistency":
        metrics = {"consistency": temporal_consistency(preds, gts)}
    else:
        metrics = {"detection": detection_pr(preds, gts, gt_doc["classes"])}
    text = json.dumps(metrics, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="streamdet",
        description="Streaming video object detection through proposal "
                    "clustering and class-label propagation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic test video")
    p.add_argument("--spec", required=True, help="synthetic video spec (JSON)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("propose", help="emit ranked proposals per frame")
    p.add_argument("frames_dir")
    p.add_argument("--flow-dir", help="directory of .flo files (frame t -> t+1)")
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_propose)

    p = sub.add_parser("cluster", help="emit streaming cluster assignments")
    p.add_argument("frames_dir")
    p.add_argument("--flow-dir")
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("detect", help="run the full detection loop")
    p.add_argument("frames_dir")
    p.add_argument("--flow-dir")
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("segment-prior",
                       help="foreground priors and masks from clusters")
    p.add_argument("frames_dir")
    p.add_argument("--clusters", required=True, help="clusters.jsonl path")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_segment_prior)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred", required=True, help="JSON-lines predictions")
    p.add_argument("--gt", required=True, help="gt.json from synth")
    p.add_argument("--mode", required=True,
                   choices=["recall", "purity", "consistency", "detection"])
    p.add_argument("--at", help="comma-separated N values for recall@N")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ClassifierProtocolError as exc:
        print(f"classifier protocol failure: {exc}", file=sys.stderr)
        return EXIT_CLASSIFIER
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
