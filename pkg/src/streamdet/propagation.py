"""The streaming detection loop: cluster proposals across sub-sequences,
classify only windows of newly appearing clusters, propagate class labels and
localize propagated objects via 4-D Gaussian fits plus a stored offset."""

from __future__ import annotations

import json
import subprocess
from dataclasses import dataclass, field

import numpy as np

from .affinity import (DensityError, affinity_matrix, collect_pairs,
                       extract_features, fit_density)
from .clustering import (ClusterRegistry, associate_clusters,
                         cluster_descriptor, make_subsequences,
                         spectral_cluster_fixed, spectral_cluster_selftune)
from .config import PipelineConfig
from .core import Box, iou
from .edges import combine_edges, combined_orientation, edge_groups, \
    orientation_of, spatial_edge
from .motion import (accumulate_prior, block_matching_flow, inside_outside_map,
                     motion_boundary, temporal_edge)
from .proposals import Proposal, ProposalParams, generate_proposals


class ClassifierProtocolError(RuntimeError):
    """Classifier subprocess failed or broke the one-line JSON framing."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


@dataclass
class Detection:
    frame: int
    box: Box
    label: str
    confidence: float
    provenance: str          # "classified" or "propagated"
    global_id: int

    def to_record(self) -> dict:
        return {"frame": self.frame, "x": self.box.x, "y": self.box.y,
                "w": self.box.w, "h": self.box.h, "class": self.label,
                "confidence": round(self.confidence, 6),
                "provenance": self.provenance, "global_id": self.global_id}


@dataclass
class LocationModel:
    """4-D Gaussian over (center_x, center_y, h, w) of a cluster's boxes."""

    mean: np.ndarray          # (4,)
    covariance: np.ndarray    # (4, 4), regularized SPD


def box_to_quadruple(box: Box) -> np.ndarray:
    cx, cy = box.center
    return np.array([cx, cy, float(box.h), float(box.w)], dtype=np.float64)


def quadruple_to_box(quad, frame_size: tuple[int, int] | None = None) -> Box:
    cx, cy, h, w = (float(v) for v in quad)
    wi = max(1, int(round(w)))
    hi = max(1, int(round(h)))
    box = Box(int(round(cx - w / 2.0)), int(round(cy - h / 2.0)), wi, hi)
    if frame_size is not None:
        box = box.clamped(frame_size[0], frame_size[1])
    return box


def fit_location_gaussian(boxes: list[Box], reg_sigma: float = 1.0) -> LocationModel:
    """Sample mean/covariance of the member quadruples, +sigma^2 I regularizer."""
    if not boxes:
        raise ValueError("need at least one box")
    quads = np.stack([box_to_quadruple(b) for b in boxes])
    mean = quads.mean(axis=0)
    if quads.shape[0] > 1:
        cov = np.cov(quads, rowvar=False)
    else:
        cov = np.zeros((4, 4), dtype=np.float64)
    cov = cov + (reg_sigma ** 2) * np.eye(4)
    return LocationModel(mean, cov)


def record_offset(registry: ClusterRegistry, global_id: int, detected_box: Box,
                  model: LocationModel) -> np.ndarray:
    """Store d = detected quadruple - cluster Gaussian mean for a cluster."""
    if global_id not in registry.entries:
        raise KeyError(f"unknown global cluster id {global_id}")
    d = box_to_quadruple(detected_box) - model.mean
    registry[global_id].offset = d
    return d


def propagate_localization(model: LocationModel, d: np.ndarray,
                           frame_size: tuple[int, int] | None = None) -> Box:
    """Box at (cluster mean + d), clamped into the frame with >= 1 px extent."""
    return quadruple_to_box(model.mean + np.asarray(d, dtype=np.float64), frame_size)


# ---------------------------------------------------------------------------
# classifiers

class OracleColorClassifier:
    """Rule-based stand-in classifier: scores each class by the fraction of
    the box's mean color carried by the matching channel; background gets the
    complement of the best class."""

    def __init__(self, classes=("red", "green", "blue")):
        self.classes = tuple(classes)
        self._channel = {"red": 0, "green": 1, "blue": 2}

    def classify(self, frame, boxes, frame_path=None) -> np.ndarray:
        arr = np.asarray(frame, dtype=np.float64)
        out = np.zeros((len(boxes), len(self.classes) + 1), dtype=np.float64)
        for bi, box in enumerate(boxes):
            patch = arr[box.y:box.y2, box.x:box.x2]
            mean = patch.reshape(-1, 3).mean(axis=0)
            total = max(mean.sum(), 1e-9)
            frac = mean / total
            for ci, name in enumerate(self.classes):
                out[bi, ci] = frac[self._channel[name]]
            out[bi, -1] = 1.0 - out[bi, :-1].max()
        return out


class CommandClassifier:
    """External classifier over a JSON-lines pipe: one request object per
    line ({"frame_path", "boxes"}), one response object per line
    ({"scores": [[...]]})."""

    def __init__(self, command: str, classes=("red", "green", "blue")):
        self.command = command
        self.classes = tuple(classes)
        self._proc = None

    def _ensure(self):
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                self.command, shell=True, text=True,
                stdin=subprocess.PIPE, stdout=subprocess.PIPE)
        return self._proc

    def classify(self, frame, boxes, frame_path=None) -> np.ndarray:
        import os
        import tempfile
        from .imio import write_ppm

        cleanup = None
        if frame_path is None:
            fd, frame_path = tempfile.mkstemp(suffix=".ppm")
            os.close(fd)
            write_ppm(frame_path, frame)
            cleanup = frame_path
        try:
            proc = self._ensure()
            request = {"frame_path": str(frame_path),
                       "boxes": [list(b.as_tuple()) for b in boxes]}
            try:
                proc.stdin.write(json.dumps(request) + "\n")
                proc.stdin.flush()
                line = proc.stdout.readline()
            except (BrokenPipeError, OSError) as exc:
                raise ClassifierProtocolError(f"classifier pipe failed: {exc}")
            if not line:
                raise ClassifierProtocolError("classifier closed its output")
            try:
                reply = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ClassifierProtocolError(f"classifier sent bad JSON: {exc}")
            scores = np.asarray(reply.get("scores"), dtype=np.float64)
            if scores.shape != (len(boxes), len(self.classes) + 1):
                raise ClassifierProtocolError(
                    f"classifier returned shape {scores.shape}, expected "
                    f"{(len(boxes), len(self.classes) + 1)}")
            return scores
        finally:
            if cleanup is not None:
                try:
                    os.remove(cleanup)
                except OSError:
                    pass

    def close(self):
        if self._proc is not None and self._proc.poll() is None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            self._proc.wait(timeout=5)


def make_classifier(spec: str, classes=("red", "green", "blue")):
    """Resolve a classifier spec: 'oracle', 'cmd:PATH', or 'always' (oracle
    with label propagation disabled; the caller reads the second element)."""
    if spec == "oracle":
        return OracleColorClassifier(classes), False
    if spec == "always":
        return OracleColorClassifier(classes), True
    if spec.startswith("cmd:"):
        return CommandClassifier(spec[4:], classes), False
    raise ValueError(f"unknown classifier spec {spec!r}")


# ---------------------------------------------------------------------------
# streaming pipeline

@dataclass
class StreamStats:
    total_windows: int = 0
    classified_windows: int = 0
    clusters_created: int = 0
    subsequences: int = 0
    frames: int = 0
    classifier_calls: list = field(default_factory=list)
    classified_ids: set = field(default_factory=set, repr=False)

    def to_record(self) -> dict:
        frac = (self.classified_windows / self.total_windows
                if self.total_windows else 0.0)
        return {"total_windows": self.total_windows,
                "classified_windows": self.classified_windows,
                "fraction": round(frac, 6),
                "clusters_created": self.clusters_created,
                "subsequences": self.subsequences,
                "frames": self.frames,
                "classifier_calls": len(self.classifier_calls)}


def classification_fraction(stats: StreamStats) -> float:
    """Unique classified windows over all generated proposal windows."""
    if stats.total_windows == 0:
        raise ValueError("no proposals were generated")
    return stats.classified_windows / stats.total_windows


def resolve_flow_source(frames, flow_source, config: PipelineConfig):
    """Normalize a flow source into a callable index -> (h, w, 2) array."""
    if flow_source is None:
        cache: dict[int, np.ndarray] = {}

        def compute(i: int) -> np.ndarray:
            if i not in cache:
                cache[i] = block_matching_flow(frames[i], frames[i + 1],
                                               config.search_radius,
                                               config.block_size)
            return cache[i]
        return compute
    if callable(flow_source):
        return flow_source
    flows = list(flow_source)

    def lookup(i: int) -> np.ndarray:
        return flows[i]
    return lookup


def _proposal_params(config: PipelineConfig) -> ProposalParams:
    return ProposalParams(lam=config.lam, max_proposals=config.max_proposals,
                          step_iou=config.step_iou, nms_beta=config.pre_nms_beta,
                          kappa=config.kappa, min_area=config.min_box_area,
                          magnitude_threshold=config.edge_threshold)


@dataclass
class SubsequenceRecord:
    """Everything one sub-sequence contributes to the stream."""

    index: int
    frame_ids: list[int]
    proposals: list[Proposal]
    features: list
    window_ids: list[tuple[int, int]]    # (frame, slot) per proposal
    labels: np.ndarray                   # local cluster label per proposal
    cluster_members: dict[int, list[int]]
    global_ids: dict[int, int]           # local label -> global id
    new_ids: set[int]
    emit_frames: list[int]


def stream_cluster(frames, flow_source, config: PipelineConfig,
                   registry: ClusterRegistry | None = None,
                   stats: StreamStats | None = None,
                   edge_maps=None):
    """Generator over sub-sequences: proposals, affinities, spectral labels
    and globally associated cluster ids.

    Proposals for the one-frame overlap are computed once and re-clustered in
    the following sub-sequence; detections and cluster output for the shared
    frame are emitted only by the earlier one.
    """
    n_frames = len(frames)
    registry = registry if registry is not None else ClusterRegistry()
    stats = stats if stats is not None else StreamStats()
    stats.frames = n_frames
    get_flow = resolve_flow_source(frames, flow_source, config)
    params = _proposal_params(config)
    frame_cache: dict[int, tuple[list[Proposal], list]] = {}

    ranges = make_subsequences(n_frames, config.subseq_len)
    for t, frame_ids in enumerate(ranges):
        flows = [get_flow(i) for i in frame_ids[:-1]]
        masks = [inside_outside_map(
                     motion_boundary(fl, config.alpha_mag, config.alpha_dir),
                     config.boundary_threshold) for fl in flows]
        prior = accumulate_prior(masks, frame_index=frame_ids[0])
        et = temporal_edge(prior)
        orient_t = orientation_of(prior.values, config.sigma_smooth)

        for i in frame_ids:
            if i in frame_cache:
                continue
            if edge_maps is not None and edge_maps(i) is not None:
                es = np.asarray(edge_maps(i), dtype=np.float32)
                orient_s = orientation_of(es, config.sigma_smooth)
            else:
                es, orient_s = spatial_edge(frames[i], config.sigma_smooth)
            combined = combine_edges(es, et, config.lam)
            orient = combined_orientation(es, et, orient_s, orient_t, config.lam)
            groups = edge_groups(combined, orient, config.edge_threshold)
            props = generate_proposals(combined, groups, params, frame_index=i)
            feats = [extract_features(frames[i], p.box) for p in props]
            frame_cache[i] = (props, feats)
            stats.total_windows += len(props)

        proposals: list[Proposal] = []
        features: list = []
        window_ids: list[tuple[int, int]] = []
        for i in frame_ids:
            props, feats = frame_cache[i]
            proposals.extend(props)
            features.extend(feats)
            window_ids.extend((i, s) for s in range(len(props)))

        n = len(proposals)
        if n == 0:
            stats.subsequences += 1
            yield SubsequenceRecord(t, frame_ids, [], [], [], np.zeros(0, np.int64),
                                    {}, {}, set(),
                                    frame_ids if t == 0 else frame_ids[1:])
            continue
        if n == 1:
            labels = np.zeros(1, dtype=np.int64)
        else:
            pairs = collect_pairs(proposals, features, config.u_bins)
            try:
                model = fit_density(pairs, features)
                W = affinity_matrix(features, model, config.rho)
            except DensityError:
                W = np.ones((n, n), dtype=np.float64)
            if config.self_tune:
                labels = spectral_cluster_selftune(W, max_clusters=config.k,
                                                   seed=config.seed + t)
            else:
                labels = spectral_cluster_fixed(W, min(config.k, n),
                                                seed=config.seed + t)

        cluster_members: dict[int, list[int]] = {}
        for idx, lab in enumerate(labels.tolist()):
            cluster_members.setdefault(lab, []).append(idx)
        local_labels = sorted(cluster_members)
        descriptors = [cluster_descriptor([features[m] for m in cluster_members[lab]],
                                          member_indices=cluster_members[lab])
                       for lab in local_labels]
        gids, new_ids = associate_clusters(descriptors, registry,
                                           config.tau_kl, t)
        global_ids = {lab: gid for lab, gid in zip(local_labels, gids)}
        stats.clusters_created += len(new_ids)
        stats.subsequences += 1

        # evict frames preceding this sub-sequence; the overlap frame stays
        for i in list(frame_cache):
            if i < frame_ids[0]:
                del frame_cache[i]

        yield SubsequenceRecord(t, frame_ids, proposals, features, window_ids,
                                labels, cluster_members, global_ids, new_ids,
                                frame_ids if t == 0 else frame_ids[1:])


def _detection_nms(dets: list[Detection], beta: float) -> list[Detection]:
    """Per-frame, per-class greedy suppression keeping higher confidence."""
    kept: list[Detection] = []
    order = sorted(dets, key=lambda d: (d.frame, d.label, -d.confidence,
                                        d.box.as_tuple()))
    for det in order:
        clash = any(k.frame == det.frame and k.label == det.label
                    and iou(k.box, det.box) > beta for k in kept)
        if not clash:
            kept.append(det)
    kept.sort(key=lambda d: (d.frame, -d.confidence, d.box.as_tuple()))
    return kept


def detect_stream(frames, flow_source, config: PipelineConfig, classifier,
                  frame_paths=None, edge_maps=None):
    """Run the full streaming loop and return (detections, stats, registry).

    The classifier runs only on proposals of clusters whose global id is new
    in the current sub-sequence (or on every cluster in classify-always
    mode); associated clusters inherit their label and are localized from
    the current 4-D location Gaussian plus the stored offset d.
    """
    registry = ClusterRegistry()
    stats = StreamStats()
    detections: list[Detection] = []
    frame_size = (np.asarray(frames[0]).shape[1], np.asarray(frames[0]).shape[0])

    try:
        for rec in stream_cluster(frames, flow_source, config, registry, stats,
                                  edge_maps):
            sub_dets: list[Detection] = []
            for lab in sorted(rec.cluster_members):
                members = rec.cluster_members[lab]
                gid = rec.global_ids[lab]
                boxes = [rec.proposals[m].box for m in members]
                model = fit_location_gaussian(boxes)
                entry = registry[gid]
                run_classifier = gid in rec.new_ids or config.classify_always

                if run_classifier:
                    member_scores = np.zeros((len(members), len(classifier.classes) + 1))
                    by_frame: dict[int, list[int]] = {}
                    for pos, m in enumerate(members):
                        by_frame.setdefault(rec.proposals[m].frame_index, []).append(pos)
                    for fi in sorted(by_frame):
                        pos_list = by_frame[fi]
                        call_boxes = [rec.proposals[members[p]].box for p in pos_list]
                        path = frame_paths[fi] if frame_paths is not None else None
                        scores = classifier.classify(frames[fi], call_boxes,
                                                     frame_path=path)
                        member_scores[pos_list] = scores
                        stats.classifier_calls.append(
                            {"subseq": rec.index, "global_id": gid, "frame": fi,
                             "new_cluster": gid in rec.new_ids,
                             "n_boxes": len(call_boxes)})
                    for m in members:
                        stats.classified_ids.add(rec.window_ids[m])
                    stats.classified_windows = len(stats.classified_ids)
                    pooled = member_scores.max(axis=0)
                    best_c = int(np.argmax(pooled[:-1]))
                    conf = float(pooled[best_c])
                    if conf >= config.confidence_threshold:
                        entry.label = classifier.classes[best_c]
                        entry.confidence = conf
                        col = member_scores[:, best_c]
                        best_pos = int(np.argmax(col))
                        best_box = rec.proposals[members[best_pos]].box
                        record_offset(registry, gid, best_box, model)
                        for fi in rec.emit_frames:
                            in_frame = [p for p, m in enumerate(members)
                                        if rec.proposals[m].frame_index == fi]
                            if not in_frame:
                                continue
                            top = max(in_frame, key=lambda p: (col[p],
                                      -members[p]))
                            sub_dets.append(Detection(
                                fi, rec.proposals[members[top]].box,
                                entry.label, conf, "classified", gid))
                    else:
                        entry.label = None
                        entry.confidence = conf
                else:
                    if entry.label is not None and entry.offset is not None:
                        box = propagate_localization(model, entry.offset,
                                                     frame_size)
                        for fi in rec.emit_frames:
                            sub_dets.append(Detection(fi, box, entry.label,
                                                      entry.confidence,
                                                      "propagated", gid))
            detections.extend(_detection_nms(sub_dets, config.det_nms_beta))
    except ClassifierProtocolError as exc:
        exc.partial = (detections, stats)
        raise
    stats.classified_windows = len(stats.classified_ids)
    detections.sort(key=lambda d: (d.frame, -d.confidence, d.box.as_tuple()))
    return detections, stats, registry
