"""End-to-end orchestration of the three-stage cascade plus the training
workflows and the sectioned precision/recall evaluation harness.

Per frame: propose candidate blobs; every `decision_stride` frames,
encode each blob (dense local descriptors + global LAB histogram) and
classify it; classifier-positive blobs feed the temporal tracker; a
track confirmed as fire emits exactly one alarm event. Stages
short-circuit, so an empty candidate mask costs no classifier work.
"""

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Tuple

import numpy as np

from . import codebook as cb
from . import classifier as cl
from .errors import ConfigError, DataError
from .features import (
    SampleContext,
    SamplingMode,
    SamplingPlan,
    histogram_from_pixels,
    sample,
)
from .frameio import frame_dir_source, list_frame_files, write_pbm
from .imaging import ColorSpace, Frame
from .proposal import DEFAULT_LADDER, ProposalConfig, ProposalEngine
from .temporal import StabilityThresholds, Tracker


@dataclass(frozen=True)
class AlarmEvent:
    video_id: str
    frame_index: int
    track_id: int
    bbox: Tuple[int, int, int, int]
    margin: float


@dataclass(frozen=True)
class SectionLabel:
    video_id: str
    start: int
    end: int  # exclusive
    fire: bool


@dataclass
class PipelineConfig:
    codebook_path: str = ""
    model_path: str = ""
    camera: str = "static"
    decision_stride: int = 5
    interval: int = 9
    scales: tuple = (9,)
    m: int = 10
    sigma: float = 0.0  # 0 means: use the sigma stored in the codebook
    ladder: tuple = DEFAULT_LADDER
    min_blob_area: int = 64
    rho: float = 0.01
    lam: float = 2.5
    var_floor: float = 4.0
    warmup: int = 25
    stats_window: int = 25
    t1: float = 0.15
    t2: float = 0.40
    unstable_area_inverted: bool = False
    iou_threshold: float = 0.3
    track_max_gap: int = 5  # in decision ticks; scaled by the stride
    seed: int = 12345
    mask_dump_dir: str = ""
    track_log: str = ""

    def validate(self, require_paths: bool = True):
        if self.camera not in ("static", "moving"):
            raise ConfigError(f"camera must be static or moving, got {self.camera!r}")
        if self.decision_stride < 1:
            raise ConfigError("decision_stride must be >= 1")
        if not 0 < self.t1 < self.t2:
            raise ConfigError(f"need 0 < t1 < t2, got t1={self.t1} t2={self.t2}")
        if self.m < 1:
            raise ConfigError("m must be >= 1")
        if self.sigma < 0:
            raise ConfigError("sigma must be >= 0")
        if len(self.ladder) < 1:
            raise ConfigError("threshold ladder must not be empty")
        try:
            SamplingPlan(SamplingMode.DENSE, self.interval, tuple(self.scales))
        except ValueError as e:
            raise ConfigError(f"bad sampling settings: {e}") from None
        if require_paths:
            for name, p in (("codebook", self.codebook_path), ("model", self.model_path)):
                if not p:
                    raise ConfigError(f"{name} path not set")
                if not Path(p).is_file():
                    raise ConfigError(f"{name} file not found: {p}")
        return self

    @classmethod
    def from_file(cls, path, overrides=None) -> "PipelineConfig":
        """Plain-text key=value config with '#' comments; `overrides`
        (key -> string value) take precedence over the file."""
        values = {}
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
        if overrides:
            values.update(overrides)
        return cls._from_dict(values, path).validate()

    @classmethod
    def _from_dict(cls, values, path):
        kwargs = {}
        casts = {
            "codebook": ("codebook_path", str),
            "model": ("model_path", str),
            "camera": ("camera", str),
            "decision_stride": ("decision_stride", int),
            "interval": ("interval", int),
            "scales": ("scales", lambda v: tuple(int(s) for s in v.split(","))),
            "m": ("m", int),
            "sigma": ("sigma", float),
            "ladder": ("ladder", lambda v: tuple(float(s) for s in v.split(","))),
            "min_blob_area": ("min_blob_area", int),
            "rho": ("rho", float),
            "lam": ("lam", float),
            "var_floor": ("var_floor", float),
            "warmup": ("warmup", int),
            "stats_window": ("stats_window", int),
            "t1": ("t1", float),
            "t2": ("t2", float),
            "preset": ("preset", str),
            "unstable_area_inverted": ("unstable_area_inverted", lambda v: v.lower() in ("1", "true", "yes")),
            "iou_threshold": ("iou_threshold", float),
            "track_max_gap": ("track_max_gap", int),
            "seed": ("seed", int),
            "mask_dump_dir": ("mask_dump_dir", str),
            "track_log": ("track_log", str),
        }
        preset = None
        for key, value in values.items():
            if key not in casts:
                raise ConfigError(f"{path}: unknown config key {key!r}")
            name, cast = casts[key]
            try:
                parsed = cast(value)
            except ValueError:
                raise ConfigError(f"{path}: bad value for {key}: {value!r}") from None
            if name == "preset":
                preset = parsed
            else:
                kwargs[name] = parsed
        if preset is not None:
            th = StabilityThresholds.preset(preset)
            kwargs.setdefault("t1", th.t1)
            kwargs.setdefault("t2", th.t2)
        return cls(**kwargs)


@dataclass
class StageStats:
    frames: int = 0
    blobs_proposed: int = 0
    classifier_calls: int = 0
    alarms: int = 0
    proposal_s: float = 0.0
    features_s: float = 0.0
    classify_s: float = 0.0
    temporal_s: float = 0.0
    total_s: float = 0.0

    @property
    def fps(self) -> float:
        return self.frames / self.total_s if self.total_s > 0 else 0.0

    def summary(self) -> str:
        return (
            f"frames={self.frames} blobs={self.blobs_proposed} "
            f"classified={self.classifier_calls} alarms={self.alarms} "
            f"proposal={self.proposal_s:.3f}s features={self.features_s:.3f}s "
            f"classify={self.classify_s:.3f}s temporal={self.temporal_s:.3f}s "
            f"fps={self.fps:.1f}"
        )


class DetectionPipeline:
    """Loads model + codebook once; `run` processes one frame stream."""

    def __init__(self, config: PipelineConfig, codebook=None, model=None):
        self.config = config
        if codebook is None:
            codebook = cb.read_codebook(config.codebook_path)
        if model is None:
            model = cl.read_model(config.model_path)
        self.codebook = codebook
        self.model = model
        self.fingerprint = codebook.fingerprint()
        if (
            model.codebook_fingerprint is not None
            and model.codebook_fingerprint != self.fingerprint
        ):
            raise DataError(
                "model/codebook pairing violated: the model was trained "
                "against a different codebook"
            )
        sigma = config.sigma if config.sigma > 0 else codebook.sigma
        if sigma <= 0:
            raise ConfigError("encoder sigma must be positive")
        self.params = cb.EncoderParams(m=config.m, sigma=sigma)
        self.index = cb.index(codebook)
        self.plan = SamplingPlan(
            SamplingMode.DENSE, config.interval, tuple(config.scales)
        )
        self.stats = StageStats()

    def run(self, frames: Iterable[Frame], video_id: str = "stream"):
        """Yield AlarmEvents; one per track confirmation."""
        cfg = self.config
        stats = StageStats()
        self.stats = stats
        engine = None
        tracker = Tracker(
            StabilityThresholds(cfg.t1, cfg.t2),
            cfg.iou_threshold,
            cfg.track_max_gap * cfg.decision_stride,
            cfg.unstable_area_inverted,
        )
        track_log = open(cfg.track_log, "w") if cfg.track_log else None
        mask_dir = Path(cfg.mask_dump_dir) if cfg.mask_dump_dir else None
        if mask_dir:
            mask_dir.mkdir(parents=True, exist_ok=True)
        t_run = time.perf_counter()
        try:
            for pos, frame in enumerate(frames):
                if engine is None:
                    engine = ProposalEngine(
                        ProposalConfig(
                            cfg.camera, cfg.ladder, cfg.min_blob_area, cfg.rho,
                            cfg.lam, cfg.var_floor, cfg.warmup, cfg.stats_window,
                        ),
                        frame.width,
                        frame.height,
                    )
                t0 = time.perf_counter()
                blobs, cand = engine.propose(frame)
                stats.proposal_s += time.perf_counter() - t0
                stats.frames += 1
                stats.blobs_proposed += len(blobs)
                if mask_dir:
                    write_pbm(mask_dir / f"mask_{frame.index:06d}.pbm", cand.mask)

                if pos % cfg.decision_stride == 0:
                    fire_blobs, margins = [], []
                    if blobs:
                        t0 = time.perf_counter()
                        ctx = SampleContext(frame)
                        stats.features_s += time.perf_counter() - t0
                    for blob in blobs:
                        t0 = time.perf_counter()
                        mask = blob.full_mask(frame.height, frame.width)
                        try:
                            descs = sample(
                                frame, self.plan, mask=mask,
                                anchor=(blob.x, blob.y), ctx=ctx,
                            )
                        except ValueError:
                            descs = []
                        stats.features_s += time.perf_counter() - t0
                        if not descs:
                            continue
                        t0 = time.perf_counter()
                        ghist = histogram_from_pixels(ctx.lab, ColorSpace.LAB, mask)
                        feat = cb.encode(
                            descs, self.index, self.params, ghist.bins,
                            self.fingerprint,
                        )
                        label, margin = cl.predict(self.model, feat)
                        stats.classify_s += time.perf_counter() - t0
                        stats.classifier_calls += 1
                        if label > 0:
                            fire_blobs.append(blob)
                            margins.append(margin)
                    t0 = time.perf_counter()
                    confirmed = tracker.update(fire_blobs, frame.index, margins)
                    stats.temporal_s += time.perf_counter() - t0
                    if track_log:
                        for tr in tracker.tracks:
                            if tr.last_seen != frame.index:
                                continue
                            p, a, d1, d2, d3, d4 = tr.samples[-1]
                            track_log.write(
                                f"{frame.index} {tr.track_id} {tr.state.value} "
                                f"{p:g} {a:g} {d1:g} {d2:g} {d3:g} {d4:g}\n"
                            )
                    for tr in confirmed:
                        stats.alarms += 1
                        yield AlarmEvent(
                            video_id, frame.index, tr.track_id, tr.bbox,
                            tr.last_margin,
                        )
        finally:
            stats.total_s = time.perf_counter() - t_run
            if track_log:
                track_log.close()


# ---------------------------------------------------------------------------
# training workflows


def _iter_patch_frames(directory):
    files = list_frame_files(directory)
    if not files:
        raise DataError(f"{directory}: no .ppm/.png patches found")
    yield from frame_dir_source(directory)


def harvest_descriptors(patch_dirs, plan: SamplingPlan, log=None):
    """All local descriptors from every patch under the given dirs."""
    rows = []
    patches = 0
    for d in patch_dirs:
        for frame in _iter_patch_frames(d):
            patches += 1
            try:
                descs = sample(frame, plan)
            except ValueError:
                continue  # patch smaller than every kernel
            rows.extend(desc.vector for desc in descs)
    return (np.stack(rows) if rows else np.zeros((0, 88))), patches


def train_codebook(
    patch_dirs,
    plan: SamplingPlan = SamplingPlan(),
    k: int = 500,
    iterations: int = 50,
    seed: int = 0,
    out_path=None,
    log=print,
) -> cb.Codebook:
    """Harvest descriptors from training patches and cluster them."""
    X, patches = harvest_descriptors(patch_dirs, plan)
    distinct = np.unique(X, axis=0).shape[0] if X.shape[0] else 0
    if X.shape[0] < k or distinct < k:
        raise DataError(
            f"insufficient descriptors: {X.shape[0]} collected "
            f"({distinct} distinct) from {patches} patches, need k={k}"
        )
    book = cb.kmeans(X, k, iterations, seed)
    book.trained_on = f"patches={patches};descriptors={X.shape[0]};{plan.fingerprint()}"
    if log:
        log(
            f"codebook: {X.shape[0]} descriptors from {patches} patches, "
            f"k={k}, final SSE {book.sse_trace[-1]:.6g}, sigma {book.sigma:.6g}"
        )
    if out_path:
        cb.write_codebook(book, out_path)
    return book


def encode_patches(
    patch_dir,
    book: cb.Codebook,
    nn_index: cb.NNIndex,
    params: cb.EncoderParams,
    plan: SamplingPlan,
):
    """Encode every patch in a directory to a combined feature row."""
    feats, failures = [], []
    fingerprint = book.fingerprint()
    for frame in _iter_patch_frames(patch_dir):
        try:
            descs = sample(frame, plan)
            ghist = histogram_from_pixels(
                _lab_of(frame), ColorSpace.LAB, None
            )
            feat = cb.encode(descs, nn_index, params, ghist.bins, fingerprint)
            feats.append(feat.combined)
        except ValueError as e:
            failures.append((frame.index, str(e)))
    return feats, failures


def _lab_of(frame: Frame):
    from .imaging import convert

    return convert(frame, ColorSpace.LAB).pixels


@dataclass
class TrainReport:
    held_out_accuracy: float
    n_train: int
    n_test: int
    cv: Optional[cl.CVReport] = None
    kernel: Optional[cl.Kernel] = None
    C: float = 1.0


def split_train_test(labels: np.ndarray, seed: int, test_fraction: float = 0.2):
    """Seeded stratified split; returns (train_idx, test_idx)."""
    rng = np.random.default_rng(seed)
    train, test = [], []
    for cls in (1.0, -1.0):
        idx = np.nonzero(labels == cls)[0]
        rng.shuffle(idx)
        n_test = max(1, int(round(len(idx) * test_fraction)))
        test.extend(idx[:n_test])
        train.extend(idx[n_test:])
    return np.asarray(sorted(train)), np.asarray(sorted(test))


def train_model(
    fire_dir,
    nonfire_dir,
    book: cb.Codebook,
    kernel_kind: cl.KernelKind = cl.KernelKind.RBF,
    C: float = 10.0,
    gamma: float = 8.0,
    cv: bool = False,
    folds: int = 5,
    seed: int = 0,
    plan: SamplingPlan = SamplingPlan(),
    m: int = 10,
    out_path=None,
    log=print,
):
    """Encode fire/non-fire patches, optionally grid-search (C, gamma) by
    cross-validation on the training split, fit the final model, and
    report accuracy on the held-out fifth."""
    params = cb.EncoderParams(m=min(m, book.k), sigma=book.sigma)
    nn_index = cb.index(book)
    fire_feats, fire_fail = encode_patches(fire_dir, book, nn_index, params, plan)
    non_feats, non_fail = encode_patches(nonfire_dir, book, nn_index, params, plan)
    failures = [("fire", i, msg) for i, msg in fire_fail]
    failures += [("nonfire", i, msg) for i, msg in non_fail]
    if failures:
        listing = "; ".join(f"{kind} patch {i}: {msg}" for kind, i, msg in failures)
        raise DataError(f"encoding failures: {listing}")
    if min(len(fire_feats), len(non_feats)) < 5:
        raise DataError(
            f"need at least 5 samples per class, got {len(fire_feats)} fire / "
            f"{len(non_feats)} non-fire"
        )
    X = np.stack(fire_feats + non_feats)
    y = np.concatenate(
        [np.ones(len(fire_feats)), -np.ones(len(non_feats))]
    )
    train_idx, test_idx = split_train_test(y, seed)

    report_cv = None
    if cv:
        report_cv = cl.cross_validate(
            X[train_idx], y[train_idx], kernel_kind, folds=folds, seed=seed
        )
        C = report_cv.best_c
        gamma = report_cv.best_gamma if kernel_kind is not cl.KernelKind.LINEAR else 0.0

    kernel = (
        cl.Kernel(kernel_kind)
        if kernel_kind is cl.KernelKind.LINEAR
        else cl.Kernel(kernel_kind, gamma)
    )
    model = cl.train(
        X[train_idx], y[train_idx], kernel=kernel, C=C, balance=True, seed=seed,
        codebook_fingerprint=book.fingerprint(),
    )
    margins = cl.decision_function(model, X[test_idx])
    pred = np.where(margins >= 0.0, 1.0, -1.0)
    accuracy = float((pred == y[test_idx]).mean())
    report = TrainReport(
        held_out_accuracy=accuracy,
        n_train=len(train_idx),
        n_test=len(test_idx),
        cv=report_cv,
        kernel=kernel,
        C=C,
    )
    if log:
        log(
            f"model: kernel={kernel.kind.value} C={C:g} gamma={kernel.gamma:g} "
            f"train={report.n_train} test={report.n_test} "
            f"held-out accuracy {accuracy:.4f}"
        )
    if out_path:
        cl.write_model(model, out_path)
    return model, report


# ---------------------------------------------------------------------------
# evaluation harness


@dataclass
class EvalReport:
    tp: int
    tn: int
    fp: int
    fn: int
    per_section: List[Tuple[SectionLabel, bool]] = field(default_factory=list)

    @classmethod
    def from_counts(cls, tp, tn, fp, fn):
        return cls(tp, tn, fp, fn)

    @property
    def precision(self) -> Optional[float]:
        d = self.tp + self.fp
        return self.tp / d if d else None

    @property
    def recall(self) -> Optional[float]:
        d = self.tp + self.fn
        return self.tp / d if d else None

    @staticmethod
    def _pct(v: Optional[float]) -> str:
        return "n/a" if v is None else f"{100.0 * v:.2f}%"

    def format_table(self) -> str:
        rows = [
            ("True positive", str(self.tp)),
            ("True negative", str(self.tn)),
            ("False positive", str(self.fp)),
            ("False negative", str(self.fn)),
            ("Precision rate", self._pct(self.precision)),
            ("Recall rate", self._pct(self.recall)),
        ]
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{name:<{width}}  {value}" for name, value in rows)


def parse_labels(path) -> List[SectionLabel]:
    """One section per line: `video_id start_frame end_frame fire|nofire`."""
    labels = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4 or parts[3] not in ("fire", "nofire"):
            raise DataError(
                f"{path}:{lineno}: expected 'video start end fire|nofire', got {line!r}"
            )
        labels.append(
            SectionLabel(parts[0], int(parts[1]), int(parts[2]), parts[3] == "fire")
        )
    _check_overlaps(labels, path)
    return labels


def _check_overlaps(labels, origin):
    by_video = {}
    for s in labels:
        if s.end <= s.start:
            raise DataError(f"{origin}: empty section {s}")
        by_video.setdefault(s.video_id, []).append(s)
    for vid, secs in by_video.items():
        secs.sort(key=lambda s: s.start)
        for a, b in zip(secs, secs[1:]):
            if b.start < a.end:
                raise DataError(f"{origin}: overlapping sections in {vid}: {a} / {b}")


def write_alarm_log(alarms: Iterable[AlarmEvent], path) -> None:
    with open(path, "w") as f:
        for a in alarms:
            f.write(format_alarm(a) + "\n")


def format_alarm(a: AlarmEvent) -> str:
    x, y, w, h = a.bbox
    return (
        f"{a.video_id} {a.frame_index} {a.track_id} "
        f"{x},{y},{w},{h} {format(a.margin, '.9g')}"
    )


def parse_alarm_log(path) -> List[AlarmEvent]:
    alarms = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 5:
            raise DataError(f"{path}:{lineno}: malformed alarm line {line!r}")
        bbox = tuple(int(v) for v in parts[3].split(","))
        alarms.append(
            AlarmEvent(parts[0], int(parts[1]), int(parts[2]), bbox, float(parts[4]))
        )
    return alarms


def evaluate_sections(alarms: Iterable[AlarmEvent], labels: List[SectionLabel]) -> EvalReport:
    """Pure mapping from alarms to section confusion counts: a section is
    predicted fire iff at least one alarm lands in its frame range."""
    alarm_set = {}
    for a in alarms:
        alarm_set.setdefault(a.video_id, []).append(a.frame_index)
    tp = tn = fp = fn = 0
    per_section = []
    for s in labels:
        frames = alarm_set.get(s.video_id, ())
        predicted = any(s.start <= f < s.end for f in frames)
        per_section.append((s, predicted))
        if s.fire and predicted:
            tp += 1
        elif s.fire and not predicted:
            fn += 1
        elif not s.fire and predicted:
            fp += 1
        else:
            tn += 1
    return EvalReport(tp, tn, fp, fn, per_section)


def evaluate(dataset_root, config: PipelineConfig, labels: List[SectionLabel]):
    """Run detection over every labeled video under `dataset_root` (one
    frame directory per video id) and score the sections."""
    root = Path(dataset_root)
    videos = sorted({s.video_id for s in labels})
    by_video = {v: [s for s in labels if s.video_id == v] for v in videos}
    pipeline = DetectionPipeline(config)
    alarms: List[AlarmEvent] = []
    for vid in videos:
        vdir = root / vid
        if not vdir.is_dir():
            raise DataError(f"labels reference video {vid!r} but {vdir} is missing")
        files = list_frame_files(vdir)
        covered = sorted(by_video[vid], key=lambda s: s.start)
        for idx, _ in files:
            if not any(s.start <= idx < s.end for s in covered):
                raise DataError(
                    f"frame {idx} of video {vid!r} is not covered by any section"
                )
        alarms.extend(pipeline.run(frame_dir_source(vdir, skip_bad=True), vid))
    return evaluate_sections(alarms, labels), alarms
