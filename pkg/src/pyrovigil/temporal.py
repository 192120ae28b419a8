"""Temporal verification: track classified blobs and decide fire vs.
rigid confuser from shape-variation statistics over a 25-sample window.

Per window the tracker measures mean/stddev of perimeter and area plus
the summed stddev of the four bounding-box quadrant pixel counts. A
track whose ratios all sit below t1 is a static object (lamp); one with
any ratio above t2 is a transient; the moderate band in between is the
flame signature and confirms fire. Both comparisons are strict.
"""

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional

import numpy as np

from .proposal import Blob

WINDOW = 25


class TrackState(Enum):
    PENDING = "pending"
    FIRE_CONFIRMED = "fire_confirmed"
    REJECTED = "rejected"


class Stability(Enum):
    STABLE = "stable"
    UNSTABLE = "unstable"
    UNDECIDED = "undecided"


@dataclass(frozen=True)
class StabilityThresholds:
    t1: float
    t2: float

    def __post_init__(self):
        if not 0 < self.t1 < self.t2:
            raise ValueError(f"need 0 < t1 < t2, got t1={self.t1}, t2={self.t2}")

    @classmethod
    def indoor(cls):
        return cls(0.15, 0.40)

    @classmethod
    def outdoor(cls):
        # outdoor flames are pushed around by airflow, so wider bands
        return cls(0.25, 0.60)

    @classmethod
    def preset(cls, name: str):
        name = name.lower()
        if name == "indoor":
            return cls.indoor()
        if name == "outdoor":
            return cls.outdoor()
        raise ValueError(f"unknown thresholds preset {name!r}")


@dataclass
class BlobTrack:
    track_id: int
    state: TrackState = TrackState.PENDING
    samples: deque = field(default_factory=lambda: deque(maxlen=WINDOW))
    frames_observed: int = 0
    last_seen: int = -1
    bbox: tuple = (0, 0, 0, 0)
    last_margin: float = 0.0

    def add_sample(self, blob: Blob, frame_index: int, margin: float = 0.0):
        d = spatial_distribution(blob)
        self.samples.append(
            (float(blob.perimeter), float(blob.area), float(d[0]), float(d[1]),
             float(d[2]), float(d[3]))
        )
        self.frames_observed += 1
        self.last_seen = frame_index
        self.bbox = blob.bbox
        self.last_margin = margin

    @property
    def buffer_full(self) -> bool:
        return len(self.samples) == self.samples.maxlen


def spatial_distribution(blob: Blob):
    """Blob pixel counts in the four equal quadrants of its bounding box
    (d1 top-left, d2 top-right, d3 bottom-left, d4 bottom-right). Odd
    box dimensions give the extra row/column to the lower/right half."""
    hx = blob.w // 2
    hy = blob.h // 2
    m = blob.mask
    d1 = int(m[:hy, :hx].sum())
    d2 = int(m[:hy, hx:].sum())
    d3 = int(m[hy:, :hx].sum())
    d4 = int(m[hy:, hx:].sum())
    return d1, d2, d3, d4


def window_stats(samples):
    """(mu_p, sd_p, mu_a, sd_a, sd_d) over a sample window; population
    standard deviations; sd_d is the sum of the four quadrant stddevs."""
    arr = np.asarray(samples, dtype=np.float64)
    mu_p = float(arr[:, 0].mean())
    sd_p = float(arr[:, 0].std())
    mu_a = float(arr[:, 1].mean())
    sd_a = float(arr[:, 1].std())
    sd_d = float(sum(arr[:, 2 + i].std() for i in range(4)))
    return mu_p, sd_p, mu_a, sd_a, sd_d


def classify_stability(
    mu_p, sd_p, mu_a, sd_a, sd_d,
    thresholds: StabilityThresholds,
    unstable_area_inverted: bool = False,
) -> Stability:
    """Strict-inequality band test on the window statistics.

    Stable when every ratio is under t1 (the third clause compares the
    quadrant stddev against the area mean). Unstable when any exceeds
    t2; `unstable_area_inverted` flips the middle unstable clause to
    `sd_a < t2 * mu_a`, a comparison mode that overlaps the stable band
    (stability is evaluated first either way).
    """
    t1, t2 = thresholds.t1, thresholds.t2
    if sd_p < t1 * mu_p and sd_a < t1 * mu_a and sd_d < t1 * mu_a:
        return Stability.STABLE
    mid_unstable = (sd_a < t2 * mu_a) if unstable_area_inverted else (sd_a > t2 * mu_a)
    if sd_p > t2 * mu_p or mid_unstable or sd_d > t2 * mu_a:
        return Stability.UNSTABLE
    return Stability.UNDECIDED


def stability(
    track: BlobTrack,
    thresholds: StabilityThresholds,
    unstable_area_inverted: bool = False,
) -> Stability:
    """Stability of a track; UNDECIDED until the window is full."""
    if not track.buffer_full:
        return Stability.UNDECIDED
    return classify_stability(
        *window_stats(track.samples), thresholds, unstable_area_inverted
    )


def verdict(track: BlobTrack, stab: Stability) -> TrackState:
    """Resolve a PENDING track with a full window.

    Static shapes (lamps) and transients (passing lights) are rejected;
    the persistent-but-varying middle band is confirmed as fire.
    """
    if track.state is not TrackState.PENDING or not track.buffer_full:
        return track.state
    if stab is Stability.UNDECIDED:
        track.state = TrackState.FIRE_CONFIRMED
    else:
        track.state = TrackState.REJECTED
    return track.state


def bbox_iou(a, b) -> float:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    ix = max(0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


def associate(
    tracks: List[BlobTrack],
    blobs: List[Blob],
    frame_index: int,
    margins: Optional[List[float]] = None,
    iou_threshold: float = 0.3,
    max_gap: int = 5,
    next_id: int = 1,
):
    """Greedy best-IoU matching of blobs onto live tracks.

    Unmatched blobs spawn new PENDING tracks; tracks unseen for more
    than `max_gap` frames are dropped (a vanished blob is not fire).
    Returns (live_tracks, closed_tracks, next_id).
    """
    if margins is None:
        margins = [0.0] * len(blobs)
    pairs = []
    for ti, tr in enumerate(tracks):
        for bi, blob in enumerate(blobs):
            iou = bbox_iou(tr.bbox, blob.bbox)
            if iou >= iou_threshold:
                pairs.append((-iou, ti, bi))
    pairs.sort()
    used_t = set()
    used_b = set()
    for _, ti, bi in pairs:
        if ti in used_t or bi in used_b:
            continue
        used_t.add(ti)
        used_b.add(bi)
        tracks[ti].add_sample(blobs[bi], frame_index, margins[bi])
    for bi, blob in enumerate(blobs):
        if bi in used_b:
            continue
        tr = BlobTrack(track_id=next_id)
        next_id += 1
        tr.add_sample(blob, frame_index, margins[bi])
        tracks.append(tr)
    live, closed = [], []
    for tr in tracks:
        if frame_index - tr.last_seen >= max_gap:
            if tr.state is TrackState.PENDING:
                tr.state = TrackState.REJECTED
            closed.append(tr)
        else:
            live.append(tr)
    return live, closed, next_id


class Tracker:
    """Frame-ordered track book-keeping plus verdict evaluation."""

    def __init__(
        self,
        thresholds: StabilityThresholds = None,
        iou_threshold: float = 0.3,
        max_gap: int = 5,
        unstable_area_inverted: bool = False,
    ):
        self.thresholds = thresholds or StabilityThresholds.indoor()
        self.iou_threshold = iou_threshold
        self.max_gap = max_gap
        self.unstable_area_inverted = unstable_area_inverted
        self.tracks: List[BlobTrack] = []
        self.closed: List[BlobTrack] = []
        self._next_id = 1

    def update(self, blobs, frame_index, margins=None):
        """Feed one frame of classifier-positive blobs. Returns tracks
        newly confirmed as fire on this frame."""
        self.tracks, closed, self._next_id = associate(
            self.tracks, blobs, frame_index, margins,
            self.iou_threshold, self.max_gap, self._next_id,
        )
        self.closed.extend(closed)
        confirmed = []
        for tr in self.tracks:
            if tr.state is not TrackState.PENDING or not tr.buffer_full:
                continue
            if tr.last_seen != frame_index:
                continue
            stab = stability(tr, self.thresholds, self.unstable_area_inverted)
            if verdict(tr, stab) is TrackState.FIRE_CONFIRMED:
                confirmed.append(tr)
        return confirmed
