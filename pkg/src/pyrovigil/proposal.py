"""Candidate fire-region proposal: background subtraction for static
cameras, brightness thresholding against an adaptive ladder, and blob
extraction from the cleaned binary mask.

The threshold ladder descends with scene brightness: a dark scene gets
the top rung, a bright one the bottom, so bright backgrounds do not
flood the candidate mask while dim scenes still stay selective.
"""

from dataclasses import dataclass
from enum import Enum
from typing import List, Optional

import numpy as np

from . import accel
from .accel import prange
from .imaging import ColorSpace, Frame, luma

DEFAULT_LADDER = (220.0, 190.0, 160.0)
REFERENCE_PIXELS = 320 * 240


class MaskMethod(Enum):
    BG_SUBTRACTION = "bg_subtraction"
    MULTI_LEVEL_THRESHOLD = "multi_level_threshold"
    INTERSECTION = "intersection"


@dataclass(frozen=True)
class CandidateMask:
    mask: np.ndarray
    frame_index: int
    method: MaskMethod
    threshold: float


@dataclass(frozen=True)
class Blob:
    x: int
    y: int
    w: int
    h: int
    area: int
    perimeter: int
    centroid: tuple
    mask: np.ndarray  # (h, w) bool, local to the bounding box

    @property
    def bbox(self):
        return (self.x, self.y, self.w, self.h)

    def full_mask(self, height: int, width: int) -> np.ndarray:
        out = np.zeros((height, width), dtype=bool)
        out[self.y : self.y + self.h, self.x : self.x + self.w] = self.mask
        return out


# ---------------------------------------------------------------------------
# background model


@accel.njit(parallel=True)
def _bg_update_jit(mean, var, gray, rho, lam, var_floor, warmup_phase):
    h, w = gray.shape
    fg = np.zeros((h, w), dtype=np.bool_)
    for y in prange(h):
        for x in range(w):
            d = gray[y, x] - mean[y, x]
            is_fg = False
            if not warmup_phase:
                std = np.sqrt(var[y, x])
                if std < var_floor:
                    std = var_floor
                is_fg = abs(d) > lam * std
            fg[y, x] = is_fg
            if not is_fg:
                mean[y, x] = (1.0 - rho) * mean[y, x] + rho * gray[y, x]
                var[y, x] = (1.0 - rho) * var[y, x] + rho * d * d
    return fg


def _bg_update_np(mean, var, gray, rho, lam, var_floor, warmup_phase):
    d = gray - mean
    if warmup_phase:
        fg = np.zeros(gray.shape, dtype=bool)
    else:
        std = np.maximum(np.sqrt(var), var_floor)
        fg = np.abs(d) > lam * std
    learn = ~fg
    mean[learn] = (1.0 - rho) * mean[learn] + rho * gray[learn]
    var[learn] = (1.0 - rho) * var[learn] + rho * d[learn] ** 2
    return fg


_bg_update = accel.pick(_bg_update_jit, _bg_update_np)


class BackgroundModel:
    """Per-pixel running Gaussian over intensity, single writer per stream.

    The learning rate widens to 1/t while the model is young, so the mean
    tracks the plain cumulative average until the configured rate takes
    over. After the warm-up only background pixels keep learning, which
    stops foreground objects from being absorbed.
    """

    def __init__(self, height, width, rho=0.01, lam=2.5, var_floor=4.0, warmup=25):
        if rho <= 0 or rho > 1:
            raise ValueError(f"rho must be in (0, 1], got {rho}")
        self.height = height
        self.width = width
        self.rho = float(rho)
        self.lam = float(lam)
        self.var_floor = float(var_floor)
        self.warmup = int(warmup)
        self.mean = np.zeros((height, width), dtype=np.float64)
        self.var = np.zeros((height, width), dtype=np.float64)
        self.frames_absorbed = 0

    def update(self, gray: np.ndarray) -> np.ndarray:
        """Absorb one intensity frame and return its foreground mask."""
        gray = np.ascontiguousarray(np.asarray(gray, dtype=np.float64))
        if gray.shape != (self.height, self.width):
            raise ValueError(
                f"frame shape {gray.shape} does not match model "
                f"{self.height}x{self.width}"
            )
        if self.frames_absorbed == 0:
            self.mean[:] = gray
            self.var[:] = self.var_floor * self.var_floor
            self.frames_absorbed = 1
            return np.zeros(gray.shape, dtype=bool)
        t = self.frames_absorbed + 1
        rho_eff = max(self.rho, 1.0 / t)
        warmup_phase = self.frames_absorbed < self.warmup
        fg = _bg_update(
            self.mean, self.var, gray, rho_eff, self.lam, self.var_floor,
            warmup_phase,
        )
        self.frames_absorbed = t
        return fg


# ---------------------------------------------------------------------------
# multi-level threshold


def pick_threshold(mean_intensity: float, ladder=DEFAULT_LADDER) -> float:
    """Rung for the scene: T1 - (T1 - TL) * q, q = mean/255, snapped to the
    nearest rung (ties toward the higher, more selective rung)."""
    rungs = sorted(ladder, reverse=True)
    t1, tl = rungs[0], rungs[-1]
    q = min(1.0, max(0.0, mean_intensity / 255.0))
    target = t1 - (t1 - tl) * q
    best = rungs[0]
    best_err = abs(target - rungs[0])
    for r in rungs[1:]:
        err = abs(target - r)
        if err < best_err:
            best = r
            best_err = err
    return best


def multi_level_threshold(
    gray: np.ndarray,
    mean_intensity: Optional[float] = None,
    ladder=DEFAULT_LADDER,
    frame_index: int = 0,
) -> CandidateMask:
    """Bright-pixel mask at the ladder rung chosen for scene brightness."""
    gray = np.asarray(gray, dtype=np.float64)
    if mean_intensity is None:
        mean_intensity = float(gray.mean())
    t = pick_threshold(mean_intensity, ladder)
    return CandidateMask(gray >= t, frame_index, MaskMethod.MULTI_LEVEL_THRESHOLD, t)


# ---------------------------------------------------------------------------
# morphology and connected components


@accel.njit(parallel=True)
def _open3_jit(mask):
    # separable 3x3: horizontal pass then vertical, erosion then dilation
    h, w = mask.shape
    tmp = np.zeros((h, w), dtype=np.bool_)
    er = np.zeros((h, w), dtype=np.bool_)
    for y in prange(h):
        for x in range(1, w - 1):
            tmp[y, x] = mask[y, x - 1] and mask[y, x] and mask[y, x + 1]
    for y in prange(1, h - 1):
        for x in range(w):
            er[y, x] = tmp[y - 1, x] and tmp[y, x] and tmp[y + 1, x]
    for y in prange(h):
        for x in range(w):
            hit = er[y, x]
            if not hit and x > 0:
                hit = er[y, x - 1]
            if not hit and x + 1 < w:
                hit = er[y, x + 1]
            tmp[y, x] = hit
    out = np.zeros((h, w), dtype=np.bool_)
    for y in prange(h):
        for x in range(w):
            hit = tmp[y, x]
            if not hit and y > 0:
                hit = tmp[y - 1, x]
            if not hit and y + 1 < h:
                hit = tmp[y + 1, x]
            out[y, x] = hit
    return out


def _open3_np(mask):
    h, w = mask.shape
    p = np.pad(mask, 1, constant_values=False)
    # the zero pad makes outside-of-frame read as background
    er = (
        p[:-2, :-2] & p[:-2, 1:-1] & p[:-2, 2:]
        & p[1:-1, :-2] & p[1:-1, 1:-1] & p[1:-1, 2:]
        & p[2:, :-2] & p[2:, 1:-1] & p[2:, 2:]
    )
    q = np.pad(er, 1, constant_values=False)
    out = (
        q[:-2, :-2] | q[:-2, 1:-1] | q[:-2, 2:]
        | q[1:-1, :-2] | q[1:-1, 1:-1] | q[1:-1, 2:]
        | q[2:, :-2] | q[2:, 1:-1] | q[2:, 2:]
    )
    return out


binary_open3 = accel.pick(_open3_jit, _open3_np)


@accel.njit()
def _label_jit(mask):
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int32)
    stack = np.empty(h * w, dtype=np.int64)
    count = 0
    for sy in range(h):
        for sx in range(w):
            if not mask[sy, sx] or labels[sy, sx] != 0:
                continue
            count += 1
            sp = 0
            stack[sp] = sy * w + sx
            sp += 1
            labels[sy, sx] = count
            while sp > 0:
                sp -= 1
                flat = stack[sp]
                y = flat // w
                x = flat % w
                for dy in range(-1, 2):
                    ny = y + dy
                    if ny < 0 or ny >= h:
                        continue
                    for dx in range(-1, 2):
                        nx = x + dx
                        if nx < 0 or nx >= w:
                            continue
                        if mask[ny, nx] and labels[ny, nx] == 0:
                            labels[ny, nx] = count
                            stack[sp] = ny * w + nx
                            sp += 1
    return labels, count


def _label_np(mask):
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int32)
    count = 0
    for sy, sx in zip(*np.nonzero(mask)):
        if labels[sy, sx] != 0:
            continue
        count += 1
        stack = [(int(sy), int(sx))]
        labels[sy, sx] = count
        while stack:
            y, x = stack.pop()
            for ny in range(max(0, y - 1), min(h, y + 2)):
                for nx in range(max(0, x - 1), min(w, x + 2)):
                    if mask[ny, nx] and labels[ny, nx] == 0:
                        labels[ny, nx] = count
                        stack.append((ny, nx))
    return labels, count


label_components = accel.pick(_label_jit, _label_np)


def _blob_from_coords(ys, xs):
    x0, x1 = int(xs.min()), int(xs.max())
    y0, y1 = int(ys.min()), int(ys.max())
    bw, bh = x1 - x0 + 1, y1 - y0 + 1
    local = np.zeros((bh, bw), dtype=bool)
    local[ys - y0, xs - x0] = True
    p = np.pad(local, 1, constant_values=False)
    interior = p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:]
    perimeter = int((local & ~interior).sum())
    return Blob(
        x=x0,
        y=y0,
        w=bw,
        h=bh,
        area=int(ys.size),
        perimeter=perimeter,
        centroid=(float(xs.mean()), float(ys.mean())),
        mask=local,
    )


def extract_blobs(mask: np.ndarray, min_area: int = 1) -> List[Blob]:
    """8-connected components of a mask, small ones dropped, area-descending."""
    m = np.ascontiguousarray(np.asarray(mask, dtype=bool))
    labels, count = label_components(m)
    if count == 0:
        return []
    flat = labels.ravel()
    idx = np.nonzero(flat)[0]
    order = np.argsort(flat[idx], kind="stable")
    idx = idx[order]
    lbl = flat[idx]
    bounds = np.searchsorted(lbl, np.arange(1, count + 2))
    w = m.shape[1]
    blobs = []
    for i in range(count):
        seg = idx[bounds[i] : bounds[i + 1]]
        if seg.size < min_area:
            continue
        blobs.append(_blob_from_coords(seg // w, seg % w))
    blobs.sort(key=lambda b: (-b.area, b.y, b.x))
    return blobs


# ---------------------------------------------------------------------------
# the proposal stage


@dataclass
class ProposalConfig:
    camera: str = "static"  # static | moving
    ladder: tuple = DEFAULT_LADDER
    min_blob_area: int = 64  # at 320x240; scaled by resolution ratio
    rho: float = 0.01
    lam: float = 2.5
    var_floor: float = 4.0
    warmup: int = 25
    stats_window: int = 25

    def scaled_min_area(self, width: int, height: int) -> int:
        return max(1, round(self.min_blob_area * (width * height) / REFERENCE_PIXELS))


def propose(
    frame: Frame,
    model: Optional[BackgroundModel],
    config: ProposalConfig,
    mean_intensity: Optional[float] = None,
) -> List[Blob]:
    blobs, _ = propose_with_mask(frame, model, config, mean_intensity)
    return blobs


def propose_with_mask(
    frame: Frame,
    model: Optional[BackgroundModel],
    config: ProposalConfig,
    mean_intensity: Optional[float] = None,
):
    """Candidate blobs plus the mask they came from.

    With a background model the candidate mask is foreground AND bright;
    without one (moving camera) the brightness mask stands alone. The
    mask is cleaned by one 3x3 morphological open before labeling.
    """
    if frame.space is ColorSpace.GRAY:
        gray = frame.pixels
    elif frame.space is ColorSpace.RGB:
        gray = luma(frame.pixels)
    else:
        raise ValueError(f"cannot derive intensity from {frame.space.value} frame")
    thr = multi_level_threshold(gray, mean_intensity, config.ladder, frame.index)
    if model is not None:
        fg = model.update(gray)
        combined = fg & thr.mask
        cand = CandidateMask(combined, frame.index, MaskMethod.INTERSECTION, thr.threshold)
    else:
        cand = thr
    cleaned = binary_open3(np.ascontiguousarray(cand.mask))
    min_area = config.scaled_min_area(frame.width, frame.height)
    blobs = extract_blobs(cleaned, min_area)
    return blobs, CandidateMask(cleaned, frame.index, cand.method, cand.threshold)


class ProposalEngine:
    """Stateful stage-1 wrapper: owns the background model (static camera)
    and the rolling brightness statistics for threshold selection."""

    def __init__(self, config: ProposalConfig, width: int, height: int):
        self.config = config
        if config.camera not in ("static", "moving"):
            raise ValueError(f"camera must be 'static' or 'moving', got {config.camera!r}")
        self.model = (
            BackgroundModel(
                height, width, config.rho, config.lam, config.var_floor, config.warmup
            )
            if config.camera == "static"
            else None
        )
        self._recent_means: List[float] = []

    def propose(self, frame: Frame):
        if frame.space is ColorSpace.GRAY:
            gray = frame.pixels
        else:
            gray = luma(frame.pixels)
        self._recent_means.append(float(gray.mean()))
        if len(self._recent_means) > self.config.stats_window:
            self._recent_means.pop(0)
        mean_intensity = sum(self._recent_means) / len(self._recent_means)
        return propose_with_mask(frame, self.model, self.config, mean_intensity)
