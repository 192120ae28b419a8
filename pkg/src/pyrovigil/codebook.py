"""Visual vocabulary: k-means codebook, exact k-d tree neighbor index,
Gaussian soft assignment, and bag-of-words encoding of descriptor sets.

Neighbor queries are exact; ties in distance are broken toward the lower
center index in every implementation so the tree, its numpy fallback,
and the brute-force oracle used in tests agree point for point.
"""

import hashlib
import heapq
import math
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import accel
from .accel import prange
from .errors import DataError

CODEBOOK_MAGIC = b"PVCB"
CODEBOOK_VERSION = 1


@dataclass
class Codebook:
    centers: np.ndarray  # (k, dim)
    sigma: float
    trained_on: str = ""
    sse_trace: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def k(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def fingerprint(self) -> bytes:
        return hashlib.sha256(_serialize(self)).digest()


@dataclass(frozen=True)
class EncoderParams:
    m: int = 10
    sigma: float = 1.0

    def __post_init__(self):
        if self.m < 1:
            raise ValueError(f"neighbor count m must be >= 1, got {self.m}")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class BlobFeature:
    """Normalized bag-of-words block plus the global color histogram."""

    bow: np.ndarray  # (k,), sums to 1
    global_hist: np.ndarray  # (96,)
    codebook_fingerprint: Optional[bytes] = None

    @property
    def combined(self) -> np.ndarray:
        return np.concatenate([self.bow, self.global_hist])


# ---------------------------------------------------------------------------
# k-means


@accel.njit(parallel=True)
def _assign_jit(X, C):
    n, d = X.shape
    k = C.shape[0]
    assign = np.empty(n, dtype=np.int64)
    best = np.empty(n, dtype=np.float64)
    for i in prange(n):
        bd = np.inf
        bj = 0
        for j in range(k):
            s = 0.0
            for c in range(d):
                diff = X[i, c] - C[j, c]
                s += diff * diff
                if s >= bd:
                    break
            if s < bd:
                bd = s
                bj = j
        assign[i] = bj
        best[i] = bd
    return assign, best


def _assign_np(X, C):
    n = X.shape[0]
    k = C.shape[0]
    assign = np.empty(n, dtype=np.int64)
    best = np.empty(n, dtype=np.float64)
    c2 = (C * C).sum(axis=1)
    chunk = max(1, (1 << 22) // max(1, k))
    for s in range(0, n, chunk):
        e = min(n, s + chunk)
        Xc = X[s:e]
        d2 = (Xc * Xc).sum(axis=1)[:, None] + c2[None, :] - 2.0 * (Xc @ C.T)
        np.maximum(d2, 0.0, out=d2)
        a = d2.argmin(axis=1)
        assign[s:e] = a
        best[s:e] = d2[np.arange(e - s), a]
    return assign, best


# BLAS-backed GEMM beats the scalar loop at codebook scale on both paths
# (see benchmarks/bench_kernels.py); the jit version stays for comparison
_assign_points = _assign_np


def _plusplus_seed(X, k, rng):
    n = X.shape[0]
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = int(rng.integers(n))
    d2 = ((X - X[chosen[0]]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        probs = d2 / total
        chosen[i] = int(rng.choice(n, p=probs))
        d2 = np.minimum(d2, ((X - X[chosen[i]]) ** 2).sum(axis=1))
    return X[chosen].copy()


def kmeans(descriptors, k: int, iterations: int = 50, rng_seed: int = 0) -> Codebook:
    """Lloyd's algorithm with k-means++ seeding.

    Runs exactly `iterations` passes unless no assignment changes; empty
    clusters are re-seeded to the point currently farthest from its
    center. Raises when fewer than k (distinct) descriptors are given.
    The result carries the per-iteration SSE trace and sigma, the mean
    distance of the training points to their nearest final center.
    """
    X = np.ascontiguousarray(np.asarray(descriptors, dtype=np.float64))
    if X.ndim != 2:
        raise ValueError(f"descriptors must be 2-d, got shape {X.shape}")
    n = X.shape[0]
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if n < k:
        raise ValueError(f"need at least k={k} descriptors, got {n}")
    if np.unique(X, axis=0).shape[0] < k:
        raise ValueError(
            f"need at least k={k} distinct descriptors to form k distinct centers"
        )

    rng = np.random.default_rng(rng_seed)
    C = _plusplus_seed(X, k, rng)
    trace = []
    prev = None
    for _ in range(iterations):
        assign, best = _assign_points(X, C)
        trace.append(float(best.sum()))
        if prev is not None and np.array_equal(assign, prev):
            break
        prev = assign
        counts = np.bincount(assign, minlength=k).astype(np.float64)
        sums = np.zeros_like(C)
        np.add.at(sums, assign, X)
        nonempty = counts > 0
        C[nonempty] = sums[nonempty] / counts[nonempty, None]
        if not nonempty.all():
            avail = best.copy()
            for e in np.nonzero(~nonempty)[0]:
                far = int(avail.argmax())
                C[e] = X[far]
                avail[far] = -1.0

    C = _dedup_centers(X, C)
    assign, best = _assign_points(X, C)
    trace.append(float(best.sum()))
    sigma = float(np.sqrt(best).mean())
    return Codebook(C, sigma, sse_trace=np.asarray(trace))


def _dedup_centers(X, C):
    # duplicated centers can appear when duplicate descriptors dominate;
    # replace extras with the worst-fit points not already used as centers
    while True:
        _, first = np.unique(C, axis=0, return_index=True)
        dup = np.setdiff1d(np.arange(C.shape[0]), first)
        if dup.size == 0:
            return C
        _, best = _assign_points(X, C)
        order = np.argsort(-best, kind="stable")
        cursor = 0
        for e in dup:
            while cursor < order.size and best[order[cursor]] <= 0.0:
                cursor += 1
            if cursor >= order.size:
                raise ValueError("cannot form distinct centers from the data")
            C[e] = X[order[cursor]]
            cursor += 1


# ---------------------------------------------------------------------------
# k-d tree index


@accel.njit()
def _kd_query_one(points, axes, threshes, lefts, rights, starts, counts, perm,
                  q, m, out_idx, out_d2):
    dim = points.shape[1]
    hd = np.empty(m, dtype=np.float64)
    hi = np.empty(m, dtype=np.int64)
    size = 0
    stack_node = np.empty(128, dtype=np.int64)
    stack_bound = np.empty(128, dtype=np.float64)
    stack_node[0] = 0
    stack_bound[0] = 0.0
    sp = 1
    while sp > 0:
        sp -= 1
        node = stack_node[sp]
        if size == m and stack_bound[sp] > hd[0]:
            continue
        while lefts[node] >= 0:
            ax = axes[node]
            gap = q[ax] - threshes[node]
            if gap < 0.0:
                near = lefts[node]
                far = rights[node]
            else:
                near = rights[node]
                far = lefts[node]
            b2 = gap * gap
            if size < m or b2 <= hd[0]:
                stack_node[sp] = far
                stack_bound[sp] = b2
                sp += 1
            node = near
        for t in range(starts[node], starts[node] + counts[node]):
            pi = perm[t]
            d2 = 0.0
            for c in range(dim):
                diff = points[pi, c] - q[c]
                d2 += diff * diff
            if size < m:
                hd[size] = d2
                hi[size] = pi
                size += 1
                child = size - 1
                while child > 0:
                    par = (child - 1) >> 1
                    if hd[child] > hd[par] or (
                        hd[child] == hd[par] and hi[child] > hi[par]
                    ):
                        hd[child], hd[par] = hd[par], hd[child]
                        hi[child], hi[par] = hi[par], hi[child]
                        child = par
                    else:
                        break
            elif d2 < hd[0] or (d2 == hd[0] and pi < hi[0]):
                hd[0] = d2
                hi[0] = pi
                par = 0
                while True:
                    l = 2 * par + 1
                    r = l + 1
                    big = par
                    if l < size and (
                        hd[l] > hd[big] or (hd[l] == hd[big] and hi[l] > hi[big])
                    ):
                        big = l
                    if r < size and (
                        hd[r] > hd[big] or (hd[r] == hd[big] and hi[r] > hi[big])
                    ):
                        big = r
                    if big == par:
                        break
                    hd[par], hd[big] = hd[big], hd[par]
                    hi[par], hi[big] = hi[big], hi[par]
                    par = big
    # ascending insertion sort by (d2, idx)
    for a in range(1, size):
        kd = hd[a]
        ki = hi[a]
        b = a - 1
        while b >= 0 and (hd[b] > kd or (hd[b] == kd and hi[b] > ki)):
            hd[b + 1] = hd[b]
            hi[b + 1] = hi[b]
            b -= 1
        hd[b + 1] = kd
        hi[b + 1] = ki
    for a in range(size):
        out_idx[a] = hi[a]
        out_d2[a] = hd[a]
    return size


@accel.njit(parallel=True)
def _kd_query_batch_jit(points, axes, threshes, lefts, rights, starts, counts,
                        perm, Q, m):
    nq = Q.shape[0]
    out_idx = np.empty((nq, m), dtype=np.int64)
    out_d2 = np.empty((nq, m), dtype=np.float64)
    for qi in prange(nq):
        _kd_query_one(points, axes, threshes, lefts, rights, starts, counts,
                      perm, Q[qi], m, out_idx[qi], out_d2[qi])
    return out_idx, out_d2


def _kd_query_one_np(points, axes, threshes, lefts, rights, starts, counts,
                     perm, q, m):
    heap = []  # (-d2, -idx): root is the worst kept neighbor

    def visit(node):
        while lefts[node] >= 0:
            ax = axes[node]
            gap = q[ax] - threshes[node]
            near, far = (
                (lefts[node], rights[node]) if gap < 0 else (rights[node], lefts[node])
            )
            visit_far = len(heap) < m or gap * gap <= -heap[0][0]
            if visit_far:
                # descend near side first, then the deferred far side
                visit_deferred.append((far, gap * gap))
            node = near
        s, c = starts[node], counts[node]
        idxs = perm[s : s + c]
        d2 = ((points[idxs] - q) ** 2).sum(axis=1)
        for dd, ii in zip(d2, idxs):
            dd = float(dd)
            ii = int(ii)
            if len(heap) < m:
                heapq.heappush(heap, (-dd, -ii))
            else:
                wd, wi = -heap[0][0], -heap[0][1]
                if dd < wd or (dd == wd and ii < wi):
                    heapq.heapreplace(heap, (-dd, -ii))

    visit_deferred = [(0, 0.0)]
    while visit_deferred:
        node, bound = visit_deferred.pop()
        if len(heap) == m and bound > -heap[0][0]:
            continue
        visit(node)

    ordered = sorted((-d, -i) for d, i in heap)
    idx = np.array([i for _, i in ordered], dtype=np.int64)
    d2 = np.array([d for d, _ in ordered], dtype=np.float64)
    return idx, d2


def _kd_query_batch_np(points, axes, threshes, lefts, rights, starts, counts,
                       perm, Q, m):
    nq = Q.shape[0]
    out_idx = np.empty((nq, m), dtype=np.int64)
    out_d2 = np.empty((nq, m), dtype=np.float64)
    for qi in range(nq):
        idx, d2 = _kd_query_one_np(
            points, axes, threshes, lefts, rights, starts, counts, perm, Q[qi], m
        )
        out_idx[qi] = idx
        out_d2[qi] = d2
    return out_idx, out_d2


_kd_query_batch = accel.pick(_kd_query_batch_jit, _kd_query_batch_np)


class NNIndex:
    """Exact m-nearest-neighbor index over codebook centers (k-d tree,
    median split on the axis of widest spread, read-only once built)."""

    def __init__(self, points: np.ndarray, leaf_size: int = 16):
        self.points = np.ascontiguousarray(np.asarray(points, dtype=np.float64))
        if self.points.ndim != 2 or self.points.shape[0] == 0:
            raise ValueError("index needs a non-empty (k, dim) point matrix")
        self.leaf_size = max(1, leaf_size)
        n = self.points.shape[0]
        self._perm = np.arange(n, dtype=np.int64)
        axes, threshes, lefts, rights, starts, counts = [], [], [], [], [], []

        def build(lo, hi):
            node = len(axes)
            axes.append(-1)
            threshes.append(0.0)
            lefts.append(-1)
            rights.append(-1)
            starts.append(lo)
            counts.append(hi - lo)
            if hi - lo <= self.leaf_size:
                return node
            pts = self.points[self._perm[lo:hi]]
            spread = pts.max(axis=0) - pts.min(axis=0)
            axis = int(spread.argmax())
            if spread[axis] == 0.0:
                return node  # all points identical: keep as leaf
            order = np.argsort(pts[:, axis], kind="stable")
            self._perm[lo:hi] = self._perm[lo:hi][order]
            mid = (hi - lo) // 2
            axes[node] = axis
            threshes[node] = float(self.points[self._perm[lo + mid], axis])
            lefts[node] = build(lo, lo + mid)
            rights[node] = build(lo + mid, hi)
            return node

        build(0, n)
        self._axes = np.asarray(axes, dtype=np.int64)
        self._threshes = np.asarray(threshes, dtype=np.float64)
        self._lefts = np.asarray(lefts, dtype=np.int64)
        self._rights = np.asarray(rights, dtype=np.int64)
        self._starts = np.asarray(starts, dtype=np.int64)
        self._counts = np.asarray(counts, dtype=np.int64)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    def query(self, q: np.ndarray, m: int):
        """m nearest centers of one query: (indices, distances) ascending."""
        idx, d2 = self.query_batch(np.asarray(q, dtype=np.float64)[None, :], m)
        return idx[0], d2[0]

    def query_batch(self, Q: np.ndarray, m: int):
        if not 1 <= m <= self.size:
            raise ValueError(f"m must be in [1, {self.size}], got {m}")
        Q = np.ascontiguousarray(np.asarray(Q, dtype=np.float64))
        idx, d2 = _kd_query_batch(
            self.points, self._axes, self._threshes, self._lefts, self._rights,
            self._starts, self._counts, self._perm, Q, m,
        )
        return idx, np.sqrt(d2)


def index(codebook: Codebook) -> NNIndex:
    """Build the neighbor index for a codebook."""
    return NNIndex(codebook.centers)


# ---------------------------------------------------------------------------
# soft assignment and encoding


def gaussian_kernel(x, sigma):
    """K(x) = exp(-x^2 / (2 sigma^2)) / sqrt(2 pi sigma)."""
    return np.exp(-0.5 * (x * x) / (sigma * sigma)) / math.sqrt(2.0 * math.pi * sigma)


def _soft_weights(dists, sigma):
    """Rows of normalized kernel weights; a fully-underflowed row falls
    back to full weight on its nearest neighbor."""
    k_vals = gaussian_kernel(dists, sigma)
    sums = k_vals.sum(axis=1)
    dead = sums == 0.0
    if dead.any():
        k_vals[dead] = 0.0
        k_vals[dead, 0] = 1.0
        sums = k_vals.sum(axis=1)
    return k_vals / sums[:, None]


def soft_assign(descriptor: np.ndarray, nn_index: NNIndex, params: EncoderParams):
    """Weights of one descriptor against its m nearest centers.

    Returns (center_indices, weights); weights sum to 1.
    """
    idx, dist = nn_index.query(np.asarray(descriptor, dtype=np.float64), params.m)
    w = _soft_weights(dist[None, :], params.sigma)[0]
    return idx, w


def encode(
    descriptors,
    nn_index: NNIndex,
    params: EncoderParams,
    global_hist: np.ndarray,
    codebook_fingerprint: Optional[bytes] = None,
) -> BlobFeature:
    """Accumulate soft-assignment weights of all descriptors into a k-bin
    histogram (pre-normalization mass equals the descriptor count), then
    L1-normalize and pair with the provided global histogram."""
    D = _as_matrix(descriptors)
    n = D.shape[0]
    if n == 0:
        raise ValueError("empty blob: no descriptors to encode")
    idx, dist = nn_index.query_batch(D, params.m)
    w = _soft_weights(dist, params.sigma)
    hist = np.zeros(nn_index.size, dtype=np.float64)
    np.add.at(hist, idx.ravel(), w.ravel())
    bow = hist / hist.sum()
    g = np.asarray(global_hist, dtype=np.float64)
    return BlobFeature(bow, g, codebook_fingerprint)


def raw_bow_histogram(descriptors, nn_index: NNIndex, params: EncoderParams):
    """Un-normalized accumulation, exposed for mass-conservation checks."""
    D = _as_matrix(descriptors)
    if D.shape[0] == 0:
        raise ValueError("empty blob: no descriptors to encode")
    idx, dist = nn_index.query_batch(D, params.m)
    w = _soft_weights(dist, params.sigma)
    hist = np.zeros(nn_index.size, dtype=np.float64)
    np.add.at(hist, idx.ravel(), w.ravel())
    return hist


def _as_matrix(descriptors) -> np.ndarray:
    if isinstance(descriptors, np.ndarray):
        return np.ascontiguousarray(descriptors, dtype=np.float64)
    if len(descriptors) == 0:
        return np.zeros((0, 1))
    first = descriptors[0]
    if hasattr(first, "vector"):
        return np.stack([d.vector for d in descriptors])
    return np.ascontiguousarray(np.asarray(descriptors, dtype=np.float64))


# ---------------------------------------------------------------------------
# file format


def _serialize(cb: Codebook) -> bytes:
    head = CODEBOOK_MAGIC + struct.pack(
        "<III", CODEBOOK_VERSION, cb.k, cb.dim
    )
    body = np.ascontiguousarray(cb.centers, dtype="<f8").tobytes()
    return head + body + struct.pack("<d", cb.sigma)


def write_codebook(cb: Codebook, path) -> None:
    with open(path, "wb") as f:
        f.write(_serialize(cb))


def read_codebook(path) -> Codebook:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != CODEBOOK_MAGIC:
        raise DataError(f"{path}: bad codebook magic {raw[:4]!r}")
    version, k, dim = struct.unpack_from("<III", raw, 4)
    if version != CODEBOOK_VERSION:
        raise DataError(f"{path}: unsupported codebook version {version}")
    need = 16 + k * dim * 8 + 8
    if len(raw) != need:
        raise DataError(f"{path}: codebook payload is {len(raw)} bytes, expected {need}")
    centers = np.frombuffer(raw, dtype="<f8", count=k * dim, offset=16)
    centers = centers.reshape(k, dim).astype(np.float64)
    (sigma,) = struct.unpack_from("<d", raw, 16 + k * dim * 8)
    return Codebook(centers, sigma)


def export_codebook_text(cb: Codebook, path) -> None:
    """One center per line, full-precision text, for diffing."""
    with open(path, "w") as f:
        f.write(f"# k={cb.k} dim={cb.dim} sigma={cb.sigma!r}\n")
        for row in cb.centers:
            f.write(" ".join(format(v, ".17g") for v in row) + "\n")
