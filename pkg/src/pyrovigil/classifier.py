"""Binary kernel SVM trained by sequential minimal optimization.

Working-set selection is the maximal violating pair; the solver stops
when the KKT violation drops to `tol` (default 1e-3). Per-sample box
caps are C times a class weight, so unbalanced training sets can be
rebalanced by sample count. The dual objective is recorded every
iteration and is non-decreasing, which the tests assert.
"""

import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from . import accel
from .accel import prange
from .errors import ConvergenceError, DataError


class KernelKind(Enum):
    LINEAR = "linear"
    RBF = "rbf"
    CHI2 = "chi2"


@dataclass(frozen=True)
class Kernel:
    kind: KernelKind
    gamma: float = 0.0

    def __post_init__(self):
        if self.kind is not KernelKind.LINEAR and self.gamma <= 0:
            raise ValueError(f"{self.kind.value} kernel needs gamma > 0")


MODEL_MAGIC = b"PVSM"
MODEL_VERSION = 1
_KIND_CODES = {KernelKind.LINEAR: 0, KernelKind.RBF: 1, KernelKind.CHI2: 2}
_KIND_FROM_CODE = {v: k for k, v in _KIND_CODES.items()}


@dataclass
class TrainedModel:
    kernel: Kernel
    support_vectors: np.ndarray  # (s, dim)
    coef: np.ndarray  # (s,) signed alpha_i * y_i
    bias: float
    C: float
    class_weights: tuple  # (w_pos, w_neg)
    codebook_fingerprint: Optional[bytes] = None
    n_iterations: int = 0
    final_violation: float = 0.0
    objective_trace: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def dim(self) -> int:
        return self.support_vectors.shape[1]


# ---------------------------------------------------------------------------
# kernels


@accel.njit(parallel=True)
def _chi2_dist_jit(X, Y):
    nx, d = X.shape
    ny = Y.shape[0]
    out = np.empty((nx, ny), dtype=np.float64)
    for i in prange(nx):
        for j in range(ny):
            s = 0.0
            for c in range(d):
                den = X[i, c] + Y[j, c]
                if den != 0.0:
                    diff = X[i, c] - Y[j, c]
                    s += diff * diff / den
            out[i, j] = s
    return out


def _chi2_dist_np(X, Y):
    nx, d = X.shape
    ny = Y.shape[0]
    out = np.empty((nx, ny), dtype=np.float64)
    chunk = max(1, (1 << 22) // max(1, ny * d))
    for s in range(0, nx, chunk):
        e = min(nx, s + chunk)
        diff = X[s:e, None, :] - Y[None, :, :]
        den = X[s:e, None, :] + Y[None, :, :]
        terms = np.where(den != 0.0, diff * diff / np.where(den == 0.0, 1.0, den), 0.0)
        out[s:e] = terms.sum(axis=2)
    return out


chi2_distance_matrix = accel.pick(_chi2_dist_jit, _chi2_dist_np)


def _sq_euclid_matrix(X, Y):
    d2 = (
        (X * X).sum(axis=1)[:, None]
        + (Y * Y).sum(axis=1)[None, :]
        - 2.0 * (X @ Y.T)
    )
    np.maximum(d2, 0.0, out=d2)
    return d2


def kernel_matrix(kernel: Kernel, X: np.ndarray, Y: Optional[np.ndarray] = None):
    X = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
    Y = X if Y is None else np.ascontiguousarray(np.asarray(Y, dtype=np.float64))
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    if kernel.kind is KernelKind.LINEAR:
        return X @ Y.T
    if kernel.kind is KernelKind.RBF:
        return np.exp(-kernel.gamma * _sq_euclid_matrix(X, Y))
    return np.exp(-kernel.gamma * chi2_distance_matrix(X, Y))


def kernel_eval(kernel: Kernel, a, b) -> float:
    """Kernel value of two vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(kernel_matrix(kernel, a[None, :], b[None, :])[0, 0])


# ---------------------------------------------------------------------------
# SMO solver (maximal violating pair)


@accel.njit()
def _smo_jit(K, y, Cvec, tol, max_iter):
    n = y.shape[0]
    alpha = np.zeros(n, dtype=np.float64)
    G = np.full(n, -1.0)  # gradient of 1/2 a'Qa - sum(a)
    trace = np.empty(max_iter, dtype=np.float64)
    it = 0
    violation = np.inf
    while it < max_iter:
        m_val = -np.inf
        M_val = np.inf
        i = -1
        j = -1
        for t in range(n):
            s = -y[t] * G[t]
            up = (y[t] > 0 and alpha[t] < Cvec[t]) or (y[t] < 0 and alpha[t] > 0.0)
            low = (y[t] < 0 and alpha[t] < Cvec[t]) or (y[t] > 0 and alpha[t] > 0.0)
            if up and s > m_val:
                m_val = s
                i = t
            if low and s < M_val:
                M_val = s
                j = t
        violation = m_val - M_val
        if i < 0 or j < 0 or violation <= tol:
            break
        eta = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if eta <= 0.0:
            eta = 1e-12
        step = violation / eta
        cap_i = Cvec[i] - alpha[i] if y[i] > 0 else alpha[i]
        cap_j = alpha[j] if y[j] > 0 else Cvec[j] - alpha[j]
        if step > cap_i:
            step = cap_i
        if step > cap_j:
            step = cap_j
        old_i = alpha[i]
        old_j = alpha[j]
        ai = old_i + y[i] * step
        aj = old_j - y[j] * step
        if ai < 0.0:
            ai = 0.0
        elif ai > Cvec[i]:
            ai = Cvec[i]
        if aj < 0.0:
            aj = 0.0
        elif aj > Cvec[j]:
            aj = Cvec[j]
        alpha[i] = ai
        alpha[j] = aj
        di = y[i] * (ai - old_i)
        dj = y[j] * (aj - old_j)
        ssum = 0.0
        dot = 0.0
        for t in range(n):
            G[t] += y[t] * (K[t, i] * di + K[t, j] * dj)
            ssum += alpha[t]
            dot += alpha[t] * G[t]
        trace[it] = 0.5 * (ssum - dot)
        it += 1
    return alpha, G, it, violation, trace[:it]


def _smo_np(K, y, Cvec, tol, max_iter):
    n = y.shape[0]
    alpha = np.zeros(n, dtype=np.float64)
    G = np.full(n, -1.0)
    trace = np.empty(max_iter, dtype=np.float64)
    it = 0
    violation = np.inf
    while it < max_iter:
        s = -y * G
        up = ((y > 0) & (alpha < Cvec)) | ((y < 0) & (alpha > 0.0))
        low = ((y < 0) & (alpha < Cvec)) | ((y > 0) & (alpha > 0.0))
        if not up.any() or not low.any():
            violation = -np.inf
            break
        su = np.where(up, s, -np.inf)
        sl = np.where(low, s, np.inf)
        i = int(su.argmax())
        j = int(sl.argmin())
        violation = su[i] - sl[j]
        if violation <= tol:
            break
        eta = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if eta <= 0.0:
            eta = 1e-12
        step = violation / eta
        cap_i = Cvec[i] - alpha[i] if y[i] > 0 else alpha[i]
        cap_j = alpha[j] if y[j] > 0 else Cvec[j] - alpha[j]
        step = min(step, cap_i, cap_j)
        old_i, old_j = alpha[i], alpha[j]
        ai = np.clip(old_i + y[i] * step, 0.0, Cvec[i])
        aj = np.clip(old_j - y[j] * step, 0.0, Cvec[j])
        alpha[i], alpha[j] = ai, aj
        di = y[i] * (ai - old_i)
        dj = y[j] * (aj - old_j)
        G += y * (K[:, i] * di + K[:, j] * dj)
        trace[it] = 0.5 * (alpha.sum() - alpha @ G)
        it += 1
    return alpha, G, it, float(violation), trace[:it]


_smo_solve = accel.pick(_smo_jit, _smo_np)


def _class_weights(y, balance):
    n_pos = int((y > 0).sum())
    n_neg = int((y < 0).sum())
    if not balance:
        return 1.0, 1.0
    nmax = max(n_pos, n_neg)
    return n_neg / nmax, n_pos / nmax


def _bias(alpha, y, G, Cvec):
    s = -y * G  # equals y - (decision value without bias)
    free = (alpha > 1e-8 * Cvec) & (alpha < Cvec * (1.0 - 1e-8))
    if free.any():
        return float(s[free].mean())
    up = ((y > 0) & (alpha < Cvec)) | ((y < 0) & (alpha > 0.0))
    low = ((y < 0) & (alpha < Cvec)) | ((y > 0) & (alpha > 0.0))
    m_val = s[up].max() if up.any() else 0.0
    M_val = s[low].min() if low.any() else 0.0
    return float(0.5 * (m_val + M_val))


def train(
    samples,
    labels=None,
    kernel: Kernel = Kernel(KernelKind.RBF, 1.0),
    C: float = 1.0,
    balance: bool = True,
    seed: int = 0,
    tol: float = 1e-3,
    max_iter: int = 200_000,
    codebook_fingerprint: Optional[bytes] = None,
) -> TrainedModel:
    """Fit the soft-margin dual by SMO.

    `samples` is either an (n, dim) matrix with `labels` as a +/-1 vector,
    or a sequence of (feature, label) pairs where features expose
    `.combined`. Raises ConvergenceError (carrying the residual KKT
    violation) if the iteration cap is hit first.
    """
    X, y = _unpack_samples(samples, labels)
    if not np.isfinite(X).all():
        raise ValueError("training features contain non-finite values")
    if C <= 0:
        raise ValueError(f"C must be positive, got {C}")
    if not ((y > 0).any() and (y < 0).any()):
        raise ValueError("need at least one sample of each label")
    w_pos, w_neg = _class_weights(y, balance)
    Cvec = np.where(y > 0, C * w_pos, C * w_neg)
    K = kernel_matrix(kernel, X)
    alpha, G, it, violation, trace = _smo_solve(
        K, y.astype(np.float64), Cvec, tol, max_iter
    )
    if violation > tol:
        raise ConvergenceError(
            f"SMO did not converge in {max_iter} iterations "
            f"(violation {violation:.3e} > tol {tol:.0e})",
            violation,
        )
    b = _bias(alpha, y, G, Cvec)
    sv = alpha > 1e-12
    return TrainedModel(
        kernel=kernel,
        support_vectors=X[sv].copy(),
        coef=(alpha * y)[sv].copy(),
        bias=b,
        C=C,
        class_weights=(w_pos, w_neg),
        codebook_fingerprint=codebook_fingerprint,
        n_iterations=it,
        final_violation=float(violation),
        objective_trace=np.asarray(trace),
    )


def _unpack_samples(samples, labels):
    if labels is not None:
        X = np.ascontiguousarray(np.asarray(samples, dtype=np.float64))
        y = np.asarray(labels, dtype=np.float64)
    else:
        feats, ys = [], []
        for feat, label in samples:
            feats.append(feat.combined if hasattr(feat, "combined") else feat)
            ys.append(label)
        X = np.ascontiguousarray(np.asarray(feats, dtype=np.float64))
        y = np.asarray(ys, dtype=np.float64)
    if set(np.unique(y)) - {-1.0, 1.0}:
        raise ValueError("labels must be +1 or -1")
    return X, y


def decision_function(model: TrainedModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.shape[1] != model.dim:
        raise ValueError(
            f"feature dimension {X.shape[1]} does not match model {model.dim}"
        )
    K = kernel_matrix(model.kernel, model.support_vectors, X)
    margins = model.coef @ K + model.bias
    return margins[0] if single else margins


def predict(model: TrainedModel, feature):
    """(label, margin) for one feature; ties on the boundary go to +1
    (a miss costs more than a false alarm, so zero margin reads as fire)."""
    if hasattr(feature, "combined"):
        if (
            model.codebook_fingerprint is not None
            and feature.codebook_fingerprint is not None
            and model.codebook_fingerprint != feature.codebook_fingerprint
        ):
            raise ValueError(
                "model/codebook pairing violated: feature was encoded "
                "against a different codebook"
            )
        vec = feature.combined
    else:
        vec = feature
    margin = float(decision_function(model, vec))
    return (1 if margin >= 0.0 else -1), margin


# ---------------------------------------------------------------------------
# cross-validation


@dataclass
class CVReport:
    c_values: np.ndarray
    gamma_values: np.ndarray
    accuracy: np.ndarray  # (len(c_values), len(gamma_values))
    folds: int
    best_c: float
    best_gamma: float
    best_accuracy: float


def default_grid():
    return 2.0 ** np.arange(-8, 9)


def stratified_folds(y, folds, seed):
    """Deal each class round-robin into `folds` groups after a seeded
    shuffle; returns a list of index arrays."""
    rng = np.random.default_rng(seed)
    out = [[] for _ in range(folds)]
    for cls in (1.0, -1.0):
        idx = np.nonzero(y == cls)[0]
        rng.shuffle(idx)
        for pos, sample in enumerate(idx):
            out[pos % folds].append(int(sample))
    return [np.asarray(sorted(f), dtype=np.int64) for f in out]


def cross_validate(
    samples,
    labels=None,
    kind: KernelKind = KernelKind.RBF,
    folds: int = 5,
    c_values=None,
    gamma_values=None,
    seed: int = 0,
    balance: bool = True,
    tol: float = 1e-3,
    max_iter: int = 20_000,
) -> CVReport:
    """Grid-search (C, gamma) by stratified k-fold accuracy.

    The grid defaults to integer powers of two from 2^-8 to 2^8 on both
    axes (gamma collapses to a single dummy value for the linear kernel).
    Deterministic for a fixed seed; the best cell is the first maximum in
    (C, gamma) scan order.
    """
    X, y = _unpack_samples(samples, labels)
    n_pos = int((y > 0).sum())
    n_neg = int((y < 0).sum())
    if min(n_pos, n_neg) < folds:
        raise ValueError(
            f"need at least {folds} samples per class, got {n_pos} / {n_neg}"
        )
    c_values = np.asarray(default_grid() if c_values is None else c_values, dtype=np.float64)
    if kind is KernelKind.LINEAR:
        gamma_values = np.asarray([0.0])
    else:
        gamma_values = np.asarray(
            default_grid() if gamma_values is None else gamma_values, dtype=np.float64
        )

    if kind is KernelKind.LINEAR:
        base = X @ X.T
    elif kind is KernelKind.RBF:
        base = _sq_euclid_matrix(X, X)
    else:
        base = chi2_distance_matrix(X, X)

    fold_idx = stratified_folds(y, folds, seed)
    acc = np.zeros((len(c_values), len(gamma_values)))
    for gi, gamma in enumerate(gamma_values):
        K_full = base if kind is KernelKind.LINEAR else np.exp(-gamma * base)
        for ci, C in enumerate(c_values):
            correct = 0
            total = 0
            for f in range(folds):
                te = fold_idx[f]
                tr = np.setdiff1d(np.arange(X.shape[0]), te)
                K_tr = np.ascontiguousarray(K_full[np.ix_(tr, tr)])
                y_tr = y[tr]
                w_pos, w_neg = _class_weights(y_tr, balance)
                Cvec = np.where(y_tr > 0, C * w_pos, C * w_neg)
                alpha, G, _, _, _ = _smo_solve(K_tr, y_tr, Cvec, tol, max_iter)
                b = _bias(alpha, y_tr, G, Cvec)
                margins = (alpha * y_tr) @ K_full[np.ix_(tr, te)] + b
                pred = np.where(margins >= 0.0, 1.0, -1.0)
                correct += int((pred == y[te]).sum())
                total += te.size
            acc[ci, gi] = correct / total
    best_flat = int(acc.argmax())
    bi, bj = np.unravel_index(best_flat, acc.shape)
    return CVReport(
        c_values=c_values,
        gamma_values=gamma_values,
        accuracy=acc,
        folds=folds,
        best_c=float(c_values[bi]),
        best_gamma=float(gamma_values[bj]),
        best_accuracy=float(acc[bi, bj]),
    )


# ---------------------------------------------------------------------------
# model file


def write_model(model: TrainedModel, path) -> None:
    sv = np.ascontiguousarray(model.support_vectors, dtype="<f8")
    coef = np.ascontiguousarray(model.coef, dtype="<f8")
    fp = model.codebook_fingerprint or b"\x00" * 32
    if len(fp) != 32:
        raise ValueError("codebook fingerprint must be 32 bytes")
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<II", MODEL_VERSION, _KIND_CODES[model.kernel.kind]))
        f.write(struct.pack("<dd", model.kernel.gamma, model.C))
        f.write(struct.pack("<dd", *model.class_weights))
        f.write(struct.pack("<II", sv.shape[0], sv.shape[1]))
        f.write(sv.tobytes())
        f.write(coef.tobytes())
        f.write(struct.pack("<d", model.bias))
        f.write(fp)


def read_model(path) -> TrainedModel:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != MODEL_MAGIC:
        raise DataError(f"{path}: bad model magic {raw[:4]!r}")
    version, kind_code = struct.unpack_from("<II", raw, 4)
    if version != MODEL_VERSION:
        raise DataError(f"{path}: unsupported model version {version}")
    gamma, C = struct.unpack_from("<dd", raw, 12)
    w_pos, w_neg = struct.unpack_from("<dd", raw, 28)
    count, dim = struct.unpack_from("<II", raw, 44)
    off = 52
    sv = np.frombuffer(raw, dtype="<f8", count=count * dim, offset=off)
    sv = sv.reshape(count, dim).astype(np.float64)
    off += count * dim * 8
    coef = np.frombuffer(raw, dtype="<f8", count=count, offset=off).astype(np.float64)
    off += count * 8
    (bias,) = struct.unpack_from("<d", raw, off)
    off += 8
    fp = raw[off : off + 32]
    kind = _KIND_FROM_CODE[kind_code]
    kernel = Kernel(kind, gamma) if kind is not KernelKind.LINEAR else Kernel(kind)
    return TrainedModel(
        kernel=kernel,
        support_vectors=sv,
        coef=coef,
        bias=bias,
        C=C,
        class_weights=(w_pos, w_neg),
        codebook_fingerprint=None if fp == b"\x00" * 32 else fp,
    )
