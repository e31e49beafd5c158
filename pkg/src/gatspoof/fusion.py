"""Score-level fusion with a linear soft-margin SVM.

Per-system scores are standardized, then ``(w, b)`` minimizes
``0.5 * |w|^2 + C * sum_i max(0, 1 - y_i (w . x_i + b))``.  The dual is
solved with SMO (second-order working-set selection); iteration stops when
the maximal KKT violation ``m(alpha) - M(alpha)`` drops below ``tol``.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .metrics import ScoreSet

log = logging.getLogger(__name__)

TAU = 1e-12


class AlignmentError(ValueError):
    pass


@dataclass
class Aligned:
    utt_ids: list
    X: np.ndarray  # [T, K]
    is_bonafide: np.ndarray
    attack_ids: list

    @property
    def labels(self):
        return np.where(self.is_bonafide, 1.0, -1.0)


def align(score_sets):
    """Inner-join systems on utt_id; rows sorted by utt_id, one column per system."""
    if not score_sets:
        raise AlignmentError("no score sets given")
    ref = score_sets[0]
    ids = set(ref.utt_ids)
    offenders = set()
    for s in score_sets[1:]:
        offenders |= ids.symmetric_difference(s.utt_ids)
    if offenders:
        shown = sorted(offenders)
        raise AlignmentError(f"{len(shown)} utt_ids not covered by every system: {shown[:20]}")
    order = sorted(ids)
    cols = []
    key_of = dict(zip(ref.utt_ids, ref.is_bonafide))
    attack_of = dict(zip(ref.utt_ids, ref.attack_ids))
    for s in score_sets:
        lookup = dict(zip(s.utt_ids, s.scores))
        for u, b in zip(s.utt_ids, s.is_bonafide):
            if key_of[u] != b:
                raise AlignmentError(f"systems disagree on the key of {u}")
        cols.append([lookup[u] for u in order])
    X = np.array(cols, dtype=np.float64).T.reshape(len(order), len(score_sets))
    return Aligned(order, X, np.array([key_of[u] for u in order]), [attack_of[u] for u in order])


@dataclass
class FusionModel:
    weights: np.ndarray
    bias: float
    mean: np.ndarray
    std: np.ndarray
    names: tuple = ()

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if not (self.weights.shape == self.mean.shape == self.std.shape) or self.weights.ndim != 1:
            raise ValueError("weights and scaler must be K-vectors")
        if np.any(self.std <= 0):
            raise ValueError("scaler standard deviations must be positive")
        if not self.names:
            self.names = tuple(f"sys{i}" for i in range(self.k))

    @property
    def k(self):
        return self.weights.size

    def standardize(self, X):
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.std

    def to_text(self):
        def row(v):
            return " ".join(repr(float(x)) for x in v)

        return (
            f"K {self.k}\n"
            f"systems {' '.join(self.names)}\n"
            f"scaler_mean {row(self.mean)}\n"
            f"scaler_std {row(self.std)}\n"
            f"weights {row(self.weights)}\n"
            f"bias {float(self.bias)!r}\n"
        )

    @classmethod
    def from_text(cls, text):
        fields = {}
        for line in text.splitlines():
            if line.strip() and not line.startswith("#"):
                key, *vals = line.split()
                fields[key] = vals
        try:
            k = int(fields["K"][0])
            model = cls(
                [float(v) for v in fields["weights"]],
                float(fields["bias"][0]),
                [float(v) for v in fields["scaler_mean"]],
                [float(v) for v in fields["scaler_std"]],
                tuple(fields["systems"]),
            )
        except (KeyError, IndexError) as exc:
            raise ValueError(f"incomplete fusion model file: missing {exc}") from exc
        if model.k != k or len(model.names) != k:
            raise ValueError("fusion model K does not match its vectors")
        return model

    def save(self, path):
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path):
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def smo_linear_svm(X, y, C=1.0, tol=1e-6, max_iter=1_000_000):
    """Dual SMO for the linear soft-margin SVM; returns (w, b, alpha, iterations)."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    alpha = np.zeros(n)
    G = -np.ones(n)  # gradient of 0.5 a'Qa - e'a
    sqn = np.einsum("ij,ij->i", X, X)
    it = 0
    while it < max_iter:
        yG = -y * G
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y < 0) & (alpha < C)) | ((y > 0) & (alpha > 0))
        if not up.any() or not low.any():
            break
        i = int(np.flatnonzero(up)[np.argmax(yG[up])])
        m = yG[i]
        M = yG[low].min()
        if m - M < tol:
            break
        # second-order choice of j among violating low indices
        kij = X @ X[i]
        cand = low & (yG < m)
        bgap = m - yG[cand]
        a = sqn[i] + sqn[cand] - 2.0 * kij[cand]
        a = np.where(a > 0, a, TAU)
        j = int(np.flatnonzero(cand)[np.argmin(-(bgap * bgap) / a)])
        kjj_i = X @ X[j]
        ai_old, aj_old = alpha[i], alpha[j]
        quad = max(sqn[i] + sqn[j] - 2.0 * kij[j], TAU)
        if y[i] != y[j]:
            delta = (-G[i] - G[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j], alpha[i] = 0.0, diff
            elif alpha[i] < 0:
                alpha[i], alpha[j] = 0.0, -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i], alpha[j] = C, C - diff
            elif alpha[j] > C:
                alpha[j], alpha[i] = C, C + diff
        else:
            delta = (G[i] - G[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i], alpha[j] = C, total - C
            elif alpha[j] < 0:
                alpha[j], alpha[i] = 0.0, total
            if total > C:
                if alpha[j] > C:
                    alpha[j], alpha[i] = C, total - C
            elif alpha[i] < 0:
                alpha[i], alpha[j] = 0.0, total
        d_i, d_j = alpha[i] - ai_old, alpha[j] - aj_old
        G += y * (y[i] * d_i * kij + y[j] * d_j * kjj_i)
        it += 1
    else:
        warnings.warn(f"SMO stopped at max_iter={max_iter} before reaching tol={tol}", RuntimeWarning)

    w = (alpha * y) @ X
    yG = -y * G
    free = (alpha > 0) & (alpha < C)
    if free.any():
        b = float(np.mean(yG[free]))
    else:
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y < 0) & (alpha < C)) | ((y > 0) & (alpha > 0))
        b = float((yG[up].max() + yG[low].min()) / 2)
    polished = _polish(X, y, alpha, C, tol)
    if polished is not None:
        alpha, w, b = polished
    return w, b, alpha, it


def _polish(X, y, alpha, C, tol):
    """Re-solve the KKT equations exactly on the active set found by SMO.

    Free vectors satisfy ``y_i (x_i . w + b) = 1``.  When they span the
    augmented space, (w, b) follows from those equations alone; otherwise the
    reduced dual system is solved.  Returns None if the polished point leaves
    the box or violates the margins by more than ``tol``.
    """
    slack = 1e-9 * C
    free = (alpha > slack) & (alpha < C - slack)
    at_c = alpha >= C - slack
    if not free.any():
        return None
    A = np.column_stack([X[free], np.ones(free.sum())])
    if np.linalg.matrix_rank(A) == A.shape[1]:
        sol, *_ = np.linalg.lstsq(A, y[free], rcond=None)
        w, b = sol[:-1], float(sol[-1])
        new_alpha = alpha
    else:
        Xf, yf = X[free], y[free]
        Q = (yf[:, None] * Xf) @ (yf[:, None] * Xf).T
        fixed = C * (y[at_c][:, None] * X[at_c]).sum(axis=0)
        rhs = np.append(1.0 - yf * (Xf @ fixed), -C * y[at_c].sum())
        M = np.block([[Q, yf[:, None]], [yf[None, :], np.zeros((1, 1))]])
        try:
            sol = np.linalg.solve(M, rhs)
        except np.linalg.LinAlgError:
            return None
        a_f, b = sol[:-1], float(sol[-1])
        if np.any(a_f < 0) or np.any(a_f > C):
            return None
        new_alpha = alpha.copy()
        new_alpha[free] = a_f
        w = (new_alpha * y) @ X
    margins = y * (X @ w + b)
    ok_free = np.all(np.abs(margins[free] - 1.0) <= tol)
    ok_zero = np.all(margins[~free & ~at_c] >= 1.0 - tol)
    ok_c = np.all(margins[at_c] <= 1.0 + tol)
    return (new_alpha, w, b) if ok_free and ok_zero and ok_c else None


def fit_svm(X, labels, C=1.0, tol=1e-6, names=()):
    """Fit a fusion model on aligned dev scores; labels are bool (bona fide) or +/-1."""
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels)
    y = np.where(labels.astype(bool) if labels.dtype == bool else labels > 0, 1.0, -1.0)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ValueError("X must be [T, K] with one label per row")
    if np.all(y > 0) or np.all(y < 0):
        raise ValueError("SVM fusion needs both classes")
    T, K = X.shape
    if K < 2:
        raise ValueError("fusion needs at least two systems")
    if T <= K:
        warnings.warn(f"only {T} trials for {K} systems", RuntimeWarning)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    if np.any(std <= 0):
        bad = [names[i] if i < len(names) else i for i in np.flatnonzero(std <= 0)]
        raise ValueError(f"degenerate (constant) systems: {bad}")
    Z = (X - mean) / std
    w, b, _, it = smo_linear_svm(Z, y, C, tol)
    log.info("SVM fusion converged in %d SMO iterations", it)
    return FusionModel(w, b, mean, std, tuple(names))


def primal_objective(model, X, labels, C=1.0):
    y = np.where(np.asarray(labels) > 0, 1.0, -1.0)
    margins = y * fuse(model, X)
    return 0.5 * float(model.weights @ model.weights) + C * float(np.maximum(0.0, 1.0 - margins).sum())


def fuse(model, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.k:
        raise ValueError(f"expected [T, {model.k}] scores, got {X.shape}")
    return model.standardize(X) @ model.weights + model.bias


def fuse_sets(model, aligned):
    """Fused ScoreSet carrying the aligned trials' keys and attack ids."""
    return ScoreSet(list(aligned.utt_ids), fuse(model, aligned.X), aligned.is_bonafide.copy(),
                    list(aligned.attack_ids))
