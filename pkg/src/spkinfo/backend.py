"""Speaker-verification backend: preprocessing, LDA, Gaussian PLDA trained
by EM, log-likelihood-ratio scoring, trial construction, and EER."""

from __future__ import annotations

import csv
import io
import json
import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg as sla

from . import rng
from .data import SpeakerDataset
from .errors import (
    DimensionMismatchError,
    EmptyInputError,
    InsufficientDataError,
    NumericalError,
    ValidationError,
)

LOG_2PI = math.log(2.0 * math.pi)
EIG_FLOOR = 1e-8


# ------------------------------------------------------------ preprocessing


def _floored_eigh(cov, floor_rel, what):
    lam, V = np.linalg.eigh(0.5 * (cov + cov.T))
    top = lam[-1]
    if top <= 0:
        raise NumericalError(f"{what} covariance is zero or negative definite")
    if floor_rel <= 0:
        if lam[0] <= 1e-12 * top:
            raise NumericalError(
                f"{what} covariance is rank deficient (smallest eigenvalue {lam[0]:.3e}); "
                "use a positive eigenvalue floor"
            )
        return lam, V
    return np.maximum(lam, floor_rel * top), V


def fit_preprocess(dev, floor_rel=EIG_FLOOR):
    """Global mean and symmetric inverse square root of the covariance."""
    X = dev.stacked()[1] if isinstance(dev, SpeakerDataset) else np.asarray(dev, dtype=np.float64)
    if X.shape[0] < 2:
        raise InsufficientDataError("need at least 2 vectors to estimate a covariance")
    center = X.mean(axis=0)
    Xc = X - center
    cov = Xc.T @ Xc / X.shape[0]
    lam, V = _floored_eigh(cov, floor_rel, "development")
    whitener = (V / np.sqrt(lam)) @ V.T
    return center, 0.5 * (whitener + whitener.T)


def whiten_normalize(X, center, whitener):
    """Center, whiten and scale every row to unit Euclidean length."""
    Y = (np.atleast_2d(np.asarray(X, dtype=np.float64)) - center) @ whitener.T
    norms = np.linalg.norm(Y, axis=1)
    if np.any(norms == 0):
        raise ValidationError("cannot length-normalize a zero vector (input equals the center)")
    return Y / norms[:, None]


# --------------------------------------------------------------------- LDA


def _scatter(groups):
    """Between- and within-class scatter (normalized by total count)."""
    X = np.concatenate(groups, axis=0)
    N, m = X.shape
    mu = X.mean(axis=0)
    Sb = np.zeros((m, m))
    Sw = np.zeros((m, m))
    for G in groups:
        mi = G.mean(axis=0)
        dm = mi - mu
        Sb += G.shape[0] * np.outer(dm, dm)
        Gc = G - mi
        Sw += Gc.T @ Gc
    return Sb / N, Sw / N


def _fix_signs(V):
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def fit_lda(groups, d, floor_rel=EIG_FLOOR):
    """Top-``d`` generalized eigenvectors of (between, within + floor*I).

    ``groups`` is a list of per-speaker ``(k_i, m)`` matrices or a dataset.
    Columns are ordered by decreasing eigenvalue, scaled so that
    ``v.T @ (S_w + floor*I) @ v == 1``, and signed so that their
    largest-magnitude entry is positive.
    """
    if isinstance(groups, SpeakerDataset):
        groups = list(groups.speakers.values())
    m = groups[0].shape[1]
    n = len(groups)
    if d < 1 or d > min(m, n - 1):
        raise ValidationError(f"LDA dimension {d} must be in 1..min(m={m}, n_speakers-1={n - 1})")
    Sb, Sw = _scatter(groups)
    top = np.linalg.eigvalsh(Sw)[-1]
    Sw_reg = Sw + floor_rel * max(top, np.finfo(float).tiny) * np.eye(m)
    lam, V = sla.eigh(Sb, Sw_reg)
    order = np.argsort(lam)[::-1][:d]
    return _fix_signs(V[:, order])


# -------------------------------------------------------------------- PLDA


@dataclass(frozen=True)
class PLDAParams:
    """x = F h + e with h ~ N(0, I) and e ~ N(0, W)."""

    F: np.ndarray
    W: np.ndarray
    loglik: tuple = field(default=(), compare=False)

    @property
    def B(self):
        return self.F @ self.F.T

    @property
    def dim(self):
        return self.W.shape[0]


def _speaker_stats(groups):
    by_n: dict[int, list[np.ndarray]] = {}
    S = 0.0
    N = 0
    for G in groups:
        by_n.setdefault(G.shape[0], []).append(G.sum(axis=0))
        S = S + G.T @ G
        N += G.shape[0]
    return {n: np.array(v) for n, v in sorted(by_n.items())}, S, N


def _e_step(F, W, by_n, S, N):
    """Posterior moments of the speaker factors and the data log-likelihood."""
    d, ds = F.shape
    cW = np.linalg.cholesky(W)
    Wi = sla.cho_solve((cW, True), np.eye(d))
    logdet_W = 2.0 * np.sum(np.log(np.diag(cW)))
    FtWi = F.T @ Wi
    FtWiF = FtWi @ F
    R = np.zeros((d, ds))
    Q = np.zeros((ds, ds))
    ll = -0.5 * (N * d * LOG_2PI + N * logdet_W + np.sum(Wi * S))
    for n, sums in by_n.items():
        P = np.eye(ds) + n * FtWiF
        cP = np.linalg.cholesky(P)
        Pinv = sla.cho_solve((cP, True), np.eye(ds))
        b = sums @ FtWi.T  # (n_spk, ds)
        Eh = b @ Pinv  # Pinv symmetric
        R += sums.T @ Eh
        Q += n * (len(sums) * Pinv + Eh.T @ Eh)
        ll += -0.5 * len(sums) * 2.0 * np.sum(np.log(np.diag(cP))) + 0.5 * np.sum(b * Eh)
    return R, Q, float(ll)


def _init_plda(groups, ds):
    means = np.array([G.mean(axis=0) for G in groups])
    within = sum((G - G.mean(axis=0)).T @ (G - G.mean(axis=0)) for G in groups)
    N = sum(G.shape[0] for G in groups)
    W = within / max(N - len(groups), 1)
    between = np.cov(means, rowvar=False, bias=True).reshape(W.shape)
    lam, V = np.linalg.eigh(between)
    lam, V = lam[::-1][:ds], V[:, ::-1][:, :ds]
    F = _fix_signs(V) * np.sqrt(np.maximum(lam, 1e-6 * max(lam[0], 1e-12)))
    top = np.linalg.eigvalsh(W)[-1]
    W = W + 1e-6 * top * np.eye(W.shape[0])
    return F, W


def fit_gplda(groups, d_s=None, iters=10, F0=None, W0=None):
    """Fit the speaker loading ``F`` and residual covariance ``W`` by EM.

    ``groups`` holds one ``(k_i, d)`` matrix per speaker (already centered).
    Speakers with a single sample are dropped with a warning. The returned
    ``loglik`` trace has one entry per parameter set visited, starting with
    the initialization.
    """
    if isinstance(groups, SpeakerDataset):
        groups = list(groups.speakers.values())
    kept = [G for G in groups if G.shape[0] >= 2]
    if len(kept) < len(groups):
        warnings.warn(f"excluded {len(groups) - len(kept)} single-sample speakers from PLDA training")
    if not kept:
        raise InsufficientDataError("no speaker has 2 or more samples")
    d = kept[0].shape[1]
    d_s = d_s or max(d // 2, 1)
    if not 1 <= d_s <= d:
        raise ValidationError(f"speaker subspace dimension {d_s} must be in 1..{d}")
    F, W = _init_plda(kept, d_s)
    if F0 is not None:
        F = np.array(F0, dtype=np.float64)
    if W0 is not None:
        W = np.array(W0, dtype=np.float64)
    by_n, S, N = _speaker_stats(kept)
    trace = []
    for _ in range(iters):
        R, Q, ll = _e_step(F, W, by_n, S, N)
        trace.append(ll)
        F = sla.solve(Q, R.T, assume_a="pos").T
        W = (S - F @ R.T) / N
        W = 0.5 * (W + W.T)
    trace.append(_e_step(F, W, by_n, S, N)[2])
    return PLDAParams(F, W, tuple(trace))


class LLRScorer:
    """Same-speaker vs. different-speaker log-likelihood ratio.

    For ``T = B + W`` the two hypotheses have joint covariances
    ``[[T, B], [B, T]]`` and ``[[T, 0], [0, T]]``; the quadratic form
    reduces to ``-0.5 (x1'A x1 + x2'A x2 + 2 x1'C x2) + const``.
    """

    def __init__(self, plda: PLDAParams):
        B = plda.B
        T = B + plda.W
        cT = np.linalg.cholesky(T)
        Ti = sla.cho_solve((cT, True), np.eye(T.shape[0]))
        Schur = T - B @ Ti @ B
        Schur = 0.5 * (Schur + Schur.T)
        try:
            cS = np.linalg.cholesky(Schur)
        except np.linalg.LinAlgError:
            raise NumericalError("same-speaker covariance is not positive definite") from None
        Si = sla.cho_solve((cS, True), np.eye(T.shape[0]))
        self.A = 0.5 * ((Si - Ti) + (Si - Ti).T)
        C = -Ti @ B @ Si
        self.C = 0.5 * (C + C.T)
        self.const = -(np.sum(np.log(np.diag(cS))) - np.sum(np.log(np.diag(cT))))
        self.dim = T.shape[0]

    def score(self, x1, x2):
        x1 = np.asarray(x1, dtype=np.float64)
        x2 = np.asarray(x2, dtype=np.float64)
        if x1.shape != (self.dim,) or x2.shape != (self.dim,):
            raise DimensionMismatchError(f"expected vectors of length {self.dim}")
        quad = (x1 @ self.A @ x1 + x2 @ self.A @ x2) + (x1 @ self.C @ x2 + x2 @ self.C @ x1)
        return float(-0.5 * quad + self.const)

    def score_matrix(self, X1, X2):
        X1 = np.atleast_2d(X1)
        X2 = np.atleast_2d(X2)
        if X1.shape[1] != self.dim or X2.shape[1] != self.dim:
            raise DimensionMismatchError(f"expected vectors of length {self.dim}")
        q1 = np.einsum("ij,jk,ik->i", X1, self.A, X1)
        q2 = np.einsum("ij,jk,ik->i", X2, self.A, X2)
        cross = X1 @ self.C @ X2.T
        return -0.5 * (q1[:, None] + q2[None, :] + 2.0 * cross) + self.const


def score_llr(plda, x1, x2):
    return LLRScorer(plda).score(x1, x2)


# ----------------------------------------------------------- full backend


@dataclass(frozen=True)
class BackendModel:
    center: np.ndarray
    whitener: np.ndarray
    lda: np.ndarray | None
    lda_mean: np.ndarray | None
    plda: PLDAParams | None
    metadata: dict = field(default_factory=dict, compare=False)

    def preprocess(self, X):
        """center -> whiten -> length-normalize -> LDA (if fit)."""
        Y = whiten_normalize(X, self.center, self.whitener)
        if self.lda is not None:
            Y = Y @ self.lda - self.lda_mean
        return Y

    def scorer(self):
        return LLRScorer(self.plda)

    # binary container: "BIOB", u32 version, u32 array count, then per array
    # u16 name length + name, u32 ndim, u64 dims, float64 LE data
    _ARRAYS = ("center", "whitener", "lda", "lda_mean", "plda_F", "plda_W")

    def _arrays(self):
        out = {"center": self.center, "whitener": self.whitener}
        if self.lda is not None:
            out["lda"] = self.lda
            out["lda_mean"] = self.lda_mean
        if self.plda is not None:
            out["plda_F"] = self.plda.F
            out["plda_W"] = self.plda.W
        return out

    def to_bytes(self):
        arrays = self._arrays()
        parts = [struct.pack("<4sII", b"BIOB", 1, len(arrays))]
        for name, a in arrays.items():
            a = np.asarray(a, dtype="<f8")
            raw = name.encode("utf-8")
            parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<I", a.ndim))
            parts.append(struct.pack(f"<{a.ndim}Q", *a.shape))
            parts.append(a.tobytes(order="C"))
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, blob, metadata=None):
        magic, version, count = struct.unpack_from("<4sII", blob, 0)
        if magic != b"BIOB" or version != 1:
            raise ValidationError("not a backend model container")
        pos = 12
        arrays = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos : pos + n].decode("utf-8")
            pos += n
            (ndim,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}Q", blob, pos)
            pos += 8 * ndim
            size = int(np.prod(shape)) if ndim else 1
            arrays[name] = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).reshape(shape).copy()
            pos += 8 * size
        plda = None
        if "plda_F" in arrays:
            plda = PLDAParams(arrays["plda_F"], arrays["plda_W"], tuple((metadata or {}).get("loglik", ())))
        return cls(arrays["center"], arrays["whitener"], arrays.get("lda"), arrays.get("lda_mean"),
                   plda, dict(metadata or {}))

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())
        Path(str(path) + ".json").write_text(json.dumps(self.metadata, sort_keys=True, indent=2) + "\n")

    @classmethod
    def load(cls, path):
        meta_path = Path(str(path) + ".json")
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        return cls.from_bytes(Path(path).read_bytes(), meta)


def fit_backend(dev: SpeakerDataset, lda_dim=None, plda_dim=None, iters=10, bank=None,
                floor_rel=EIG_FLOOR):
    """Fit preprocessing, LDA and PLDA on development speakers.

    With ``bank`` the development vectors are quantized (and mapped back to
    reals) first, so the whole backend is re-estimated on quantized data.
    """
    if bank is not None:
        dev = bank.reconstruct_dataset(dev)
    center, whitener = fit_preprocess(dev, floor_rel)
    groups = [whiten_normalize(a, center, whitener) for a in dev.speakers.values()]
    d = lda_dim or min(dev.dim, dev.n_speakers - 1)
    lda = fit_lda(groups, d, floor_rel)
    projected = [G @ lda for G in groups]
    lda_mean = np.concatenate(projected).mean(axis=0)
    projected = [G - lda_mean for G in projected]
    d_s = plda_dim or max(d // 2, 1)
    plda = fit_gplda(projected, d_s, iters)
    meta = {
        "lda_dim": d,
        "plda_dim": d_s,
        "iterations": iters,
        "eig_floor_rel": floor_rel,
        "final_loglik": plda.loglik[-1],
        "loglik": list(plda.loglik),
        "quantized_bits": None if bank is None else bank.bits,
        "representation": None if bank is None else bank.representation,
    }
    return BackendModel(center, whitener, lda, lda_mean, plda, meta)


# ------------------------------------------------------------------ trials


@dataclass(frozen=True)
class ScoreSet:
    genuine: np.ndarray
    impostor: np.ndarray

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["label", "score"])
        for s in self.genuine:
            w.writerow(["genuine", repr(float(s))])
        for s in self.impostor:
            w.writerow(["impostor", repr(float(s))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        gen, imp = [], []
        rows = csv.reader(io.StringIO(text))
        header = next(rows, None)
        if header != ["label", "score"]:
            raise ValidationError("score file header must be 'label,score'")
        for lineno, row in enumerate(rows, start=2):
            if not row:
                continue
            label, value = row
            if label == "genuine":
                gen.append(float(value))
            elif label == "impostor":
                imp.append(float(value))
            else:
                raise ValidationError(f"line {lineno}: unknown label {label!r}")
        return cls(np.array(gen), np.array(imp))


def build_trials(measure: SpeakerDataset, model: BackendModel, bank=None, seed=0):
    """Hold out one vector per speaker, enroll on the mean of the rest.

    Every held-out test vector is scored against every enrollment model:
    same-speaker pairs are genuine trials, the rest impostor trials.
    Returns ``(ScoreSet, score_matrix)``.
    """
    if bank is not None:
        measure = bank.reconstruct_dataset(measure)
    tests, enrolls = [], []
    skipped = 0
    for sid, a in measure.speakers.items():
        if a.shape[0] < 2:
            skipped += 1
            continue
        order = rng.permutation(rng.stream(seed, 0x7E57, rng.label_of(sid)), a.shape[0])
        P = model.preprocess(a[order])
        tests.append(P[-1])
        enrolls.append(P[:-1].mean(axis=0))
    if skipped:
        warnings.warn(f"excluded {skipped} speakers with fewer than 2 samples from trials")
    if not tests:
        raise InsufficientDataError("no speaker has 2 or more samples")
    M = model.scorer().score_matrix(np.array(tests), np.array(enrolls))
    diag = np.eye(len(tests), dtype=bool)
    return ScoreSet(M[diag], M[~diag]), M


def _det_points(genuine, impostor):
    """FAR/FRR at every distinct score used as a threshold, plus a point above the maximum."""
    g = np.sort(genuine)
    i = np.sort(impostor)
    t = np.unique(np.concatenate([g, i]))
    far = (i.size - np.searchsorted(i, t, side="left")) / i.size
    frr = np.searchsorted(g, t, side="left") / g.size
    return np.append(far, 0.0), np.append(frr, 1.0)


def compute_eer(genuine, impostor=None):
    """Equal error rate with linear interpolation across the FAR/FRR crossing.

    Accepts a :class:`ScoreSet` or two score arrays.
    """
    if isinstance(genuine, ScoreSet):
        genuine, impostor = genuine.genuine, genuine.impostor
    g = np.asarray(genuine, dtype=np.float64).ravel()
    i = np.asarray(impostor, dtype=np.float64).ravel()
    if g.size == 0 or i.size == 0:
        raise EmptyInputError("EER needs genuine and impostor scores")
    far, frr = _det_points(g, i)
    diff = far - frr  # non-increasing, ends at -1
    k = int(np.argmax(diff <= 0))
    if diff[k] == 0 or k == 0:
        return float(0.5 * (far[k] + frr[k]))
    # crossing lies between sweep points k-1 and k
    alpha = diff[k - 1] / (diff[k - 1] - diff[k])
    return float(far[k - 1] + alpha * (far[k] - far[k - 1]))
