"""Comparison measures: Hamming-distance degrees of freedom, Gaussian
relative entropy (population vs. per-speaker models), and a histogram KL
between genuine and impostor score distributions."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import QuantizedDataset, SpeakerDataset
from .errors import DegenerateInputError, InsufficientDataError, NumericalError, ValidationError

LN2 = math.log(2.0)
PAIRINGS = ("between_speaker", "all_pairs")


@dataclass(frozen=True)
class GaussianModel:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=np.float64))
        if cov.shape != (mu.size, mu.size):
            raise ValidationError(f"covariance shape {cov.shape} does not match mean length {mu.size}")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-10):
            raise ValidationError("covariance is not symmetric")
        object.__setattr__(self, "mean", mu)
        object.__setattr__(self, "covariance", 0.5 * (cov + cov.T))

    @property
    def dim(self):
        return self.mean.size

    @classmethod
    def fit(cls, X, bias=True):
        """Sample mean and covariance (maximum-likelihood scaling by default)."""
        X = np.asarray(X, dtype=np.float64)
        m = X.shape[1]
        return cls(X.mean(axis=0), np.cov(X, rowvar=False, bias=bias).reshape(m, m))


@dataclass(frozen=True)
class DofEstimate:
    p_hat: float
    sigma2_hat: float
    dof: float
    n_pairs: int
    pairing: str


def dof_from_moments(p_hat, sigma2_hat):
    """Equivalent number of iid Bernoulli trials: p(1-p)/sigma^2."""
    if sigma2_hat <= 0:
        raise DegenerateInputError("normalized Hamming distances have zero variance")
    return p_hat * (1 - p_hat) / sigma2_hat


def _pair_moments(blocks, N, pairing, block=1024):
    """Exact integer sums of Hamming distances and their squares over pairs.

    ``blocks`` is a list of 0/1 matrices, one per speaker. Pairs within one
    speaker are skipped under ``between_speaker``.
    """
    X = np.concatenate(blocks, axis=0).astype(np.int64)
    owner = np.concatenate([np.full(b.shape[0], i) for i, b in enumerate(blocks)])
    ones = X.sum(axis=1)
    Xf = X.astype(np.float64)
    n = X.shape[0]
    s1 = s2 = count = 0
    for a in range(0, n, block):
        A = Xf[a : a + block]
        for c in range(a, n, block):
            # integer-valued products are exact in float64 for N < 2**53
            dots = np.rint(A @ Xf[c : c + block].T).astype(np.int64)
            D = ones[a : a + block, None] + ones[None, c : c + block] - 2 * dots
            rows = np.arange(a, min(a + block, n))[:, None]
            cols = np.arange(c, min(c + block, n))[None, :]
            mask = cols > rows
            if pairing == "between_speaker":
                mask &= owner[rows] != owner[cols]
            d = D[mask]
            s1 += int(d.sum())
            s2 += int((d * d).sum())
            count += int(d.size)
    return s1, s2, count


def hamming_dof(data, pairing="between_speaker"):
    """Degrees of freedom of binary templates from pairwise Hamming distances.

    ``data`` is a 1-bit :class:`QuantizedDataset` or a plain 0/1 matrix
    (treated as one vector per subject). The variance is the unbiased
    sample variance of the normalized distances.
    """
    if pairing not in PAIRINGS:
        raise ValueError(f"pairing must be one of {PAIRINGS}")
    if isinstance(data, QuantizedDataset):
        if data.bits != 1:
            raise ValidationError("Hamming degrees of freedom need 1-bit codes")
        blocks = list(data.speakers.values())
    else:
        M = np.asarray(data)
        if M.ndim != 2:
            raise ValidationError("binary vectors must form a 2-D array")
        blocks = [M[i : i + 1] for i in range(M.shape[0])]
    for b in blocks:
        if b.size and (b.min() < 0 or b.max() > 1):
            raise ValidationError("codes must be 0 or 1")
    N = blocks[0].shape[1]
    n_vec = sum(b.shape[0] for b in blocks)
    if n_vec < 2:
        raise InsufficientDataError("need at least 2 vectors", attainable=n_vec)
    if pairing == "between_speaker" and len(blocks) < 2:
        raise InsufficientDataError("need at least 2 speakers for between-speaker pairs")
    s1, s2, P = _pair_moments(blocks, N, pairing)
    if P < 2:
        raise InsufficientDataError(f"only {P} pairs; need at least 2", attainable=P)
    p_hat = s1 / (P * N)
    num = P * s2 - s1 * s1
    if num <= 0:
        raise DegenerateInputError("all normalized Hamming distances are identical")
    sigma2 = num / (P * (P - 1) * N * N)
    return DofEstimate(p_hat, sigma2, dof_from_moments(p_hat, sigma2), P, pairing)


def structured_dependency_transforms(vectors, kind):
    """Append deliberately dependent bits to binary vectors.

    ``duplicate_halves`` repeats the vector; ``xor_append`` appends the XOR
    of its first and second halves.
    """
    V = np.asarray(vectors)
    squeeze = V.ndim == 1
    V = np.atleast_2d(V)
    N = V.shape[1]
    if N % 2:
        raise ValidationError(f"vector length must be even, got {N}")
    if kind == "duplicate_halves":
        out = np.concatenate([V, V], axis=1)
    elif kind == "xor_append":
        out = np.concatenate([V, np.bitwise_xor(V[:, : N // 2], V[:, N // 2 :])], axis=1)
    else:
        raise ValueError(f"unknown transform {kind!r}")
    return out[0] if squeeze else out


def _chol(cov, which):
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        lam = float(np.linalg.eigvalsh(cov)[0])
        raise NumericalError(
            f"{which} covariance is not positive definite (smallest eigenvalue {lam:.3e})"
        ) from None


def kl_gaussian(p: GaussianModel, q: GaussianModel) -> float:
    """D(p || q) in bits for multivariate normals."""
    if p.dim != q.dim:
        raise ValidationError(f"dimension mismatch: {p.dim} vs {q.dim}")
    Lp = _chol(p.covariance, "p")
    Lq = _chol(q.covariance, "q")
    # tr(Sq^-1 Sp) = ||Lq^-1 Lp||_F^2
    M = np.linalg.solve(Lq, Lp)
    z = np.linalg.solve(Lq, q.mean - p.mean)
    logdet_ratio = 2.0 * (np.sum(np.log(np.diag(Lq))) - np.sum(np.log(np.diag(Lp))))
    nats = 0.5 * (np.sum(M * M) + z @ z - p.dim + logdet_ratio)
    return max(float(nats), 0.0) / LN2


def default_ridge(pop_cov):
    return 1e-6 * float(np.trace(pop_cov)) / pop_cov.shape[0]


def adler_information(ds: SpeakerDataset, shrinkage=0.5, ridge=None):
    """Average relative entropy of each speaker's Gaussian to the population's.

    Speaker covariances are regularized as
    ``(1 - shrinkage) * S_speaker + shrinkage * S_population + ridge * I``.
    Returns ``(bits, ridge_used)``.
    """
    if not 0.0 <= shrinkage <= 1.0:
        raise ValueError("shrinkage must lie in [0, 1]")
    if ds.n_speakers < 2:
        raise InsufficientDataError("need at least 2 speakers", attainable=ds.n_speakers)
    short = [s for s, a in ds.speakers.items() if a.shape[0] < 2]
    if short:
        raise InsufficientDataError(f"speakers with fewer than 2 vectors: {short[:5]}")
    _, X = ds.stacked()
    pop = GaussianModel.fit(X)
    eps = default_ridge(pop.covariance) if ridge is None else float(ridge)
    if eps < 0:
        raise ValueError("ridge must be non-negative")
    m = ds.dim
    pop_cov = pop.covariance + eps * np.eye(m)
    if np.linalg.eigvalsh(pop_cov)[0] <= 0:
        raise NumericalError("population covariance is singular; increase the ridge")
    q = GaussianModel(pop.mean, pop_cov)
    terms = []
    for a in ds.speakers.values():
        s_cov = np.cov(a, rowvar=False, bias=True).reshape(m, m)
        reg = (1.0 - shrinkage) * s_cov + shrinkage * pop.covariance + eps * np.eye(m)
        terms.append(kl_gaussian(GaussianModel(a.mean(axis=0), reg), q))
    return math.fsum(terms) / len(terms), eps


def score_space_kl(genuine, impostor, n_bins=64):
    """Discrete KL(genuine || impostor) in bits over a shared histogram.

    Each bin probability gets ``1 / (10 * total)`` added before
    renormalization, where ``total`` counts both score sets.
    """
    g = np.asarray(genuine, dtype=np.float64).ravel()
    i = np.asarray(impostor, dtype=np.float64).ravel()
    if g.size < 2 or i.size < 2:
        raise InsufficientDataError("need at least 2 scores in each set")
    if n_bins < 2:
        raise ValueError("n_bins must be at least 2")
    lo = min(g.min(), i.min())
    hi = max(g.max(), i.max())
    if hi == lo:
        return 0.0
    edges = np.linspace(lo, hi, n_bins + 1)
    eps = 1.0 / (10.0 * (g.size + i.size))
    pg = np.histogram(g, edges)[0] / g.size + eps
    pi = np.histogram(i, edges)[0] / i.size + eps
    pg /= pg.sum()
    pi /= pi.sum()
    return float(np.sum(pg * np.log2(pg / pi)))
