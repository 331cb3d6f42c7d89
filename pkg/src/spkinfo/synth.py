"""Synthetic speaker populations with known structure and the oracles that
check the estimators against them.

Nothing here imports the estimator code paths: the brute-force entropy
oracle counts with ``collections.Counter`` and the Gaussian oracle
integrates cell probabilities analytically.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import ndtr

from . import rng
from .data import SpeakerDataset
from .errors import NumericalError, ValidationError

DEFAULT_GH_ORDER = 64


@dataclass(frozen=True)
class PopulationSpec:
    """Speaker means ~ N(0, between_std**2); samples ~ N(mean, within_std**2), per dim."""

    m: int
    between_std: tuple
    within_std: tuple
    n_speakers: int
    k_samples: int
    seed: int = 0

    def __post_init__(self):
        m = int(self.m)
        tau = np.broadcast_to(np.asarray(self.between_std, dtype=np.float64), (m,))
        sig = np.broadcast_to(np.asarray(self.within_std, dtype=np.float64), (m,))
        if m < 1 or self.n_speakers < 1 or self.k_samples < 1:
            raise ValidationError("m, n_speakers and k_samples must be at least 1")
        for name, v in (("between_std", tau), ("within_std", sig)):
            if not np.all(np.isfinite(v)) or np.any(v <= 0):
                raise ValidationError(f"{name} must be finite and positive")
        object.__setattr__(self, "between_std", tuple(float(x) for x in tau))
        object.__setattr__(self, "within_std", tuple(float(x) for x in sig))

    @classmethod
    def standard(cls, **overrides):
        """The reference population used by the acceptance checks."""
        kw = dict(m=50, between_std=1.0, within_std=0.5, n_speakers=1000, k_samples=100, seed=42)
        kw.update(overrides)
        return cls(**kw)

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, doc):
        return cls(**doc)


def speaker_id(i, n):
    return f"spk{i:0{max(len(str(n - 1)), 5)}d}"


def generate_population(spec: PopulationSpec) -> SpeakerDataset:
    tau = np.array(spec.between_std)
    sig = np.array(spec.within_std)
    out = {}
    for i in range(spec.n_speakers):
        gen = rng.stream(spec.seed, 0xD07A, i)
        mean = tau * rng.standard_normal(gen, spec.m)
        noise = rng.standard_normal(gen, (spec.k_samples, spec.m))
        out[speaker_id(i, spec.n_speakers)] = mean + sig * noise
    return SpeakerDataset(spec.m, out, {"source": "synthetic", "spec": asdict(spec)})


def generate_plda_population(F, W, n_speakers, k_samples, seed=0) -> SpeakerDataset:
    """x = F h_i + e with h_i ~ N(0, I) per speaker and e ~ N(0, W) per sample."""
    F = np.atleast_2d(np.asarray(F, dtype=np.float64))
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    d, ds = F.shape
    try:
        cW = np.linalg.cholesky(W)
    except np.linalg.LinAlgError:
        raise NumericalError("residual covariance W is not positive definite") from None
    out = {}
    for i in range(n_speakers):
        gen = rng.stream(seed, 0x91DA, i)
        h = rng.standard_normal(gen, ds)
        e = rng.standard_normal(gen, (k_samples, d)) @ cW.T
        out[speaker_id(i, n_speakers)] = F @ h + e
    return SpeakerDataset(d, out, {"source": "synthetic-plda"})


def generate_iid_binary(n_vectors, length, p=0.5, seed=0):
    if not 0.0 < p < 1.0:
        raise ValidationError("p must lie in (0, 1)")
    u = rng.uniform_open(rng.stream(seed, 0xB17), (n_vectors, length))
    return (u < p).astype(np.int8)


# ------------------------------------------------------------------ oracles


def _cell_entropy(edges, mean, std):
    p = np.diff(ndtr((edges - mean) / std))
    p = p[p > 0]
    return float(-np.sum(p * np.log2(p)))


def _conditional_cell_entropy(edges, tau, sigma, order):
    x, w = np.polynomial.hermite.hermgauss(order)
    vals = [_cell_entropy(edges, math.sqrt(2.0) * tau * xi, sigma) for xi in x]
    return float(np.dot(w, vals) / math.sqrt(math.pi))


def numeric_mi_oracle(spec: PopulationSpec, quantizers, order=DEFAULT_GH_ORDER, tol=1e-4,
                      details=False):
    """Mutual information the quantized Gaussian population carries, by integration.

    Per dim the marginal N(0, tau^2 + sigma^2) gives H(V_j); H(V_j|S) is the
    expected cell entropy of N(mu, sigma^2) over mu ~ N(0, tau^2), integrated
    with Gauss-Hermite quadrature. The quadrature is repeated at twice the
    order and a difference above ``tol`` bits (per dim) raises.
    """
    if hasattr(quantizers, "per_dim"):
        quantizers = quantizers.per_dim
    quantizers = list(quantizers)
    if len(quantizers) != spec.m:
        raise ValidationError(f"need {spec.m} quantizers, got {len(quantizers)}")
    h_pop = h_within = 0.0
    worst = 0.0
    for tau, sig, q in zip(spec.between_std, spec.within_std, quantizers):
        edges = np.concatenate(([-np.inf], np.asarray(q.boundaries, dtype=np.float64), [np.inf]))
        h_pop += _cell_entropy(edges, 0.0, math.hypot(tau, sig))
        hc = _conditional_cell_entropy(edges, tau, sig, order)
        check = _conditional_cell_entropy(edges, tau, sig, 2 * order)
        worst = max(worst, abs(hc - check))
        h_within += hc
    if worst > tol:
        raise NumericalError(
            f"Gauss-Hermite integration did not converge: order {order} vs {2 * order} "
            f"differ by {worst:.3e} bits (tolerance {tol:.1e})"
        )
    mi = h_pop - h_within
    if details:
        return {"h_population": h_pop, "h_within": h_within, "i_bits": mi, "quadrature_error": worst}
    return mi


def _plugin_entropy(values):
    counts = Counter(values)
    total = len(values)
    h = 0.0
    for c in counts.values():
        p = c / total
        h -= p * math.log2(p)
    return h


def brute_force_entropy_oracle(qds):
    """(H(V), H(V|S)) recomputed element by element with plain Python counting."""
    speakers = {sid: [[int(c) for c in row] for row in np.asarray(codes)]
                for sid, codes in qds.speakers.items()}
    rows = [row for vecs in speakers.values() for row in vecs]
    m = len(rows[0])
    if m > 6 or qds.bits > 3 or len(rows) > 10_000:
        raise ValidationError("brute-force oracle limited to m <= 6, b <= 3, <= 10^4 vectors")
    h_pop = 0.0
    for j in range(m):
        h_pop += _plugin_entropy([row[j] for row in rows])
    h_cond = 0.0
    for vecs in speakers.values():
        for j in range(m):
            h_cond += _plugin_entropy([row[j] for row in vecs]) / len(speakers)
    return h_pop, h_cond
