"""Plug-in discrete entropies and the speaker/feature mutual information.

Per-element entropies are summed under the element-independence
assumption: H(V) = sum_j H(V_j), and H(V|S) averages per-speaker sums with
every speaker equally likely. No bias correction is applied.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .data import QuantizedDataset
from .errors import EmptyInputError, ValidationError


@dataclass(frozen=True)
class UniquenessEstimate:
    h_population: float
    h_within: float
    i_bits: float
    bits: int
    n_speakers: int
    k_samples: int | None

    @property
    def h_speaker_max(self):
        """log2(n): the most identity information n speakers can carry."""
        return math.log2(self.n_speakers)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def _entropy_from_counts(counts, total):
    p = counts[counts > 0] / total
    return float(-np.sum(p * np.log2(p)))


def element_entropy(codes, alphabet_size):
    """Entropy in bits of the empirical distribution of ``codes``."""
    c = np.asarray(codes).ravel()
    if c.size == 0:
        raise EmptyInputError("cannot take the entropy of an empty sequence")
    if c.min() < 0 or c.max() >= alphabet_size:
        raise ValidationError(f"codes must lie in [0, {alphabet_size})")
    return _entropy_from_counts(np.bincount(c, minlength=alphabet_size), c.size)


def _column_entropies(C, alphabet_size):
    """Entropy of every column of an integer matrix, in column order."""
    n, m = C.shape
    # offset each column into its own block of the alphabet so one bincount covers all
    flat = (C + alphabet_size * np.arange(m)).ravel()
    counts = np.bincount(flat, minlength=alphabet_size * m).reshape(m, alphabet_size)
    p = counts / n
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(counts > 0, -p * np.log2(np.where(counts > 0, p, 1.0)), 0.0)
    return terms.sum(axis=1)


def _check(qds):
    if not isinstance(qds, QuantizedDataset) or qds.n_speakers == 0:
        raise EmptyInputError("quantized dataset is empty")


def vector_entropy(qds: QuantizedDataset) -> float:
    """H(V): per-element entropies of all vectors pooled, summed over elements."""
    _check(qds)
    return math.fsum(_column_entropies(qds.pooled(), 2**qds.bits).tolist())


def conditional_entropy(qds: QuantizedDataset) -> float:
    """H(V|S) with P(s) = 1/n."""
    _check(qds)
    L = 2**qds.bits
    per_speaker = [math.fsum(_column_entropies(C, L).tolist()) for C in qds.speakers.values()]
    # fsum is exactly rounded, so the result does not depend on speaker order
    return math.fsum(per_speaker) / len(per_speaker)


def mutual_information(qds: QuantizedDataset, k_samples=None) -> UniquenessEstimate:
    h_pop = vector_entropy(qds)
    h_within = conditional_entropy(qds)
    if k_samples is None:
        sizes = {C.shape[0] for C in qds.speakers.values()}
        k_samples = sizes.pop() if len(sizes) == 1 else None
    return UniquenessEstimate(
        h_population=h_pop,
        h_within=h_within,
        i_bits=h_pop - h_within,
        bits=qds.bits,
        n_speakers=qds.n_speakers,
        k_samples=k_samples,
    )
