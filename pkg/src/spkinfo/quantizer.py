"""Per-dimension Lloyd-Max scalar quantizers trained on empirical samples."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import QuantizedDataset, SpeakerDataset
from .errors import (
    DegenerateInputError,
    DimensionMismatchError,
    EmptyInputError,
    ValidationError,
)

DEFAULT_TOL = 1e-7
DEFAULT_MAX_ITER = 200
REPRESENTATIONS = ("quantum_value", "codeword")


@dataclass(frozen=True)
class ScalarQuantizer:
    """A ``2**bits``-level quantizer.

    Cell ``i`` is the half-open interval ``(boundaries[i-1], boundaries[i]]``;
    the first cell extends to -inf and the last to +inf.
    """

    bits: int
    boundaries: np.ndarray
    levels: np.ndarray
    distortion: float = float("nan")
    trace: tuple = field(default=(), compare=False, repr=False)
    iterations: int = field(default=0, compare=False)

    def __post_init__(self):
        b = np.array(self.boundaries, dtype=np.float64)
        lv = np.array(self.levels, dtype=np.float64)
        if not 1 <= self.bits <= 8:
            raise ValidationError(f"bits must be in 1..8, got {self.bits}")
        L = 2**self.bits
        if lv.shape != (L,) or b.shape != (L - 1,):
            raise ValidationError(f"expected {L} levels and {L - 1} boundaries")
        if np.any(np.diff(lv) <= 0) or np.any(np.diff(b) <= 0):
            raise ValidationError("levels and boundaries must be strictly increasing")
        b.setflags(write=False)
        lv.setflags(write=False)
        object.__setattr__(self, "boundaries", b)
        object.__setattr__(self, "levels", lv)

    def encode(self, x):
        # side="left" puts a value equal to a boundary in the lower cell
        return np.searchsorted(self.boundaries, np.asarray(x, dtype=np.float64), side="left")

    def decode(self, codes):
        return self.levels[codes]

    def to_dict(self):
        return {"boundaries": self.boundaries.tolist(), "levels": self.levels.tolist()}


def _assign(sorted_x, boundaries):
    """Cell start offsets for samples already sorted ascending."""
    cuts = np.searchsorted(sorted_x, boundaries, side="right")
    return np.concatenate(([0], cuts, [sorted_x.size]))


def _initial_levels(sorted_x, L):
    q = (np.arange(L) + 0.5) / L
    levels = np.quantile(sorted_x, q)
    if np.all(np.diff(levels) > 0):
        return levels
    # heavy ties collapse sample quantiles; fall back to quantiles of the distinct values
    distinct = np.unique(sorted_x)
    return np.quantile(distinct, q)


def train_lloyd_max(samples, bits, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Train an MSE-optimal scalar quantizer with Lloyd's alternation.

    Each iteration sets boundaries to midpoints of the current levels, then
    moves every level to the mean of its cell. Training stops once the
    relative MSE improvement drops below ``tol`` or after ``max_iter``
    iterations. The returned ``trace`` holds the MSE after every partition
    step and is non-increasing.

    Raises:
        EmptyInputError: no samples.
        DegenerateInputError: fewer than ``2**bits`` distinct values.
    """
    x = np.sort(np.asarray(samples, dtype=np.float64).ravel())
    if x.size == 0:
        raise EmptyInputError("no samples to train on")
    if not np.all(np.isfinite(x)):
        raise ValidationError("samples contain non-finite values")
    if not 1 <= bits <= 8:
        raise ValidationError(f"bits must be in 1..8, got {bits}")
    if tol <= 0:
        raise ValueError("tol must be positive")
    L = 2**bits
    n_distinct = np.unique(x).size
    if n_distinct < L:
        raise DegenerateInputError(f"{n_distinct} distinct values cannot fill {L} cells")

    csum = np.concatenate(([0.0], np.cumsum(x)))

    def partition_stats(levels):
        bounds = 0.5 * (levels[1:] + levels[:-1])
        starts = _assign(x, bounds)
        counts = np.diff(starts)
        sums = csum[starts[1:]] - csum[starts[:-1]]
        err = x - np.repeat(levels, counts)
        return bounds, counts, sums, float(np.dot(err, err)) / x.size

    levels = _initial_levels(x, L)
    bounds, counts, sums, mse = partition_stats(levels)
    trace = [mse]
    it = 0
    while it < max_iter:
        it += 1
        new = levels.copy()
        full = counts > 0
        new[full] = sums[full] / counts[full]
        for i in np.flatnonzero(~full):
            if 0 < i < L - 1:
                new[i] = 0.5 * (bounds[i - 1] + bounds[i])
            # empty edge cells keep their level
        levels = new
        bounds, counts, sums, new_mse = partition_stats(levels)
        trace.append(new_mse)
        improvement = (mse - new_mse) / mse if mse > 0 else 0.0
        mse = new_mse
        if improvement < tol:
            break
    return ScalarQuantizer(bits, bounds, levels, float(mse), tuple(trace), it)


@dataclass(frozen=True)
class QuantizerBank:
    per_dim: tuple
    representation: str = "quantum_value"

    def __post_init__(self):
        object.__setattr__(self, "per_dim", tuple(self.per_dim))
        if not self.per_dim:
            raise ValidationError("bank has no quantizers")
        if len({q.bits for q in self.per_dim}) != 1:
            raise ValidationError("all quantizers in a bank must share the same bit depth")
        if self.representation not in REPRESENTATIONS:
            raise ValidationError(f"representation must be one of {REPRESENTATIONS}")

    @property
    def bits(self):
        return self.per_dim[0].bits

    @property
    def dim(self):
        return len(self.per_dim)

    def with_representation(self, representation):
        return QuantizerBank(self.per_dim, representation)

    def quantize(self, v):
        """Codes for a vector or an ``(N, m)`` matrix."""
        X = np.asarray(v, dtype=np.float64)
        if X.shape[-1] != self.dim:
            raise DimensionMismatchError(f"vector length {X.shape[-1]} != bank size {self.dim}")
        out = np.empty(X.shape, dtype=np.int64)
        for j, q in enumerate(self.per_dim):
            out[..., j] = q.encode(X[..., j])
        return out

    def dequantize(self, codes):
        C = np.asarray(codes)
        if C.shape[-1] != self.dim:
            raise DimensionMismatchError(f"code length {C.shape[-1]} != bank size {self.dim}")
        if not np.issubdtype(C.dtype, np.integer):
            raise ValidationError("codes must be integers")
        if C.size and (C.min() < 0 or C.max() >= 2**self.bits):
            raise ValidationError(f"codes must lie in [0, {2**self.bits})")
        if self.representation == "codeword":
            return C.astype(np.float64)
        out = np.empty(C.shape, dtype=np.float64)
        for j, q in enumerate(self.per_dim):
            out[..., j] = q.levels[C[..., j]]
        return out

    def quantize_dataset(self, ds: SpeakerDataset) -> QuantizedDataset:
        return QuantizedDataset(self.bits, {s: self.quantize(a) for s, a in ds.speakers.items()})

    def reconstruct_dataset(self, ds: SpeakerDataset) -> SpeakerDataset:
        """Quantize then map back to reals (levels or raw codewords)."""
        return ds.map(lambda a: self.dequantize(self.quantize(a)))

    def to_json(self):
        return json.dumps(
            {
                "bits": self.bits,
                "representation": self.representation,
                "per_dim": [q.to_dict() for q in self.per_dim],
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        bits = int(doc["bits"])
        qs = [ScalarQuantizer(bits, d["boundaries"], d["levels"]) for d in doc["per_dim"]]
        return cls(qs, doc.get("representation", "quantum_value"))


def train_bank(ds_or_matrix, bits, representation="quantum_value", tol=DEFAULT_TOL,
               max_iter=DEFAULT_MAX_ITER, workers=1):
    """Train one quantizer per column; output does not depend on ``workers``."""
    if isinstance(ds_or_matrix, SpeakerDataset):
        _, X = ds_or_matrix.stacked()
    else:
        X = np.asarray(ds_or_matrix, dtype=np.float64)
    cols = [X[:, j] for j in range(X.shape[1])]
    fit = lambda c: train_lloyd_max(c, bits, tol, max_iter)  # noqa: E731
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            qs = list(ex.map(fit, cols))
    else:
        qs = [fit(c) for c in cols]
    return QuantizerBank(qs, representation)
