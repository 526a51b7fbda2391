"""Connectivity filtering, F-statistic feature selection, and grid coarsening.

Feature vectors are plain float arrays in subregion-major order: subregion
j*m+i first, then combination index in the filter bank's row order.  The hard
filter marks combinations whose members are all present; the soft filter is
its sigmoid relaxation for real-valued (coarsened) member arrays.
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass

import numpy as np

from . import lattice
from .lattice import UnitTopology


@dataclass(frozen=True)
class FilterBank:
    """All 8-bit masks with exactly n_m ones, in lexicographic tuple order."""

    n_m: int
    combinations: np.ndarray  # (C(8, n_m), 8) float

    @property
    def n_combinations(self) -> int:
        return len(self.combinations)


@functools.lru_cache(maxsize=None)
def filter_bank(n_m: int) -> FilterBank:
    if not 2 <= n_m < 8:
        raise ValueError("combination size n_m must be in 2..7")
    masks = []
    for combo in itertools.combinations(range(8), n_m):
        row = np.zeros(8)
        row[list(combo)] = 1.0
        masks.append(row)
    rows = np.asarray(masks)
    rows.flags.writeable = False
    return FilterBank(n_m, rows)


def feature_count(m: int, n_m: int) -> int:
    return m * m * filter_bank(n_m).n_combinations


def subregion_matrix(x: UnitTopology) -> np.ndarray:
    """(m**2, 8) binary matrix; row j*m+i holds the bits of the 8 members
    incident to node (i, j) in canonical order."""
    return x.bits[lattice.incidence_table(x.m)].astype(np.float64)


def gather_subregions(flat: np.ndarray, m: int) -> np.ndarray:
    """Subregion assembly of a real channel-major member array (last axis 4*m*m)."""
    table = lattice.incidence_table(m)
    return flat[..., table]


def hard_filter(x0: np.ndarray, bank: FilterBank) -> np.ndarray:
    """floor(X0 C^T / n_m), flattened subregion-major; 1 iff a combination's
    members are all present.  Input must be binary."""
    x0 = np.asarray(x0, dtype=np.float64)
    if not np.all((x0 == 0.0) | (x0 == 1.0)):
        raise ValueError("hard filter requires binary input")
    out = np.floor(x0 @ bank.combinations.T / bank.n_m)
    return out.reshape(*out.shape[:-2], -1)


def sigmoid_gate(s: np.ndarray, n_m: int) -> np.ndarray:
    """1 / (1 + exp(-10 (s - 0.75 n_m))), the soft presence indicator."""
    return 1.0 / (1.0 + np.exp(-10.0 * (s - 0.75 * n_m)))


def soft_filter(x0: np.ndarray, bank: FilterBank) -> np.ndarray:
    """Sigmoid-relaxed filter for real-valued subregion matrices."""
    x0 = np.asarray(x0, dtype=np.float64)
    out = sigmoid_gate(x0 @ bank.combinations.T, bank.n_m)
    return out.reshape(*out.shape[:-2], -1)


def coarsen(a: np.ndarray, w: float) -> np.ndarray:
    """Channel-preserving 2x2 stride-2 convolution with a single shared weight.

    out[..., j, i] = w * sum of the 2x2 block at (2j, 2i).  The pairwise sum
    keeps coarsen(refine(x)) exact at w = 0.25 for binary x.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim < 2 or a.shape[-1] % 2 or a.shape[-2] % 2:
        raise ValueError(f"expected even spatial dims, got shape {a.shape}")
    return w * (
        (a[..., 0::2, 0::2] + a[..., 0::2, 1::2]) + (a[..., 1::2, 0::2] + a[..., 1::2, 1::2])
    )


@dataclass(frozen=True)
class SelectionResult:
    scores: np.ndarray
    selected: np.ndarray  # k indices, descending score, ties by ascending index
    n: int
    k_total: int


def f_scores(feats: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per-feature F-statistic r^2/(1-r^2) * (n-k-1)/k against the targets.

    r is the Pearson correlation; zero-variance features score 0; r^2 is
    clamped below 1 to keep the statistic finite.
    """
    feats = np.asarray(feats, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    n, k = feats.shape
    if n < 3:
        raise ValueError("need at least 3 samples")
    xc = feats - feats.mean(axis=0)
    yc = targets - targets.mean()
    sx = np.sqrt((xc**2).sum(axis=0))
    sy = np.sqrt((yc**2).sum())
    if sy == 0.0:
        return np.zeros(k)
    denom = np.where(sx > 0.0, sx * sy, 1.0)
    r = (xc.T @ yc) / denom
    r2 = np.minimum(r**2, 1.0 - 1e-12)
    scores = r2 / (1.0 - r2) * (n - k - 1) / k
    scores[sx == 0.0] = 0.0
    return scores


def select_top_k(scores: np.ndarray, k: int) -> SelectionResult:
    """Indices of the k largest scores, deterministic with index tie-break."""
    scores = np.asarray(scores, dtype=np.float64)
    total = len(scores)
    if not 1 <= k <= total:
        raise ValueError(f"k must be in 1..{total}")
    order = np.lexsort((np.arange(total), -scores))
    return SelectionResult(scores=scores, selected=order[:k], n=0, k_total=total)


@dataclass(frozen=True)
class FeaturePipeline:
    """Feature construction settings: None n_m feeds raw member bits."""

    n_m: int | None = 2
    top_k: int | None = None
    conv_weight: float = 0.25


def training_matrix(bits: np.ndarray, m: int, n_m: int | None) -> np.ndarray:
    """(n, k_total) feature matrix for binary sample rows (hard-filter path)."""
    bits = np.asarray(bits, dtype=np.float64)
    if n_m is None:
        return bits
    bank = filter_bank(n_m)
    x0 = gather_subregions(bits, m)
    sums = x0 @ bank.combinations.T
    return (sums == bank.n_m).astype(np.float64).reshape(len(bits), -1)


def transfer_matrix(bits: np.ndarray, data_m: int, model_m: int, n_m: int, w: float) -> np.ndarray:
    """(n, k_total) soft-filtered features of fine-grid rows coarsened to model_m."""
    if data_m != 2 * model_m:
        raise ValueError("transfer path requires data at twice the model resolution")
    bits = np.asarray(bits, dtype=np.float64)
    chans = bits.reshape(len(bits), 4, data_m, data_m)
    coarse = coarsen(chans, w).reshape(len(bits), -1)
    x0 = gather_subregions(coarse, model_m)
    return soft_filter(x0, filter_bank(n_m)).reshape(len(bits), -1)


def features_for_prediction(x: UnitTopology, meta) -> np.ndarray:
    """Selected feature vector for a topology at the model grid or its double.

    Coarse inputs take the hard-filter path; fine (2m) inputs are coarsened by
    the channel convolution and soft-filtered.  `meta` carries m, n_m,
    conv_weight, and selected_indices.
    """
    if x.m == meta.m:
        if meta.n_m is None:
            vec = x.bits.astype(np.float64)
        else:
            vec = hard_filter(subregion_matrix(x), filter_bank(meta.n_m))
    elif x.m == 2 * meta.m:
        if meta.n_m is None:
            raise ValueError("transfer prediction requires a filtered model")
        flat = coarsen(lattice.to_channel_array(x), meta.conv_weight).reshape(-1)
        vec = soft_filter(gather_subregions(flat, meta.m), filter_bank(meta.n_m))
    else:
        raise ValueError(f"topology m={x.m} incompatible with model m={meta.m}")
    return vec[meta.selected_indices]
