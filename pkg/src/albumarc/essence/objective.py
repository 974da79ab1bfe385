"""Contrastive objective, mutual-information bound, and feature probes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import Album
from . import autodiff as ad
from .model import EssenceModel, score_sequences_graph

LN2 = float(np.log(2.0))


@dataclass(frozen=True)
class ContrastiveSet:
    """N candidate sequences over one album; exactly one is in the true order.

    ``sequences`` has shape (N, length, d); every sequence is a permutation of
    the same multiset of essence vectors and all share one joint z-score
    normalization.
    """

    sequences: np.ndarray
    true_index: int

    def __post_init__(self):
        seq = np.asarray(self.sequences, dtype=np.float64)
        if seq.ndim != 3:
            raise ValueError("sequences must have shape (N, length, d)")
        if not 0 <= self.true_index < seq.shape[0]:
            raise ValueError("true_index out of range")
        object.__setattr__(self, "sequences", seq)

    @property
    def n_sequences(self) -> int:
        return self.sequences.shape[0]


def info_nce_loss(scores, true_index: int) -> float:
    """Contrastive loss in nats: -log softmax(scores)[true_index].

    Computed with a max shift for numerical stability.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size < 2:
        raise ValueError("need at least 2 scores")
    if not np.all(np.isfinite(s)):
        raise ValueError("non-finite score")
    if not 0 <= true_index < s.size:
        raise ValueError("true_index out of range")
    shift = s.max()
    return float(np.log(np.exp(s - shift).sum()) - (s[true_index] - shift))


def mi_lower_bound(mean_loss_nats: float, n_sequences: int) -> float:
    """Mutual-information lower bound in bits: (ln N - loss) / ln 2."""
    if n_sequences < 2:
        raise ValueError("need at least 2 sequences")
    return (np.log(n_sequences) - mean_loss_nats) / LN2


def zscore_columns(values: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """Z-score each column over rows (population std, with a tiny floor)."""
    v = np.asarray(values, dtype=np.float64)
    mean = v.mean(axis=0, keepdims=True)
    std = np.sqrt(((v - mean) ** 2).mean(axis=0, keepdims=True) + eps)
    return (v - mean) / std


def sample_negative_permutations(
    length: int, count: int, rng: np.random.Generator
) -> np.ndarray:
    """``count`` random non-identity permutations of range(length), drawn with
    replacement; accidental identities are resampled."""
    if length < 2:
        raise ValueError("cannot permute a sequence of length < 2")
    perms = np.empty((count, length), dtype=np.intp)
    identity = np.arange(length)
    for i in range(count):
        perm = rng.permutation(length)
        while np.array_equal(perm, identity):
            perm = rng.permutation(length)
        perms[i] = perm
    return perms


def contrastive_permutations(
    length: int, n_sequences: int, rng: np.random.Generator
) -> np.ndarray:
    """Index matrix (N, length) whose row 0 is the identity (true order) and
    remaining rows are random non-identity permutations."""
    if n_sequences < 2:
        raise ValueError("need at least 2 sequences")
    perms = np.empty((n_sequences, length), dtype=np.intp)
    perms[0] = np.arange(length)
    perms[1:] = sample_negative_permutations(length, n_sequences - 1, rng)
    return perms


def sample_contrastive_set(
    album: Album, model: EssenceModel, n_sequences: int, rng: np.random.Generator
) -> ContrastiveSet:
    """Build a contrastive set for an album from the model's essence values."""
    if len(album) < 3:
        raise ValueError(f"album {album.album_id!r} too short for contrastive sampling")
    flat = np.stack([t.flat for t in album.tracks])
    essence = model.extract_matrix(flat)
    normalized = zscore_columns(essence)
    perms = contrastive_permutations(len(album), n_sequences, rng)
    return ContrastiveSet(sequences=normalized[perms], true_index=0)


def album_loss_graph(
    model: EssenceModel,
    x_std: np.ndarray,
    perms: np.ndarray,
    ext_params: dict[str, ad.Tensor],
    sco_params: dict[str, ad.Tensor],
    dropout_mask: np.ndarray | None = None,
) -> ad.Tensor:
    """Scalar contrastive-loss graph for one album.

    ``x_std`` is the standardized (length, in_dim) feature matrix and
    ``perms`` the (N, length) permutation-index matrix with the true order in
    row 0.
    """
    essence = model.extractor_graph(x_std, ext_params, dropout_mask)
    mean = ad.tmean(essence, axis=0, keepdims=True)
    centered = ad.sub(essence, mean)
    std = ad.sqrt(ad.add(ad.tmean(ad.square(centered), axis=0, keepdims=True), 1e-12))
    normalized = ad.div(centered, std)
    sequences = ad.gather_rows(normalized, perms)
    scores = model.scorer_graph(sequences, sco_params)
    true_score = ad.narrow(scores, 0, 0, 1)
    return ad.sub(ad.logsumexp(scores), ad.reshape(true_score, ()))


def scorer_loss_graph(
    values: np.ndarray,
    perms: np.ndarray,
    sco_params: dict[str, ad.Tensor],
) -> ad.Tensor:
    """Contrastive-loss graph with a fixed (already z-scored) value sequence;
    only the scorer parameters are in the graph."""
    sequences = ad.gather_rows(ad.Tensor(values), perms)
    scores = score_sequences_graph(sequences, sco_params)
    true_score = ad.narrow(scores, 0, 0, 1)
    return ad.sub(ad.logsumexp(scores), ad.reshape(true_score, ()))


def pearson(a, b) -> float:
    """Pearson correlation coefficient of two equal-length series."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("inputs must be equal-length 1-D series")
    if x.size < 2:
        raise ValueError("need at least 2 points")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise ValueError("correlation undefined for a constant series")
    xc = x - x.mean()
    yc = y - y.mean()
    r = float((xc @ yc) / np.sqrt((xc @ xc) * (yc @ yc)))
    return max(-1.0, min(1.0, r))
