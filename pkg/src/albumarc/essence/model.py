"""Trainable essence extractor and sequence scorer.

The extractor is a two-layer feed-forward net over the flattened per-track
feature matrix with a sigmoid output, so each essence entry lies in (0, 1).
The scorer sums a small pairwise-comparison net over adjacent elements of the
(normalized) essence sequence, bracketed by learnable start and end tokens,
and has no output nonlinearity.  Architectures are descriptor-driven so
alternative extractors or scorers can be slotted in behind the same surface.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import N_FEATURES, N_STATS, TrackFeatures
from . import autodiff as ad


@dataclass(frozen=True)
class ExtractorArch:
    """Feed-forward extractor layout: in -> hidden (tanh) -> out (sigmoid)."""

    in_dim: int = N_FEATURES * N_STATS
    hidden: int = 128
    out_dim: int = 1
    dropout: float = 0.1

    def param_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        return [
            ("w1", (self.in_dim, self.hidden)),
            ("b1", (self.hidden,)),
            ("w2", (self.hidden, self.out_dim)),
            ("b2", (self.out_dim,)),
        ]


@dataclass(frozen=True)
class ScorerArch:
    """Pairwise-comparison scorer over adjacent sequence elements.

    Learnable start/end tokens bracket the sequence; each adjacent pair is
    scored by a small tanh MLP and the pair scores are summed.
    """

    essence_dim: int = 1
    hidden: int = 32

    def param_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        d = self.essence_dim
        return [
            ("start_token", (d,)),
            ("end_token", (d,)),
            ("w1", (2 * d, self.hidden)),
            ("b1", (self.hidden,)),
            ("w2", (self.hidden, 1)),
            ("b2", (1,)),
        ]


def init_params(
    shapes: list[tuple[str, tuple[int, ...]]],
    rng: np.random.Generator,
    out_scale: float | None = None,
) -> dict[str, np.ndarray]:
    """Fan-in scaled Gaussian init.  When ``out_scale`` is given, the final
    linear layer uses it instead, so freshly initialized outputs start near
    zero (used for the scorer, keeping initial scores flat)."""
    params: dict[str, np.ndarray] = {}
    last_weight = [n for n, _ in shapes if n.startswith("w")][-1]
    for name, shape in shapes:
        if name.startswith("b"):
            params[name] = np.zeros(shape)
        elif name.endswith("_token"):
            params[name] = 0.1 * rng.standard_normal(shape)
        elif name == last_weight and out_scale is not None:
            params[name] = out_scale * rng.standard_normal(shape)
        else:
            fan_in = shape[0]
            params[name] = rng.standard_normal(shape) / np.sqrt(fan_in)
    return params


def flatten_params(
    params: dict[str, np.ndarray], shapes: list[tuple[str, tuple[int, ...]]]
) -> np.ndarray:
    return np.concatenate([params[name].reshape(-1) for name, _ in shapes])


def unflatten_params(
    flat: np.ndarray, shapes: list[tuple[str, tuple[int, ...]]]
) -> dict[str, np.ndarray]:
    flat = np.asarray(flat, dtype=np.float64)
    params: dict[str, np.ndarray] = {}
    offset = 0
    for name, shape in shapes:
        size = int(np.prod(shape))
        params[name] = flat[offset : offset + size].reshape(shape).copy()
        offset += size
    if offset != flat.size:
        raise ValueError(f"parameter vector length {flat.size} != expected {offset}")
    return params


def score_sequences_np(sequences: np.ndarray, params: dict[str, np.ndarray]) -> np.ndarray:
    """Scores (n_seq,) for a batch of sequences (n_seq, length, d), numpy path."""
    seq = np.asarray(sequences, dtype=np.float64)
    n_seq, length, d = seq.shape
    start = np.broadcast_to(params["start_token"], (n_seq, 1, d))
    end = np.broadcast_to(params["end_token"], (n_seq, 1, d))
    ext = np.concatenate([start, seq, end], axis=1)
    pairs = np.concatenate([ext[:, :-1, :], ext[:, 1:, :]], axis=2)
    h = np.tanh(pairs @ params["w1"] + params["b1"])
    return (h @ params["w2"] + params["b2"]).sum(axis=(1, 2))


def score_sequences_graph(sequences: ad.Tensor, params: dict[str, ad.Tensor]) -> ad.Tensor:
    """Scores (n_seq,) for a batch of sequences (n_seq, length, d), graph path."""
    n_seq, length, d = sequences.data.shape
    start = ad.broadcast_to(ad.reshape(params["start_token"], (1, 1, d)), (n_seq, 1, d))
    end = ad.broadcast_to(ad.reshape(params["end_token"], (1, 1, d)), (n_seq, 1, d))
    ext = ad.concat([start, sequences, end], axis=1)
    left = ad.narrow(ext, 1, 0, length + 1)
    right = ad.narrow(ext, 1, 1, length + 1)
    pairs = ad.reshape(ad.concat([left, right], axis=2), (n_seq * (length + 1), 2 * d))
    h = ad.tanh(ad.add(ad.matmul(pairs, params["w1"]), params["b1"]))
    out = ad.add(ad.matmul(h, params["w2"]), params["b2"])
    return ad.tsum(ad.reshape(out, (n_seq, length + 1)), axis=1)


@dataclass
class EssenceModel:
    """Extractor/scorer parameter bundle plus input standardization."""

    extractor_arch: ExtractorArch
    scorer_arch: ScorerArch
    extractor_params: dict[str, np.ndarray]
    scorer_params: dict[str, np.ndarray]
    input_mean: np.ndarray = field(default=None)
    input_std: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.input_mean is None:
            self.input_mean = np.zeros(self.extractor_arch.in_dim)
        if self.input_std is None:
            self.input_std = np.ones(self.extractor_arch.in_dim)

    @property
    def essence_dim(self) -> int:
        return self.extractor_arch.out_dim

    @classmethod
    def initialize(
        cls,
        rng: np.random.Generator,
        essence_dim: int = 1,
        extractor_hidden: int = 128,
        scorer_hidden: int = 32,
        in_dim: int = N_FEATURES * N_STATS,
        dropout: float = 0.1,
    ) -> "EssenceModel":
        ext = ExtractorArch(in_dim=in_dim, hidden=extractor_hidden, out_dim=essence_dim, dropout=dropout)
        sco = ScorerArch(essence_dim=essence_dim, hidden=scorer_hidden)
        return cls(
            extractor_arch=ext,
            scorer_arch=sco,
            extractor_params=init_params(ext.param_shapes(), rng),
            scorer_params=init_params(sco.param_shapes(), rng, out_scale=0.01),
        )

    # ---------------------------------------------------------------- numpy paths

    def standardize(self, flat_features: np.ndarray) -> np.ndarray:
        return (flat_features - self.input_mean) / self.input_std

    def extract_matrix(self, flat_features: np.ndarray) -> np.ndarray:
        """Essence for a stack of flattened track features, shape (n, in_dim)."""
        x = np.atleast_2d(np.asarray(flat_features, dtype=np.float64))
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite track features")
        p = self.extractor_params
        h = np.tanh(self.standardize(x) @ p["w1"] + p["b1"])
        logits = h @ p["w2"] + p["b2"]
        return 1.0 / (1.0 + np.exp(-logits))

    def extract(self, track: TrackFeatures) -> np.ndarray:
        """Essence vector for one track; deterministic, entries in (0, 1)."""
        return self.extract_matrix(track.flat[None, :])[0]

    def score_sequence(self, sequence: np.ndarray) -> float:
        """Scalar score of an essence sequence (n, d); start/end tokens are
        added internally.  Unbounded output."""
        seq = np.asarray(sequence, dtype=np.float64)
        if seq.ndim == 1:
            seq = seq[:, None]
        if seq.shape[0] == 0:
            raise ValueError("cannot score an empty sequence")
        if not np.all(np.isfinite(seq)):
            raise ValueError("non-finite sequence values")
        return float(score_sequences_np(seq[None, :, :], self.scorer_params)[0])

    # ------------------------------------------------------------ autodiff paths

    def extractor_graph(
        self,
        x_std: np.ndarray,
        params: dict[str, ad.Tensor],
        dropout_mask: np.ndarray | None = None,
    ) -> ad.Tensor:
        """Essence tensor (n, d) from standardized inputs; ``dropout_mask`` is
        a pre-scaled keep mask applied to the hidden layer during training."""
        h = ad.tanh(ad.add(ad.matmul(ad.Tensor(x_std), params["w1"]), params["b1"]))
        if dropout_mask is not None:
            h = ad.mul(h, dropout_mask)
        return ad.sigmoid(ad.add(ad.matmul(h, params["w2"]), params["b2"]))

    def scorer_graph(self, sequences: ad.Tensor, params: dict[str, ad.Tensor]) -> ad.Tensor:
        """Scores (n_seq,) for a batch of sequences (n_seq, length, d)."""
        return score_sequences_graph(sequences, params)

    # ---------------------------------------------------------------- persistence

    def copy(self) -> "EssenceModel":
        return EssenceModel(
            extractor_arch=self.extractor_arch,
            scorer_arch=self.scorer_arch,
            extractor_params={k: v.copy() for k, v in self.extractor_params.items()},
            scorer_params={k: v.copy() for k, v in self.scorer_params.items()},
            input_mean=self.input_mean.copy(),
            input_std=self.input_std.copy(),
        )

    def to_dict(self) -> dict:
        ext, sco = self.extractor_arch, self.scorer_arch
        return {
            "extractor_arch": {
                "in_dim": ext.in_dim,
                "hidden": ext.hidden,
                "out_dim": ext.out_dim,
                "dropout": ext.dropout,
                "hidden_activation": "tanh",
                "output_activation": "sigmoid",
            },
            "scorer_arch": {
                "essence_dim": sco.essence_dim,
                "hidden": sco.hidden,
                "hidden_activation": "tanh",
                "output_activation": "none",
            },
            "extractor_params": flatten_params(self.extractor_params, ext.param_shapes()).tolist(),
            "scorer_params": flatten_params(self.scorer_params, sco.param_shapes()).tolist(),
            "input_mean": self.input_mean.tolist(),
            "input_std": self.input_std.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EssenceModel":
        ea = doc["extractor_arch"]
        sa = doc["scorer_arch"]
        ext = ExtractorArch(
            in_dim=int(ea["in_dim"]),
            hidden=int(ea["hidden"]),
            out_dim=int(ea["out_dim"]),
            dropout=float(ea["dropout"]),
        )
        sco = ScorerArch(essence_dim=int(sa["essence_dim"]), hidden=int(sa["hidden"]))
        return cls(
            extractor_arch=ext,
            scorer_arch=sco,
            extractor_params=unflatten_params(np.array(doc["extractor_params"]), ext.param_shapes()),
            scorer_params=unflatten_params(np.array(doc["scorer_params"]), sco.param_shapes()),
            input_mean=np.array(doc["input_mean"], dtype=np.float64),
            input_std=np.array(doc["input_std"], dtype=np.float64),
        )
