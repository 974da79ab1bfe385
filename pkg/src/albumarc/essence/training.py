"""Contrastive training loop, Adam optimizer, and fixed-feature probes.

Training is single-threaded and deterministic per seed: all randomness
(initialization, batch order, negative permutations, dropout) flows from one
SeedSequence.  Validation uses contrastive sets whose permutations are fixed
once before the first epoch, so the early-stopping signal is not inflated by
per-epoch resampling luck.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import Album
from ..errors import TrainingDiverged
from . import autodiff as ad
from .model import (
    EssenceModel,
    ScorerArch,
    flatten_params,
    init_params,
    score_sequences_np,
    unflatten_params,
)
from .objective import (
    album_loss_graph,
    contrastive_permutations,
    info_nce_loss,
    mi_lower_bound,
    scorer_loss_graph,
    zscore_columns,
)


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings.  Weight decay applies to scorer weight matrices
    only; dropout applies to the extractor hidden layer only."""

    batch_size: int = 16
    n_sequences: int = 32
    learning_rate: float = 1e-4
    dropout: float = 0.1
    weight_decay_scorer: float = 1e-5
    max_epochs: int = 200
    patience: int = 20
    seed: int = 0
    essence_dim: int = 1
    extractor_hidden: int = 128
    scorer_hidden: int = 32
    val_sets_per_album: int = 4

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.n_sequences < 2:
            raise ValueError("n_sequences must be at least 2")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be positive")
        if self.patience < 1:
            raise ValueError("patience must be positive")
        if self.essence_dim < 1:
            raise ValueError("essence_dim must be positive")
        if self.val_sets_per_album < 1:
            raise ValueError("val_sets_per_album must be positive")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    val_mi_bits: float


class Adam:
    """Standard Adam over a flat parameter vector."""

    def __init__(self, size: int, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def input_stats(albums) -> tuple[np.ndarray, np.ndarray]:
    """Per-input mean and std over all tracks, with a floor for dead inputs."""
    flat = np.stack([t.flat for a in albums for t in a.tracks])
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    std[std < 1e-8] = 1.0
    return mean, std


def _usable(albums) -> list[Album]:
    return [a for a in albums if len(a) >= 3]


def _fixed_validation_sets(
    albums, n_sequences: int, sets_per_album: int, rng: np.random.Generator
) -> list[tuple[np.ndarray, np.ndarray]]:
    sets = []
    for album in albums:
        flat = np.stack([t.flat for t in album.tracks])
        for _ in range(sets_per_album):
            perms = contrastive_permutations(len(album), n_sequences, rng)
            sets.append((flat, perms))
    return sets


def _validation_loss(model: EssenceModel, val_sets) -> float:
    losses = []
    for flat, perms in val_sets:
        normalized = zscore_columns(model.extract_matrix(flat))
        scores = score_sequences_np(normalized[perms], model.scorer_params)
        losses.append(info_nce_loss(scores, 0))
    return float(np.mean(losses))


def _grad_vector(tensors: dict[str, ad.Tensor], shapes) -> np.ndarray:
    parts = []
    for name, shape in shapes:
        grad = tensors[name].grad
        parts.append(np.zeros(shape).reshape(-1) if grad is None else grad.reshape(-1))
    return np.concatenate(parts)


def _decay_mask(shapes) -> np.ndarray:
    # Decay weight matrices only, not biases or tokens.
    parts = [
        np.full(int(np.prod(shape)), 1.0 if name.startswith("w") else 0.0)
        for name, shape in shapes
    ]
    return np.concatenate(parts)


def train(dataset, config: TrainConfig) -> tuple[EssenceModel, list[EpochStats]]:
    """Jointly train extractor and scorer; returns the best-validation model.

    Raises TrainingDiverged if the loss goes non-finite.
    """
    train_albums = _usable(dataset.subset("train").albums)
    val_albums = _usable(dataset.subset("validation").albums)
    if not train_albums:
        raise ValueError("train split has no usable albums")
    if not val_albums:
        raise ValueError("validation split has no usable albums")

    seeds = np.random.SeedSequence(config.seed).spawn(3)
    init_rng = np.random.default_rng(seeds[0])
    batch_rng = np.random.default_rng(seeds[1])
    val_rng = np.random.default_rng(seeds[2])

    model = EssenceModel.initialize(
        init_rng,
        essence_dim=config.essence_dim,
        extractor_hidden=config.extractor_hidden,
        scorer_hidden=config.scorer_hidden,
        dropout=config.dropout,
    )
    model.input_mean, model.input_std = input_stats(train_albums)

    ext_shapes = model.extractor_arch.param_shapes()
    sco_shapes = model.scorer_arch.param_shapes()
    flat_ext = flatten_params(model.extractor_params, ext_shapes)
    flat_sco = flatten_params(model.scorer_params, sco_shapes)
    adam_ext = Adam(flat_ext.size, config.learning_rate)
    adam_sco = Adam(flat_sco.size, config.learning_rate)
    sco_decay = _decay_mask(sco_shapes)

    x_std = [model.standardize(np.stack([t.flat for t in a.tracks])) for a in train_albums]
    val_sets = _fixed_validation_sets(
        val_albums, config.n_sequences, config.val_sets_per_album, val_rng
    )

    history: list[EpochStats] = []
    best_loss = np.inf
    best_model = model.copy()
    stale = 0
    hidden = config.extractor_hidden
    for epoch in range(config.max_epochs):
        order = batch_rng.permutation(len(train_albums))
        epoch_losses = []
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            g_ext = np.zeros_like(flat_ext)
            g_sco = np.zeros_like(flat_sco)
            for i in batch:
                length = x_std[i].shape[0]
                perms = contrastive_permutations(length, config.n_sequences, batch_rng)
                mask = None
                if config.dropout > 0.0:
                    keep = batch_rng.random((length, hidden)) >= config.dropout
                    mask = keep / (1.0 - config.dropout)
                ext_t = {k: ad.Tensor(v) for k, v in model.extractor_params.items()}
                sco_t = {k: ad.Tensor(v) for k, v in model.scorer_params.items()}
                loss = album_loss_graph(model, x_std[i], perms, ext_t, sco_t, mask)
                if not np.isfinite(loss.data):
                    raise TrainingDiverged(
                        f"non-finite training loss at epoch {epoch}, album {train_albums[i].album_id!r}"
                    )
                ad.backward(loss)
                g_ext += _grad_vector(ext_t, ext_shapes)
                g_sco += _grad_vector(sco_t, sco_shapes)
                epoch_losses.append(float(loss.data))
            g_ext /= len(batch)
            g_sco /= len(batch)
            g_sco += config.weight_decay_scorer * sco_decay * flat_sco
            flat_ext = adam_ext.step(flat_ext, g_ext)
            flat_sco = adam_sco.step(flat_sco, g_sco)
            model.extractor_params = unflatten_params(flat_ext, ext_shapes)
            model.scorer_params = unflatten_params(flat_sco, sco_shapes)

        val_loss = _validation_loss(model, val_sets)
        if not np.isfinite(val_loss):
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}")
        history.append(
            EpochStats(
                epoch=epoch,
                train_loss=float(np.mean(epoch_losses)),
                val_loss=val_loss,
                val_mi_bits=mi_lower_bound(val_loss, config.n_sequences),
            )
        )
        if val_loss < best_loss:
            best_loss = val_loss
            best_model = model.copy()
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    return best_model, history


def validation_mi(model: EssenceModel, history: list[EpochStats]) -> float:
    """MI bound in bits at the early-stopping epoch."""
    if not history:
        raise ValueError("empty history")
    return max(h.val_mi_bits for h in history)


def mi_on_albums(
    model: EssenceModel,
    albums,
    n_sequences: int,
    rng: np.random.Generator,
    sets_per_album: int = 4,
) -> float:
    """MI bound in bits for a model on held-out albums (freshly sampled sets)."""
    usable = _usable(albums)
    if not usable:
        raise ValueError("no usable albums")
    sets = _fixed_validation_sets(usable, n_sequences, sets_per_album, rng)
    return mi_lower_bound(_validation_loss(model, sets), n_sequences)


def _normalized_album_values(albums, feature_values) -> list[np.ndarray]:
    per_album = []
    for album in albums:
        try:
            vals = np.array([feature_values[t.track_id] for t in album.tracks], dtype=np.float64)
        except KeyError as exc:
            raise ValueError(
                f"missing feature value for track {exc.args[0]!r} in album {album.album_id!r}"
            ) from None
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"non-finite feature value in album {album.album_id!r}")
        per_album.append(zscore_columns(vals[:, None]))
    return per_album


def probe_feature_mi(dataset, feature_values: dict, config: TrainConfig) -> float:
    """Validation MI bound (bits) of a fixed per-track scalar feature.

    Trains only the scorer on z-scored sequences of the given values; the
    extractor is not involved.  Raises on albums with missing values.
    """
    train_albums = _usable(dataset.subset("train").albums)
    val_albums = _usable(dataset.subset("validation").albums)
    if not train_albums:
        raise ValueError("train split has no usable albums")
    if not val_albums:
        raise ValueError("validation split has no usable albums")
    train_vals = _normalized_album_values(train_albums, feature_values)
    val_vals = _normalized_album_values(val_albums, feature_values)

    seeds = np.random.SeedSequence(config.seed).spawn(3)
    init_rng = np.random.default_rng(seeds[0])
    batch_rng = np.random.default_rng(seeds[1])
    val_rng = np.random.default_rng(seeds[2])

    arch = ScorerArch(essence_dim=1, hidden=config.scorer_hidden)
    shapes = arch.param_shapes()
    params = init_params(shapes, init_rng, out_scale=0.01)
    flat = flatten_params(params, shapes)
    adam = Adam(flat.size, config.learning_rate)
    decay = _decay_mask(shapes)

    val_sets = []
    for vals in val_vals:
        for _ in range(config.val_sets_per_album):
            perms = contrastive_permutations(vals.shape[0], config.n_sequences, val_rng)
            val_sets.append((vals, perms))

    def val_loss_now() -> float:
        losses = [
            info_nce_loss(score_sequences_np(vals[perms], params), 0)
            for vals, perms in val_sets
        ]
        return float(np.mean(losses))

    best_loss = np.inf
    stale = 0
    for epoch in range(config.max_epochs):
        order = batch_rng.permutation(len(train_vals))
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            g = np.zeros_like(flat)
            for i in batch:
                vals = train_vals[i]
                perms = contrastive_permutations(vals.shape[0], config.n_sequences, batch_rng)
                sco_t = {k: ad.Tensor(v) for k, v in params.items()}
                loss = scorer_loss_graph(vals, perms, sco_t)
                if not np.isfinite(loss.data):
                    raise TrainingDiverged(f"non-finite probe loss at epoch {epoch}")
                ad.backward(loss)
                g += _grad_vector(sco_t, shapes)
            g /= len(batch)
            g += config.weight_decay_scorer * decay * flat
            flat = adam.step(flat, g)
            params = unflatten_params(flat, shapes)
        loss = val_loss_now()
        if not np.isfinite(loss):
            raise TrainingDiverged(f"non-finite probe validation loss at epoch {epoch}")
        if loss < best_loss:
            best_loss = loss
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    return mi_lower_bound(best_loss, config.n_sequences)
