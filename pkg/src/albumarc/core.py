"""Shared domain types and the small numeric utilities everything else builds on."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Per-track feature layout: one row per audio feature, one column per global
# statistic (mean, std, skew, kurtosis, median, min, max).
N_FEATURES = 75
N_STATS = 7
STAT_NAMES = ("mean", "std", "skew", "kurtosis", "median", "min", "max")

MIN_ALBUM_LEN = 3
MAX_ALBUM_LEN = 20


@dataclass(frozen=True)
class TrackFeatures:
    """Feature-statistics matrix for a single track.

    ``stats`` is a ``(75, 7)`` float matrix; rows are audio features, columns
    are the global statistics in :data:`STAT_NAMES` order.
    """

    track_id: str
    stats: np.ndarray

    def __post_init__(self):
        stats = np.asarray(self.stats, dtype=np.float64)
        if stats.shape != (N_FEATURES, N_STATS):
            raise ValueError(
                f"track {self.track_id!r}: stats must be {N_FEATURES}x{N_STATS}, "
                f"got {stats.shape}"
            )
        if not np.all(np.isfinite(stats)):
            raise ValueError(f"track {self.track_id!r}: non-finite feature value")
        stats.flags.writeable = False
        object.__setattr__(self, "stats", stats)

    @property
    def flat(self) -> np.ndarray:
        """The stats matrix flattened row-major to a 525-vector."""
        return self.stats.reshape(-1)


@dataclass(frozen=True)
class Album:
    """An ordered collection of tracks; list order is the ground-truth order."""

    album_id: str
    tracks: tuple[TrackFeatures, ...]

    def __post_init__(self):
        tracks = tuple(self.tracks)
        ids = [t.track_id for t in tracks]
        if len(set(ids)) != len(ids):
            raise ValueError(f"album {self.album_id!r}: duplicate track ids")
        object.__setattr__(self, "tracks", tracks)

    def __len__(self) -> int:
        return len(self.tracks)

    @property
    def track_ids(self) -> tuple[str, ...]:
        return tuple(t.track_id for t in self.tracks)


@dataclass(frozen=True)
class EssenceSeries:
    """Per-track essence values of one album, in a stated order.

    ``values`` has shape ``(n,)`` for scalar essence or ``(n, d)`` for vector
    essence.  ``normalization`` records which convention produced the values:
    ``"raw"``, ``"zscore"`` or ``"minmax"``.
    """

    album_id: str
    values: np.ndarray
    normalization: str = "raw"

    def __post_init__(self):
        if self.normalization not in ("raw", "zscore", "minmax"):
            raise ValueError(f"unknown normalization tag {self.normalization!r}")
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim not in (1, 2) or values.shape[0] == 0:
            raise ValueError("values must be a non-empty 1-D or 2-D array")
        if not np.all(np.isfinite(values)):
            raise ValueError(f"album {self.album_id!r}: non-finite essence value")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return 1 if self.values.ndim == 1 else self.values.shape[1]

    def scalars(self) -> np.ndarray:
        """The values as a 1-D array; requires scalar (d=1) essence."""
        if self.values.ndim == 1:
            return self.values
        if self.values.shape[1] == 1:
            return self.values[:, 0]
        raise ValueError(
            f"album {self.album_id!r}: essence is {self.values.shape[1]}-dimensional, "
            "expected a scalar series"
        )

    def minmax(self) -> "EssenceSeries":
        """This series min-max normalized (scalar series only)."""
        if self.normalization == "minmax":
            return self
        return EssenceSeries(
            self.album_id, normalize_minmax(self.scalars()), normalization="minmax"
        )


@dataclass(frozen=True)
class Ordering:
    """A permutation: ``positions[j]`` is the (0-based) source index placed at
    position ``j``."""

    positions: tuple[int, ...]

    def __post_init__(self):
        positions = tuple(int(i) for i in self.positions)
        n = len(positions)
        if sorted(positions) != list(range(n)):
            raise ValueError(f"not a permutation of 0..{n - 1}: {positions}")
        object.__setattr__(self, "positions", positions)

    def __len__(self) -> int:
        return len(self.positions)

    @classmethod
    def identity(cls, n: int) -> "Ordering":
        return cls(tuple(range(n)))

    def apply(self, items):
        """Reorder ``items`` so that position j holds ``items[positions[j]]``."""
        return [items[i] for i in self.positions]


def normalize_minmax(values) -> np.ndarray:
    """Affinely map ``values`` onto [0, 1]; a constant series maps to all 0.5."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("cannot normalize an empty series")
    if not np.all(np.isfinite(v)):
        raise ValueError("cannot normalize non-finite values")
    lo = v.min()
    hi = v.max()
    if hi == lo:
        return np.full_like(v, 0.5)
    return (v - lo) / (hi - lo)


def normalize_zscore(values) -> np.ndarray:
    """Shift/scale ``values`` to mean 0 and population std 1.

    A constant series maps to all zeros.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("cannot normalize an empty series")
    if not np.all(np.isfinite(v)):
        raise ValueError("cannot normalize non-finite values")
    std = v.std()  # population std (ddof=0)
    if std == 0.0:
        return np.zeros_like(v)
    return (v - v.mean()) / std


def relative_positions(n: int) -> np.ndarray:
    """The uniform grid ``[0, 1/(n-1), ..., 1]`` of n relative positions."""
    if n < 2:
        raise ValueError(f"need at least 2 positions, got {n}")
    return np.linspace(0.0, 1.0, n)
