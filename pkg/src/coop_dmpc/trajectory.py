"""Periodic trajectories and the shift / distance algebra used by the scheme."""
from __future__ import annotations

import numpy as np


class PeriodicTrajectory:
    """A T-step cyclic sequence of p-dimensional vectors.

    Indexing is total: ``traj[k]`` returns element ``k mod T`` for any integer k.
    Instances are immutable; the underlying array is read-only.
    """

    __slots__ = ("_data",)

    def __init__(self, data):
        arr = np.array(data, dtype=float)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"trajectory data must be a non-empty (T, p) array, got shape {arr.shape}")
        arr.setflags(write=False)
        self._data = arr

    @classmethod
    def constant(cls, value, period: int) -> "PeriodicTrajectory":
        value = np.asarray(value, dtype=float).ravel()
        return cls(np.tile(value, (period, 1)))

    @classmethod
    def from_flat(cls, flat, period: int, dim: int) -> "PeriodicTrajectory":
        flat = np.asarray(flat, dtype=float)
        if flat.size != period * dim:
            raise ValueError(f"flat data of size {flat.size} does not match (T={period}, p={dim})")
        return cls(flat.reshape(period, dim))

    @property
    def period(self) -> int:
        return self._data.shape[0]

    @property
    def dim(self) -> int:
        return self._data.shape[1]

    @property
    def data(self) -> np.ndarray:
        return self._data

    def __len__(self) -> int:
        return self.period

    def __getitem__(self, k: int) -> np.ndarray:
        return self._data[int(k) % self.period]

    def flat(self) -> np.ndarray:
        """Row-major vec(y): step 0 first."""
        return self._data.ravel().copy()

    def to_dict(self) -> dict:
        return {"T": self.period, "p": self.dim, "data": self._data.ravel().tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PeriodicTrajectory":
        return cls.from_flat(d["data"], d["T"], d["p"])

    def __eq__(self, other) -> bool:
        if not isinstance(other, PeriodicTrajectory):
            return NotImplemented
        return self._data.shape == other._data.shape and bool(np.array_equal(self._data, other._data))

    def __hash__(self):
        return hash((self._data.shape, self._data.tobytes()))

    def __repr__(self) -> str:
        return f"PeriodicTrajectory(T={self.period}, p={self.dim})"


def _check_compatible(y: PeriodicTrajectory, y_hat: PeriodicTrajectory) -> None:
    if y.period != y_hat.period or y.dim != y_hat.dim:
        raise ValueError(
            f"trajectory mismatch: (T={y.period}, p={y.dim}) vs (T={y_hat.period}, p={y_hat.dim})"
        )


def shift(traj: PeriodicTrajectory, steps: int = 1) -> PeriodicTrajectory:
    """Rotate by ``steps``: result[k] = traj[k + steps]."""
    return PeriodicTrajectory(np.roll(traj.data, -steps, axis=0))


def shifted_distance(y: PeriodicTrajectory, y_hat: PeriodicTrajectory) -> float:
    """Sum over k of ||y[k] - y_hat[k+1]||^2."""
    _check_compatible(y, y_hat)
    diff = y.data - np.roll(y_hat.data, -1, axis=0)
    return float(np.sum(diff * diff))


def norm_T(y: PeriodicTrajectory, y_hat: PeriodicTrajectory) -> float:
    """Sum over k of the (unsquared) Euclidean distance ||y[k] - y_hat[k]||."""
    _check_compatible(y, y_hat)
    return float(np.sum(np.linalg.norm(y.data - y_hat.data, axis=1)))
