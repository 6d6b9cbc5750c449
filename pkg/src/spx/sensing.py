"""Bucket-detector forward model, noise and acquisition-chain distortion."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np
from scipy import linalg

from spx.errors import InvalidArgument, InvalidNoiseModel
from spx.patterns import SensingOperator
from spx.rng import check_seed, generator

NoiseKind = Literal["none", "iid_gaussian", "diagonal", "ar1"]


@dataclass(frozen=True, eq=False)
class Scene:
    """Row-major flattened image with reflectance values in [0, 1]."""

    height: int
    width: int
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if values.size != self.height * self.width:
            raise InvalidArgument(
                f"scene has {values.size} values, expected {self.height * self.width}"
            )
        if not np.all(np.isfinite(values)):
            raise InvalidArgument("scene values must be finite")
        object.__setattr__(self, "values", values)

    @property
    def image(self) -> np.ndarray:
        return self.values.reshape(self.height, self.width)


@dataclass(frozen=True, eq=False)
class FrameBatch:
    """``N x T`` matrix whose columns are frames of one observation window."""

    height: int
    width: int
    frames: np.ndarray
    frame_period: float = 1.0

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim == 1:
            frames = frames[:, None]
        if frames.ndim != 2 or frames.shape[0] != self.height * self.width:
            raise InvalidArgument(f"frames shape {frames.shape} does not match the grid")
        if frames.shape[1] < 1:
            raise InvalidArgument("a frame batch needs T >= 1")
        if not np.all(np.isfinite(frames)):
            raise InvalidArgument("frame values must be finite")
        object.__setattr__(self, "frames", frames)

    @property
    def t(self) -> int:
        return self.frames.shape[1]

    @classmethod
    def from_scenes(cls, scenes: list[Scene], frame_period: float = 1.0) -> "FrameBatch":
        h, w = scenes[0].height, scenes[0].width
        return cls(h, w, np.column_stack([s.values for s in scenes]), frame_period)


@dataclass(frozen=True)
class NoiseModel:
    """Additive Gaussian noise on the effective measurements.

    ``sigma`` is the per-measurement standard deviation for ``iid_gaussian``
    and ``ar1`` (stationary variance ``sigma**2``, lag-k correlation
    ``phi_corr**k``); ``diag`` holds per-row variances for ``diagonal``.
    """

    kind: NoiseKind = "none"
    sigma: float = 0.0
    diag: Optional[tuple[float, ...]] = None
    phi_corr: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "iid_gaussian", "diagonal", "ar1"):
            raise InvalidNoiseModel(f"unknown noise kind {self.kind!r}")
        if self.sigma < 0:
            raise InvalidNoiseModel("sigma must be non-negative")
        if self.diag is not None:
            object.__setattr__(self, "diag", tuple(float(v) for v in self.diag))

    def covariance(self, m: int) -> np.ndarray:
        """Dense ``m x m`` covariance; raises if it is not positive definite."""
        if self.kind == "none":
            raise InvalidNoiseModel("noise kind 'none' has no covariance")
        if self.kind == "iid_gaussian":
            if self.sigma <= 0:
                raise InvalidNoiseModel("iid_gaussian needs sigma > 0")
            return self.sigma**2 * np.eye(m)
        if self.kind == "diagonal":
            if self.diag is None or len(self.diag) < m:
                raise InvalidNoiseModel(f"diagonal noise needs {m} variances")
            d = np.asarray(self.diag[:m])
            if np.any(d <= 0):
                raise InvalidNoiseModel("diagonal variances must be positive")
            return np.diag(d)
        if not -1.0 < self.phi_corr < 1.0:
            raise InvalidNoiseModel(f"AR(1) correlation must lie in (-1, 1), got {self.phi_corr}")
        if self.sigma <= 0:
            raise InvalidNoiseModel("ar1 needs sigma > 0")
        lags = np.abs(np.subtract.outer(np.arange(m), np.arange(m)))
        return self.sigma**2 * self.phi_corr ** lags.astype(np.float64)

    def factor(self, m: int) -> np.ndarray:
        """Lower Cholesky factor ``L`` with ``covariance(m) == L @ L.T``."""
        cov = self.covariance(m)
        if self.kind in ("iid_gaussian", "diagonal"):
            return np.diag(np.sqrt(np.diag(cov)))
        try:
            return linalg.cholesky(cov, lower=True)
        except linalg.LinAlgError as exc:
            raise InvalidNoiseModel("noise covariance is not positive definite") from exc

    def sample(self, m: int, t: int, seed: int) -> np.ndarray:
        """Draw an ``m x t`` noise matrix from standard normals filled row by row.

        Because the factor is lower triangular, the leading rows of a draw for
        a larger ``m`` equal a draw for a smaller ``m`` with the same seed, so
        nested operators see nested noise.
        """
        if self.kind == "none":
            return np.zeros((m, t))
        z = generator(seed).standard_normal((m, t))
        if self.kind == "iid_gaussian":
            return self.sigma * z
        return self.factor(m) @ z

    def as_dict(self) -> dict[str, object]:
        out: dict[str, object] = {"noise_kind": self.kind, "noise_sigma": float(self.sigma)}
        if self.kind == "ar1":
            out["noise_phi_corr"] = float(self.phi_corr)
        if self.diag is not None:
            out["noise_diag"] = list(self.diag)
        return out


@dataclass(frozen=True, eq=False)
class MeasurementBatch:
    """``M x T`` bucket readings plus provenance."""

    values: np.ndarray
    operator_id: str
    noise: NoiseModel
    seed: int
    calibrated: bool = False
    whitened: bool = False

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        object.__setattr__(self, "values", values)

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def t(self) -> int:
        return self.values.shape[1]

    def replace(self, **changes) -> "MeasurementBatch":
        fields = dict(
            values=self.values,
            operator_id=self.operator_id,
            noise=self.noise,
            seed=self.seed,
            calibrated=self.calibrated,
            whitened=self.whitened,
        )
        fields.update(changes)
        return MeasurementBatch(**fields)

    def provenance(self) -> dict[str, object]:
        out: dict[str, object] = {"operator": self.operator_id, "seed": self.seed}
        out.update(self.noise.as_dict())
        out["calibrated"] = self.calibrated
        out["whitened"] = self.whitened
        out["rows"] = self.m
        out["frames"] = self.t
        return out


@dataclass(frozen=True, eq=False)
class AcquisitionChain:
    """Per-row affine distortion ``y_raw = g * y + o`` with positive gains."""

    gains: np.ndarray
    offsets: np.ndarray = field(default=None)

    def __post_init__(self):
        gains = np.asarray(self.gains, dtype=np.float64).reshape(-1)
        offsets = (
            np.zeros_like(gains)
            if self.offsets is None
            else np.asarray(self.offsets, dtype=np.float64).reshape(-1)
        )
        if gains.shape != offsets.shape:
            raise InvalidArgument("gains and offsets must have the same length")
        if np.any(gains <= 0) or not np.all(np.isfinite(gains)):
            raise InvalidArgument("acquisition gains must be finite and strictly positive")
        object.__setattr__(self, "gains", gains)
        object.__setattr__(self, "offsets", offsets)


def _check_grid(op: SensingOperator, height: int, width: int) -> None:
    if (op.height, op.width) != (height, width):
        raise InvalidArgument(
            f"operator grid {op.height}x{op.width} does not match data grid {height}x{width}"
        )


def measure(op: SensingOperator, scene: Scene, noise: NoiseModel = NoiseModel(), seed: int = 0) -> np.ndarray:
    """Single exposure sequence ``y = Phi_M x + eps``."""
    _check_grid(op, scene.height, scene.width)
    y = op.effective @ scene.values
    if noise.kind != "none":
        y = y + noise.sample(op.m, 1, check_seed(seed))[:, 0]
    return y


def measure_batch(
    op: SensingOperator, batch: FrameBatch, noise: NoiseModel = NoiseModel(), seed: int = 0
) -> MeasurementBatch:
    """``Y = Phi_M X + E`` with independent noise columns drawn from one stream.

    With ``T == 1`` the result equals :func:`measure` for the same seed.
    """
    _check_grid(op, batch.height, batch.width)
    values = op.effective @ batch.frames
    if noise.kind != "none":
        values = values + noise.sample(op.m, batch.t, check_seed(seed))
    return MeasurementBatch(values, op.ident, noise, int(seed), whitened=op.whitened)


def kron_vec_apply(op: SensingOperator, batch: FrameBatch) -> np.ndarray:
    """``(I_T kron Phi_M) vec(X)`` without forming the Kronecker product.

    ``vec`` stacks columns, so the result is ``Phi_M X`` flattened in
    column-major (Fortran) order.
    """
    _check_grid(op, batch.height, batch.width)
    return (op.effective @ batch.frames).reshape(-1, order="F")


def apply_chain(y: np.ndarray, chain: AcquisitionChain) -> np.ndarray:
    """Distort ideal readings; ``y`` may be a vector or an ``M x T`` matrix."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape[0] != chain.gains.size:
        raise InvalidArgument(f"{y.shape[0]} readings but chain has {chain.gains.size} rows")
    if y.ndim == 1:
        return chain.gains * y + chain.offsets
    return chain.gains[:, None] * y + chain.offsets[:, None]
