"""Acquisition-chain estimation, inversion and noise whitening."""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import linalg

from spx.errors import ContractViolation, DegenerateReference, InvalidArgument, InvalidNoiseModel
from spx.io import read_kv, read_spmx, write_kv, write_spmx
from spx.patterns import SensingOperator
from spx.sensing import AcquisitionChain, MeasurementBatch, NoiseModel


@dataclass(frozen=True, eq=False)
class CalibrationProfile:
    offsets_hat: np.ndarray
    gains_hat: np.ndarray
    n_dark: int = 0
    n_ref: int = 0

    def __post_init__(self):
        offsets = np.asarray(self.offsets_hat, dtype=np.float64).reshape(-1)
        gains = np.asarray(self.gains_hat, dtype=np.float64).reshape(-1)
        if offsets.shape != gains.shape:
            raise InvalidArgument("offset and gain estimates differ in length")
        if not (np.all(np.isfinite(offsets)) and np.all(np.isfinite(gains))):
            raise InvalidArgument("calibration estimates must be finite")
        object.__setattr__(self, "offsets_hat", offsets)
        object.__setattr__(self, "gains_hat", gains)

    @classmethod
    def identity(cls, m: int) -> "CalibrationProfile":
        return cls(np.zeros(m), np.ones(m))

    @classmethod
    def from_chain(cls, chain: AcquisitionChain) -> "CalibrationProfile":
        return cls(chain.offsets.copy(), chain.gains.copy())

    def save(self, path: str | os.PathLike) -> None:
        """Write ``path`` as key=value with vectors in sibling SPMX files."""
        path = Path(path)
        offsets_file = path.with_name(path.stem + ".offsets.spmx")
        gains_file = path.with_name(path.stem + ".gains.spmx")
        write_spmx(offsets_file, self.offsets_hat)
        write_spmx(gains_file, self.gains_hat)
        write_kv(
            path,
            {
                "m": self.offsets_hat.size,
                "n_dark": self.n_dark,
                "n_ref": self.n_ref,
                "offsets": offsets_file.name,
                "gains": gains_file.name,
            },
        )

    @classmethod
    def load(cls, path: str | os.PathLike) -> "CalibrationProfile":
        path = Path(path)
        kv = read_kv(path)
        offsets = read_spmx(path.with_name(kv["offsets"]))[:, 0]
        gains = read_spmx(path.with_name(kv["gains"]))[:, 0]
        return cls(offsets, gains, int(kv.get("n_dark", 0)), int(kv.get("n_ref", 0)))

    def files(self, path: str | os.PathLike) -> list[Path]:
        path = Path(path)
        return [
            path,
            path.with_name(path.stem + ".offsets.spmx"),
            path.with_name(path.stem + ".gains.spmx"),
        ]


def estimate_offset(dark: MeasurementBatch) -> np.ndarray:
    """Per-row mean of readings taken with a dark (all-zero) scene."""
    if dark.t < 1:
        raise InvalidArgument("dark batch has no frames")
    return dark.values.mean(axis=1)


def estimate_gain(
    refmeas: MeasurementBatch,
    ref_ideal: np.ndarray,
    offsets: np.ndarray,
    *,
    exclude_zero: bool = False,
) -> np.ndarray:
    """Per-row gain ``mean_t((raw - o) / ref_ideal)`` from a known reference.

    Rows whose ideal reference reading is zero carry no gain information.
    They raise :class:`DegenerateReference` unless ``exclude_zero`` is set,
    in which case their gain defaults to 1 and a warning lists them.
    """
    ref_ideal = np.asarray(ref_ideal, dtype=np.float64).reshape(-1)
    offsets = np.asarray(offsets, dtype=np.float64).reshape(-1)
    if refmeas.m != ref_ideal.size or offsets.size != ref_ideal.size:
        raise InvalidArgument("reference, ideal reference and offsets differ in length")
    if refmeas.t < 1:
        raise InvalidArgument("reference batch has no frames")
    zero = ref_ideal == 0
    if np.any(zero) and not exclude_zero:
        raise DegenerateReference(f"ideal reference is zero on rows {np.flatnonzero(zero).tolist()}")
    gains = np.ones_like(ref_ideal)
    ok = ~zero
    centred = refmeas.values[ok] - offsets[ok, None]
    gains[ok] = (centred / ref_ideal[ok, None]).mean(axis=1)
    if np.any(zero):
        warnings.warn(
            f"{int(zero.sum())} rows have a zero reference response; gain set to 1 "
            f"(rows {np.flatnonzero(zero).tolist()[:20]})",
            RuntimeWarning,
            stacklevel=2,
        )
    return gains


def estimate_profile(
    dark: MeasurementBatch, refmeas: MeasurementBatch, ref_ideal: np.ndarray
) -> CalibrationProfile:
    """Offset from ``dark`` then gains from ``refmeas``; zero-response rows get gain 1."""
    offsets = estimate_offset(dark)
    gains = estimate_gain(refmeas, ref_ideal, offsets, exclude_zero=True)
    if np.any(gains <= 0):
        bad = np.flatnonzero(gains <= 0).tolist()
        raise DegenerateReference(f"non-positive gain estimates on rows {bad}")
    return CalibrationProfile(offsets, gains, dark.t, refmeas.t)


def calibrate(raw: MeasurementBatch, profile: CalibrationProfile) -> MeasurementBatch:
    """Invert the affine chain: ``(raw - o) / g`` row by row."""
    if profile.gains_hat.size != raw.m:
        raise InvalidArgument(f"profile has {profile.gains_hat.size} rows, batch has {raw.m}")
    if np.any(profile.gains_hat <= 0):
        raise ContractViolation("calibration gains must be strictly positive")
    values = (raw.values - profile.offsets_hat[:, None]) / profile.gains_hat[:, None]
    return raw.replace(values=values, calibrated=True)


@dataclass(frozen=True, eq=False)
class WhiteningTransform:
    """``Sigma^{-1/2}`` realized as a triangular solve against ``L`` (``Sigma = L L^T``)."""

    factor: np.ndarray
    source_noise: NoiseModel

    @classmethod
    def from_noise(cls, noise: NoiseModel, m: int) -> "WhiteningTransform":
        factor = noise.factor(m)
        if np.any(np.diag(factor) <= 0):
            raise InvalidNoiseModel("whitening factor is singular")
        return cls(factor, noise)

    def apply(self, arr: np.ndarray) -> np.ndarray:
        return linalg.solve_triangular(self.factor, arr, lower=True)


def whiten(
    meas: MeasurementBatch, op: SensingOperator, noise: NoiseModel
) -> tuple[MeasurementBatch, SensingOperator]:
    """Return ``(L^{-1} Y, L^{-1} Phi_M)`` so the transformed noise is white."""
    if meas.m != op.m:
        raise InvalidArgument(f"batch has {meas.m} rows, operator has {op.m}")
    if not meas.calibrated:
        warnings.warn("whitening an uncalibrated batch", RuntimeWarning, stacklevel=2)
    transform = WhiteningTransform.from_noise(noise, op.m)
    values = transform.apply(meas.values)
    matrix = transform.apply(op.effective)
    return meas.replace(values=values, whitened=True), op.with_matrix(matrix, whitened=True)
