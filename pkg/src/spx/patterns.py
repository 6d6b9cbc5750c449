"""Illumination pattern libraries and nested sensing operators."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np

from spx.errors import ContractViolation, InvalidArgument, UnsupportedSize
from spx.rng import check_seed, random_bits

Kind = Literal["speckle", "hadamard"]


@dataclass(frozen=True, eq=False)
class PatternLibrary:
    """A bank of ``count`` raw binary patterns over an ``height x width`` grid.

    ``patterns`` has shape ``(count, height*width)`` with entries in {0, 1};
    each row is a row-major flattened image. It is stored as ``uint8`` to keep
    large banks (e.g. 4000 x 320^2) in memory; convert with ``astype`` when a
    float matrix is needed.
    """

    kind: Kind
    height: int
    width: int
    count: int
    seed: int
    patterns: np.ndarray = field(repr=False)

    @property
    def n_pixels(self) -> int:
        return self.height * self.width

    @property
    def ident(self) -> str:
        return f"{self.kind}:{self.height}x{self.width}:n={self.count}:seed={self.seed}"


def _check_dims(n: int, h: int, w: int) -> None:
    if n < 1 or h < 1 or w < 1:
        raise InvalidArgument(f"dimensions must be positive, got n={n}, h={h}, w={w}")


def gen_speckle(n: int, h: int, w: int, seed: int) -> PatternLibrary:
    """Generate ``n`` i.i.d. Bernoulli(1/2) binary speckle masks.

    Entries are consecutive PCG64 bits (see :func:`spx.rng.random_bits`)
    filling the ``n x h*w`` matrix row by row, so a library with fewer rows is
    a prefix of a larger one with the same seed and image size.
    """
    _check_dims(n, h, w)
    seed = check_seed(seed)
    bits = random_bits(seed, n * h * w).reshape(n, h * w)
    bits.setflags(write=False)
    return PatternLibrary("speckle", h, w, n, seed, bits)


def _parity(values: np.ndarray) -> np.ndarray:
    v = values.astype(np.uint64)
    for shift in (32, 16, 8, 4, 2, 1):
        v ^= v >> np.uint64(shift)
    return (v & np.uint64(1)).astype(np.uint8)


def sylvester_rows(n: int, order: int) -> np.ndarray:
    """First ``n`` rows of the Sylvester Hadamard matrix of ``order``, as +-1.

    Uses H[i, j] = (-1)^popcount(i & j), avoiding the full ``order x order``
    construction.
    """
    i = np.arange(n, dtype=np.uint64)[:, None]
    j = np.arange(order, dtype=np.uint64)[None, :]
    return 1.0 - 2.0 * _parity(i & j)


def gen_hadamard(n: int, h: int, w: int) -> PatternLibrary:
    """Leading ``n`` Sylvester-Hadamard rows, remapped from +-1 to {0, 1}.

    After :func:`effective_form` the rows are the original +-1 Hadamard rows
    and are mutually orthogonal.
    """
    _check_dims(n, h, w)
    order = h * w
    if order & (order - 1):
        raise UnsupportedSize(f"h*w = {order} is not a power of two")
    if n > order:
        raise InvalidArgument(f"n = {n} exceeds the Hadamard order {order}")
    raw = ((sylvester_rows(n, order) + 1) / 2).astype(np.uint8)
    raw.setflags(write=False)
    return PatternLibrary("hadamard", h, w, n, 0, raw)


def effective_form(lib: PatternLibrary | np.ndarray) -> np.ndarray:
    """Complementary zero-mean form ``2*phi - 1`` of a raw binary library."""
    raw = lib.patterns if isinstance(lib, PatternLibrary) else np.asarray(lib)
    if not np.all((raw == 0) | (raw == 1)):
        raise ContractViolation("effective_form expects a binary {0,1} pattern matrix")
    return 2.0 * raw.astype(np.float64) - 1.0


class SensingOperator:
    """Selected effective operator ``Phi_M`` (``m x N``) plus its selection record.

    The effective matrix of an unwhitened operator is materialized lazily
    from the library rows, so the selection bookkeeping for very large
    libraries stays cheap.
    """

    def __init__(
        self,
        source: str,
        height: int,
        width: int,
        selection: np.ndarray,
        *,
        library: Optional[PatternLibrary] = None,
        matrix: Optional[np.ndarray] = None,
        whitened: bool = False,
    ):
        if library is None and matrix is None:
            raise InvalidArgument("operator needs a library or an explicit matrix")
        self.source = source
        self.height = int(height)
        self.width = int(width)
        self.selection = np.asarray(selection, dtype=np.int64)
        self.selection.setflags(write=False)
        self.whitened = bool(whitened)
        self._library = library
        self._matrix = None
        if matrix is not None:
            matrix = np.array(matrix, dtype=np.float64)
            if matrix.shape != (self.m, self.n_pixels):
                raise InvalidArgument(
                    f"matrix shape {matrix.shape} != ({self.m}, {self.n_pixels})"
                )
            matrix.setflags(write=False)
            self._matrix = matrix

    @classmethod
    def from_matrix(
        cls,
        matrix: np.ndarray,
        height: int,
        width: int,
        source: str = "explicit",
        whitened: bool = False,
    ) -> "SensingOperator":
        matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
        return cls(
            source, height, width, np.arange(matrix.shape[0]), matrix=matrix, whitened=whitened
        )

    @property
    def m(self) -> int:
        return int(self.selection.size)

    @property
    def n_pixels(self) -> int:
        return self.height * self.width

    @property
    def rho(self) -> float:
        return self.m / self.n_pixels

    @property
    def ident(self) -> str:
        tag = ":whitened" if self.whitened else ""
        return f"{self.source}:m={self.m}{tag}"

    @property
    def effective(self) -> np.ndarray:
        if self._matrix is None:
            matrix = effective_form(self._library.patterns[self.selection])
            matrix.setflags(write=False)
            self._matrix = matrix
        return self._matrix

    def with_matrix(self, matrix: np.ndarray, whitened: bool) -> "SensingOperator":
        return SensingOperator(
            self.source, self.height, self.width, self.selection, matrix=matrix, whitened=whitened
        )

    def __repr__(self) -> str:
        return f"SensingOperator({self.ident!r}, rho={self.rho:g})"


def select(lib: PatternLibrary, m: int, policy: str = "prefix") -> SensingOperator:
    """Select ``m`` library rows under ``policy`` and apply the effective form.

    Only ``prefix`` is supported: rows ``0..m-1``, so the operator for a
    smaller ``m`` is always the leading block of the operator for a larger one.
    """
    if policy != "prefix":
        raise InvalidArgument(f"unknown selection policy {policy!r}")
    if not 1 <= m <= lib.count:
        raise InvalidArgument(f"m must lie in [1, {lib.count}], got {m}")
    return SensingOperator(lib.ident, lib.height, lib.width, np.arange(m), library=lib)
