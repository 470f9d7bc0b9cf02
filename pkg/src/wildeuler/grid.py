"""Regular node grids on boxes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GridSpec:
    """Nodes ``lo + i * h`` for ``0 <= i < shape``, flattened in row-major order.

    Spectral routines treat the grid as periodic with period ``shape * h``.
    """

    lo: np.ndarray
    h: np.ndarray
    shape: tuple[int, ...]

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float).reshape(-1)
        h = np.broadcast_to(np.asarray(self.h, dtype=float), lo.shape).copy()
        shape = tuple(int(s) for s in self.shape)
        if len(shape) != lo.size:
            raise ValueError("shape and origin dimensions differ")
        if np.any(h <= 0):
            raise ValueError("grid spacing must be positive")
        if min(shape) < 8:
            raise ValueError("grids need at least 8 points per axis")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "shape", shape)

    @classmethod
    def from_box(cls, lo, hi, shape) -> "GridSpec":
        """Grid whose first and last nodes sit on the box corners."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        shape = tuple(int(s) for s in np.broadcast_to(shape, lo.shape))
        return cls(lo, (hi - lo) / (np.array(shape) - 1), shape)

    @classmethod
    def covering(cls, lo, hi, points: int, pad: float = 0.25) -> "GridSpec":
        """Grid over the box widened by ``pad`` times its width on every side."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        w = hi - lo
        return cls.from_box(lo - pad * w, hi + pad * w, points)

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def hi(self) -> np.ndarray:
        return self.lo + self.h * (np.array(self.shape) - 1)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    def refined(self) -> "GridSpec":
        """Same box, half the spacing."""
        return GridSpec(self.lo, self.h / 2, tuple(2 * s - 1 for s in self.shape))

    def axes(self) -> list[np.ndarray]:
        return [self.lo[i] + self.h[i] * np.arange(s) for i, s in enumerate(self.shape)]

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([a.reshape(-1) for a in mesh], axis=1)

    def wavenumbers(self) -> list[np.ndarray]:
        return [2.0 * np.pi * np.fft.fftfreq(s, d=self.h[i]) for i, s in enumerate(self.shape)]

    def laplacian_symbol(self) -> np.ndarray:
        """Symbol of the periodic second-order (3-point per axis) negative Laplacian."""
        ks = np.meshgrid(*self.wavenumbers(), indexing="ij", sparse=True)
        return sum((2.0 * np.sin(0.5 * k * h) / h) ** 2 for k, h in zip(ks, self.h))

    def resolves(self, wavenumber: float, nodes: float) -> bool:
        """Whether the shortest wavelength ``2 pi / wavenumber`` spans ``nodes`` spacings."""
        return wavenumber == 0.0 or 2.0 * np.pi / wavenumber >= nodes * float(self.h.max())


def parse_dims(text: str) -> tuple[int, ...]:
    """``"64x64x32"`` -> ``(64, 64, 32)``."""
    try:
        dims = tuple(int(t) for t in text.lower().split("x"))
    except ValueError as err:
        raise ValueError(f"bad grid dims {text!r}") from err
    if not dims or min(dims) < 8:
        raise ValueError(f"bad grid dims {text!r}: need >= 8 points per axis")
    return dims


def parse_box(text: str) -> tuple[np.ndarray, np.ndarray]:
    """``"-1..1,-1..1,-2..2"`` -> ``(lo, hi)``."""
    lo, hi = [], []
    for part in text.split(","):
        try:
            a, b = part.split("..")
            lo.append(float(a))
            hi.append(float(b))
        except ValueError as err:
            raise ValueError(f"bad box {text!r}") from err
    lo, hi = np.array(lo), np.array(hi)
    if np.any(hi <= lo):
        raise ValueError(f"bad box {text!r}: empty axis")
    return lo, hi
