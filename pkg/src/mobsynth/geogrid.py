"""Uniform grid over a lat/lon bounding box, indexed by a Hilbert curve.

Cells are addressed by their position along the Hilbert curve of order
``level`` so that consecutive indices are edge-adjacent grid cells.  The
curve index doubles as a locality-preserving one-dimensional embedding of
space: ``curve_position`` maps a cell to the unit interval.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import NamedTuple

from .errors import RangeError

MAX_LEVEL = 16


class LatLon(NamedTuple):
    lat: float
    lon: float


@dataclass(frozen=True)
class GridSpec:
    """Bounding box plus subdivision level; the grid is 2^level x 2^level."""

    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float
    level: int = 8

    def __post_init__(self):
        if not self.lat_min < self.lat_max:
            raise RangeError(f"lat_min must be < lat_max, got [{self.lat_min}, {self.lat_max}]")
        if not self.lon_min < self.lon_max:
            raise RangeError(f"lon_min must be < lon_max, got [{self.lon_min}, {self.lon_max}]")
        if not 1 <= self.level <= MAX_LEVEL:
            raise RangeError(f"level must be in [1, {MAX_LEVEL}], got {self.level}")

    @property
    def n_side(self) -> int:
        return 1 << self.level

    @property
    def n_cells(self) -> int:
        return 1 << (2 * self.level)

    @property
    def cell_height(self) -> float:
        return (self.lat_max - self.lat_min) / self.n_side

    @property
    def cell_width(self) -> float:
        return (self.lon_max - self.lon_min) / self.n_side

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(
            lat_min=float(d["lat_min"]),
            lat_max=float(d["lat_max"]),
            lon_min=float(d["lon_min"]),
            lon_max=float(d["lon_max"]),
            level=int(d["level"]),
        )


def _xy_to_index(n_side: int, x: int, y: int) -> int:
    """Hilbert curve index of grid cell (x, y); (0, 0) maps to 0."""
    d = 0
    s = n_side // 2
    while s > 0:
        rx = 1 if (x & s) > 0 else 0
        ry = 1 if (y & s) > 0 else 0
        d += s * s * ((3 * rx) ^ ry)
        if ry == 0:
            if rx == 1:
                x = s - 1 - x
                y = s - 1 - y
            x, y = y, x
        s //= 2
    return d


def _index_to_xy(n_side: int, d: int) -> tuple[int, int]:
    """Inverse of :func:`_xy_to_index`."""
    x = y = 0
    t = d
    s = 1
    while s < n_side:
        rx = 1 & (t // 2)
        ry = 1 & (t ^ rx)
        if ry == 0:
            if rx == 1:
                x = s - 1 - x
                y = s - 1 - y
            x, y = y, x
        x += s * rx
        y += s * ry
        t //= 4
        s *= 2
    return x, y


def encode(spec: GridSpec, p: LatLon) -> int:
    """Map a point to the Hilbert index of its containing cell.

    Cells are half-open: a point on an interior boundary belongs to the
    cell with the larger coordinate.  Points on the box's max edges fall
    into the last cell.
    """
    lat, lon = p
    if not spec.lat_min <= lat <= spec.lat_max:
        raise RangeError(f"latitude {lat} outside [{spec.lat_min}, {spec.lat_max}]")
    if not spec.lon_min <= lon <= spec.lon_max:
        raise RangeError(f"longitude {lon} outside [{spec.lon_min}, {spec.lon_max}]")
    last = spec.n_side - 1
    row = min(int(math.floor((lat - spec.lat_min) / spec.cell_height)), last)
    col = min(int(math.floor((lon - spec.lon_min) / spec.cell_width)), last)
    # x runs west->east, y runs south->north; curve origin is the SW cell
    return _xy_to_index(spec.n_side, col, row)


def decode(spec: GridSpec, cell: int) -> LatLon:
    """Center coordinates of the cell with the given Hilbert index."""
    _check_cell(spec, cell)
    col, row = _index_to_xy(spec.n_side, int(cell))
    lat = spec.lat_min + (row + 0.5) * spec.cell_height
    lon = spec.lon_min + (col + 0.5) * spec.cell_width
    return LatLon(lat, lon)


def curve_position(spec: GridSpec, cell: int) -> float:
    """Continuous unit-interval embedding: (index + 0.5) / n_cells."""
    _check_cell(spec, cell)
    return (int(cell) + 0.5) / spec.n_cells


def cell_from_position(spec: GridSpec, pos: float) -> int:
    """Floor a continuous curve position back to its cell index."""
    idx = int(math.floor(pos * spec.n_cells))
    return min(max(idx, 0), spec.n_cells - 1)


def _check_cell(spec: GridSpec, cell: int) -> None:
    if not 0 <= int(cell) < spec.n_cells:
        raise RangeError(f"cell index {cell} outside [0, {spec.n_cells})")
