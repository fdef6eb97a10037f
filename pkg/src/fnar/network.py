"""Interaction matrices W and the quadratic-moment weight matrices built from them."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import InvalidArgumentError, SchemaError

__all__ = [
    "NetworkWeights",
    "QuadWeightMatrix",
    "build_lattice_weights",
    "build_distance_weights",
    "build_quadratic_weights",
    "read_edge_list",
    "write_edge_list",
]

_EARTH_RADIUS_KM = 6371.0088


@dataclass
class NetworkWeights:
    """Time-invariant n x n interaction matrix with zero diagonal.

    Attributes
    ----------
    w : scipy.sparse.csr_array
        Weight matrix; ``w[i, j]`` is the influence of unit j on unit i.
    coords : ndarray or None
        Optional unit locations used to build the matrix.
    """

    w: sp.csr_array
    coords: np.ndarray | None = None
    degrees: np.ndarray = field(init=False)

    def __post_init__(self):
        w = sp.csr_array(self.w)
        if w.shape[0] != w.shape[1]:
            raise InvalidArgumentError(f"weight matrix must be square, got {w.shape}")
        if not np.all(np.isfinite(w.data)):
            raise InvalidArgumentError("weight matrix entries must be finite")
        w.eliminate_zeros()
        if np.any(w.diagonal() != 0.0):
            raise InvalidArgumentError("weight matrix diagonal must be zero")
        self.w = w
        self.degrees = np.diff(w.indptr)

    @property
    def n(self) -> int:
        return self.w.shape[0]

    @property
    def row_sup(self) -> float:
        """Maximum absolute row sum, the matrix infinity norm."""
        if self.w.nnz == 0:
            return 0.0
        return float(np.max(np.abs(self.w).sum(axis=1)))

    def dense(self) -> np.ndarray:
        return self.w.toarray()


@dataclass
class QuadWeightMatrix:
    """Symmetric zero-diagonal matrix entering a quadratic moment condition."""

    p: sp.csr_array

    def __post_init__(self):
        p = sp.csr_array(self.p)
        if p.shape[0] != p.shape[1]:
            raise InvalidArgumentError(f"quadratic weight matrix must be square, got {p.shape}")
        if np.any(p.diagonal() != 0.0):
            raise InvalidArgumentError("quadratic weight matrix diagonal must be zero")
        if (abs(p - p.T)).max() != 0.0:
            raise InvalidArgumentError("quadratic weight matrix must be exactly symmetric")
        self.p = p

    @property
    def n(self) -> int:
        return self.p.shape[0]

    def dense(self) -> np.ndarray:
        return self.p.toarray()


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def _row_normalize(w: sp.csr_array) -> sp.csr_array:
    """Divide each row by its absolute sum; all-zero rows are left as is."""
    sums = np.asarray(np.abs(w).sum(axis=1)).ravel()
    scale = np.divide(1.0, sums, out=np.zeros_like(sums), where=sums > 0)
    return sp.csr_array(sp.diags_array(scale) @ w)


def build_lattice_weights(n: int, rng_seed) -> NetworkWeights:
    """Random lattice design: n units on a side x side integer lattice.

    The side is the nearest integer to sqrt(2 n); units occupy distinct
    cells chosen uniformly at random, and two units are linked when their
    Euclidean distance is exactly 1. Rows are then normalized, so the
    matrix infinity norm is at most one and isolated units keep zero rows.
    """
    if n < 2:
        raise InvalidArgumentError(f"need at least 2 units, got {n}")
    side = _round_half_up(np.sqrt(2.0 * n))
    if n > side * side:
        raise InvalidArgumentError(f"{n} units exceed the {side}x{side} lattice capacity")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    cells = rng.choice(side * side, size=n, replace=False)
    coords = np.column_stack([cells // side, cells % side]).astype(float)
    rows, cols = [], []
    for i in range(n):
        diff = coords - coords[i]
        dist2 = diff[:, 0] ** 2 + diff[:, 1] ** 2
        neighbours = np.nonzero(dist2 == 1.0)[0]
        rows.extend([i] * neighbours.size)
        cols.extend(neighbours.tolist())
    adj = sp.csr_array(
        (np.ones(len(rows)), (np.array(rows, dtype=int), np.array(cols, dtype=int))),
        shape=(n, n),
    )
    return NetworkWeights(w=_row_normalize(adj), coords=coords)


def _great_circle_distances(coords: np.ndarray) -> np.ndarray:
    """Pairwise great-circle distances in km for (lon, lat) rows in degrees."""
    lon = np.radians(coords[:, 0])
    lat = np.radians(coords[:, 1])
    dlat = lat[:, None] - lat[None, :]
    dlon = lon[:, None] - lon[None, :]
    a = np.sin(dlat / 2) ** 2 + np.cos(lat)[:, None] * np.cos(lat)[None, :] * np.sin(dlon / 2) ** 2
    return 2.0 * _EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def build_distance_weights(coords: np.ndarray, threshold: float,
                           inverse_distance: bool = True,
                           metric: str = "euclidean") -> NetworkWeights:
    """Distance-band weights: units within ``threshold`` of each other interact.

    Raw weights are 1/distance inside the band (or 1 when
    ``inverse_distance`` is off), then each row is normalized by its sum.
    ``metric`` is "euclidean" for planar coordinates or "greatcircle" for
    (lon, lat) in degrees with distances in km.
    """
    coords = np.asarray(coords, dtype=float)
    if coords.ndim != 2 or coords.shape[0] < 2:
        raise InvalidArgumentError("coords must be a 2-d array with at least two rows")
    if metric == "euclidean":
        diff = coords[:, None, :] - coords[None, :, :]
        dist = np.sqrt(np.sum(diff**2, axis=-1))
    elif metric == "greatcircle":
        dist = _great_circle_distances(coords)
    else:
        raise InvalidArgumentError(f"unknown metric {metric!r}")
    n = coords.shape[0]
    off_diag = ~np.eye(n, dtype=bool)
    if np.any(dist[off_diag] == 0.0):
        raise InvalidArgumentError("duplicate coordinates: zero distance between distinct units")
    band = (dist <= threshold) & off_diag
    raw = np.zeros((n, n))
    if inverse_distance:
        raw[band] = 1.0 / dist[band]
    else:
        raw[band] = 1.0
    return NetworkWeights(w=_row_normalize(sp.csr_array(raw)), coords=coords)


def _zero_diagonal(m: sp.csr_array) -> sp.csr_array:
    m = sp.csr_array(m, copy=True)
    m.setdiag(0.0)
    m.eliminate_zeros()
    return m


def _exact_symmetrize(m: sp.csr_array) -> sp.csr_array:
    # (m + m.T)/2 entrywise; IEEE addition is commutative, so the result is
    # bitwise symmetric regardless of scipy's internal summation order.
    return sp.csr_array((m + m.T) * 0.5)


def build_quadratic_weights(weights: NetworkWeights) -> list[QuadWeightMatrix]:
    """Default quadratic-moment matrices: symmetrized W and W'W less its diagonal."""
    w = weights.w
    p1 = _zero_diagonal(_exact_symmetrize(w))
    p2 = _zero_diagonal(_exact_symmetrize(sp.csr_array(w.T @ w)))
    return [QuadWeightMatrix(p=p1), QuadWeightMatrix(p=p2)]


def read_edge_list(path, n: int | None = None) -> NetworkWeights:
    """Load weights from a text edge list with header ``i,j,weight`` (0-based ids)."""
    rows, cols, vals = [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != ["i", "j", "weight"]:
            raise SchemaError("expected header 'i,j,weight'", line=1, path=str(path))
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 3:
                raise SchemaError(f"expected 3 fields, got {len(row)}", line=lineno, path=str(path))
            try:
                i, j, v = int(row[0]), int(row[1]), float(row[2])
            except ValueError as exc:
                raise SchemaError(str(exc), line=lineno, path=str(path)) from exc
            if i < 0 or j < 0:
                raise SchemaError("unit ids must be non-negative", line=lineno, path=str(path))
            if i == j and v != 0.0:
                raise SchemaError("self-loop weights are not allowed", line=lineno, path=str(path))
            rows.append(i)
            cols.append(j)
            vals.append(v)
    if n is None:
        if not rows:
            raise SchemaError("edge list is empty and no unit count was given", path=str(path))
        n = max(max(rows), max(cols)) + 1
    w = sp.csr_array((vals, (rows, cols)), shape=(n, n))
    return NetworkWeights(w=w)


def write_edge_list(weights: NetworkWeights, path) -> None:
    """Write weights as a text edge list with header ``i,j,weight``."""
    coo = weights.w.tocoo()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["i", "j", "weight"])
        for i, j, v in zip(coo.row, coo.col, coo.data):
            writer.writerow([int(i), int(j), repr(float(v))])
