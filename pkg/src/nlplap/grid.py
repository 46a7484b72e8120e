"""Cell-centred grids over a box and its delta-halo, the neighbour pair table, and field I/O."""
from __future__ import annotations

import csv
import io
import itertools
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .kernel import KernelSpec, omega

ANTISYMMETRIC = -1
SYMMETRIC = 1


class ResolutionError(ValueError):
    """The horizon is not resolved by the grid (delta < 2h)."""


@dataclass(frozen=True)
class Domain:
    """Axis-aligned box ``prod_k (a_k, b_k)``; an interval when it has one axis."""

    bounds: tuple[tuple[float, float], ...]

    def __post_init__(self):
        bounds = tuple((float(a), float(b)) for a, b in self.bounds)
        if not bounds or len(bounds) > 2:
            raise ValueError("grids are built for n = 1 or n = 2 only")
        for a, b in bounds:
            if not b > a:
                raise ValueError(f"empty axis ({a}, {b})")
        object.__setattr__(self, "bounds", bounds)

    @classmethod
    def interval(cls, a: float = 0.0, b: float = 1.0) -> "Domain":
        return cls(((a, b),))

    @classmethod
    def box(cls, *bounds) -> "Domain":
        return cls(tuple(bounds))

    @property
    def n(self) -> int:
        return len(self.bounds)

    @property
    def measure(self) -> float:
        return math.prod(b - a for a, b in self.bounds)

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        inside = np.ones(x.shape[0], dtype=bool)
        for k, (a, b) in enumerate(self.bounds):
            inside &= (x[:, k] > a) & (x[:, k] < b)
        return inside

    def reflect(self, x: np.ndarray) -> np.ndarray:
        """Point reflection through the centre of the box."""
        centre = np.array([(a + b) / 2 for a, b in self.bounds])
        return 2 * centre - x


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform cell-centred grid covering Omega and its halo.

    ``lattice`` holds integer cell indices (cell ``k`` has centre
    ``a + (k + 1/2) h`` per axis; halo cells have negative or large indices).
    Cells are ordered lexicographically by lattice index.
    """

    domain: Domain
    h: float
    delta: float
    lattice: np.ndarray
    centers: np.ndarray
    interior: np.ndarray
    shape: tuple[int, ...]
    halo_width: int

    @property
    def n(self) -> int:
        return self.domain.n

    @property
    def size(self) -> int:
        return self.centers.shape[0]

    @property
    def cell_measure(self) -> float:
        return self.h ** self.n

    @property
    def halo(self) -> np.ndarray:
        return ~self.interior

    @property
    def n_interior(self) -> int:
        return int(self.interior.sum())

    def mirror_index(self) -> np.ndarray:
        """Index of the cell obtained by reflecting through the domain centre."""
        target = np.array(self.shape) - 1 - self.lattice
        lookup = {tuple(k): i for i, k in enumerate(self.lattice)}
        return np.array([lookup[tuple(k)] for k in target])


def build_grid(domain: Domain, h: float, delta: float) -> Grid:
    """Cells of side ``h`` on ``domain`` plus every halo cell within ``delta`` of it.

    Axis lengths that are not integer multiples of ``h`` are snapped to the
    nearest multiple (with a warning).  A halo cell is kept when its closed
    box lies at distance ``< delta`` from Omega, which yields
    ``ceil(delta/h)`` halo layers along each axis.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    if delta < 2 * h * (1 - 1e-12):
        raise ResolutionError(f"delta={delta} < 2h={2 * h}: horizon not resolved")
    shape = []
    for a, b in domain.bounds:
        cells = (b - a) / h
        rounded = max(1, int(round(cells)))
        if abs(cells - rounded) > 1e-9 * max(1.0, cells):
            warnings.warn(f"axis ({a}, {b}) is not a multiple of h={h}; snapped to {rounded} cells")
        shape.append(rounded)
    width = int(math.ceil(delta / h - 1e-9))

    axes = [np.arange(-width, m + width) for m in shape]
    lattice = np.array(list(itertools.product(*axes)), dtype=np.int64).reshape(-1, domain.n)
    # distance (in cells) from each cell box to the interior block, per axis
    gap = np.zeros(lattice.shape, dtype=float)
    for k, m in enumerate(shape):
        gap[:, k] = np.maximum(0, np.maximum(-lattice[:, k], lattice[:, k] - (m - 1)))
    interior = np.all(gap == 0, axis=1)
    # a cell g layers out has its near face (g - 1) h away from Omega
    gap_len = h * np.sqrt(np.sum(np.maximum(gap - 1, 0) ** 2, axis=1))
    keep = interior | (gap_len < delta * (1 - 1e-12))
    lattice = lattice[keep]
    interior = interior[keep]
    origin = np.array([a for a, _ in domain.bounds])
    centers = origin + (lattice + 0.5) * h
    return Grid(domain=domain, h=float(h), delta=float(delta), lattice=lattice,
                centers=centers, interior=interior, shape=tuple(shape), halo_width=width)


@dataclass(frozen=True, eq=False)
class PairTable:
    """Unordered neighbour pairs ``i < j`` with ``0 < |x_i - x_j| < delta``.

    ``w_omega`` is the (possibly lattice-calibrated) kernel value on each pair;
    ``kernel_scale`` records the calibration factor applied to ``omega``.
    """

    grid: Grid
    spec: KernelSpec
    i: np.ndarray
    j: np.ndarray
    r: np.ndarray
    offset: np.ndarray
    w_omega: np.ndarray
    kernel_scale: float = 1.0

    @property
    def size(self) -> int:
        return self.i.size

    @property
    def w_quad(self) -> float:
        return self.grid.h ** (2 * self.grid.n)

    def both_interior(self) -> np.ndarray:
        return self.grid.interior[self.i] & self.grid.interior[self.j]


def lattice_offsets(n: int, h: float, delta: float) -> np.ndarray:
    """Integer offsets ``k`` with ``0 < |k| h < delta`` (strict support)."""
    m = int(math.ceil(delta / h))
    rng = np.arange(-m, m + 1)
    ks = np.array(list(itertools.product(*([rng] * n))), dtype=np.int64).reshape(-1, n)
    r = h * np.linalg.norm(ks, axis=1)
    return ks[(r > 0) & (r < delta)]


def lattice_moment(spec: KernelSpec, h: float) -> float:
    """Discrete counterpart of the normalisation moment, ``sum_k |kh|^p omega^p h^n``."""
    ks = lattice_offsets(spec.n, h, spec.delta)
    r = h * np.linalg.norm(ks, axis=1)
    return float(np.sum(r ** spec.p * omega(r, spec) ** spec.p) * h ** spec.n)


def build_pairs(grid: Grid, spec: KernelSpec, normalization: str = "lattice") -> PairTable:
    """Enumerate all unordered cell pairs inside the horizon.

    ``normalization="lattice"`` rescales the kernel on this grid so that the
    discrete moment ``sum_j |x_i - x_j|^p w_omega^p h^n`` of a full
    neighbour shell equals ``1/K_{p,n}`` exactly.
    """
    if spec.n != grid.n:
        raise ValueError("kernel and grid dimensions differ")
    if abs(spec.delta - grid.delta) > 1e-12 * spec.delta:
        raise ValueError("kernel and grid horizons differ")
    if normalization == "continuum":
        scale = 1.0
    elif normalization == "lattice":
        scale = (1.0 / (spec.Kpn * lattice_moment(spec, grid.h))) ** (1.0 / spec.p)
    else:
        raise ValueError(f"unknown normalization {normalization!r}")

    lookup = {tuple(k): idx for idx, k in enumerate(grid.lattice)}
    ks = lattice_offsets(grid.n, grid.h, spec.delta)
    # one representative per unordered offset pair: lexicographically positive
    positive = np.array([tuple(k) > tuple(-k) for k in ks])
    ks = ks[positive]
    ii, jj = [], []
    for k in ks:
        targets = grid.lattice + k
        for a, t in enumerate(map(tuple, targets)):
            b = lookup.get(t)
            if b is not None:
                ii.append(a)
                jj.append(b)
    ii = np.array(ii, dtype=np.int64)
    jj = np.array(jj, dtype=np.int64)
    lo, hi = np.minimum(ii, jj), np.maximum(ii, jj)
    order = np.lexsort((hi, lo))
    i, j = lo[order], hi[order]
    offset = grid.centers[i] - grid.centers[j]
    r = np.linalg.norm(offset, axis=1)
    w = scale * omega(r, spec) if r.size else np.zeros(0)
    return PairTable(grid=grid, spec=spec, i=i, j=j, r=r, offset=offset,
                     w_omega=np.asarray(w, dtype=float), kernel_scale=float(scale))


@dataclass
class TwoPointField:
    """One value per stored pair ``(i, j)``, ``i < j``; ``(j, i)`` is ``parity * value``."""

    values: np.ndarray
    parity: int = ANTISYMMETRIC

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.parity not in (ANTISYMMETRIC, SYMMETRIC):
            raise ValueError("parity must be +1 (symmetric) or -1 (antisymmetric)")

    def __mul__(self, c: float) -> "TwoPointField":
        return TwoPointField(c * self.values, self.parity)

    __rmul__ = __mul__

    def dense(self, pairs: PairTable) -> np.ndarray:
        """Full ``(N, N)`` matrix with both orientations; meant for small checks."""
        m = np.zeros((pairs.grid.size, pairs.grid.size))
        m[pairs.i, pairs.j] = self.values
        m[pairs.j, pairs.i] = self.parity * self.values
        return m


def integrate_cells(values: np.ndarray, grid: Grid, region: str = "interior") -> float:
    """Midpoint rule ``h^n * sum(values)`` over ``"interior"`` or ``"all"`` cells."""
    values = np.asarray(values, dtype=float)
    if region == "interior":
        return float(grid.cell_measure * values[grid.interior].sum())
    if region == "all":
        return float(grid.cell_measure * values.sum())
    raise ValueError(f"unknown region {region!r}")


def cell_norm(values: np.ndarray, grid: Grid, q: float, region: str = "interior") -> float:
    """Discrete ``L^q`` norm of a scalar or vector cell field."""
    v = np.asarray(values, dtype=float)
    mag = np.linalg.norm(v, axis=1) if v.ndim == 2 else np.abs(v)
    return integrate_cells(mag ** q, grid, region) ** (1.0 / q)


def pair_norm_q(tp: TwoPointField, q: float, pairs: PairTable) -> float:
    """``(sum over ordered pairs |value|^q h^{2n})^{1/q}``; both orientations have equal modulus."""
    return float((2.0 * pairs.w_quad * np.sum(np.abs(tp.values) ** q)) ** (1.0 / q))


def omega_only(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Copy of a cell field with the halo zeroed (the state space)."""
    out = np.array(values, dtype=float, copy=True)
    out[grid.halo] = 0.0
    return out


def interior_field(fn, grid: Grid) -> np.ndarray:
    """Evaluate ``fn`` at interior centres, zero on the halo."""
    out = np.zeros(grid.size)
    out[grid.interior] = np.asarray(fn(grid.centers[grid.interior]), dtype=float).reshape(-1)
    return out


def write_field_csv(values: np.ndarray, grid: Grid, stream=None) -> str:
    """CSV ``x[,y],value`` per cell (vector fields get ``value_0, value_1, ...``)."""
    stream = stream or io.StringIO()
    writer = csv.writer(stream, lineterminator="\n")
    coords = ["x", "y"][: grid.n]
    v = np.asarray(values, dtype=float)
    names = ["value"] if v.ndim == 1 else [f"value_{k}" for k in range(v.shape[1])]
    writer.writerow(coords + names)
    for c, val in zip(grid.centers, v):
        row = [repr(float(x)) for x in c]
        row += [repr(float(val))] if v.ndim == 1 else [repr(float(x)) for x in val]
        writer.writerow(row)
    return stream.getvalue() if isinstance(stream, io.StringIO) else ""


def write_pairs_csv(tp: TwoPointField, pairs: PairTable, stream=None) -> str:
    """CSV ``i,j,r,value`` per stored pair."""
    stream = stream or io.StringIO()
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["i", "j", "r", "value"])
    for a, b, r, v in zip(pairs.i, pairs.j, pairs.r, tp.values):
        writer.writerow([int(a), int(b), repr(float(r)), repr(float(v))])
    return stream.getvalue() if isinstance(stream, io.StringIO) else ""
