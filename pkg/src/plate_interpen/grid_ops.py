"""Uniform rectangular grid, nodal fields and finite-difference plate operators.

Node arrays have shape ``(ny + 2, nx + 2)``: row index runs along ``x2``,
column index along ``x1``, and the outer ring holds the boundary nodes.
Unknowns of Dirichlet-type fields live on the ``nx * ny`` interior nodes and
are flattened row-major.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


class BCKind(str, enum.Enum):
    CLAMPED = "clamped"
    SIMPLY_SUPPORTED = "simply_supported"


@dataclass(frozen=True)
class Grid:
    nx: int
    ny: int
    lx: float = 1.0
    ly: float = 1.0

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise ValueError(f"grid needs at least 3 interior nodes per axis, got {self.nx}x{self.ny}")
        if not (self.lx > 0 and self.ly > 0):
            raise ValueError("domain edge lengths must be positive")

    @property
    def hx(self) -> float:
        return self.lx / (self.nx + 1)

    @property
    def hy(self) -> float:
        return self.ly / (self.ny + 1)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny + 2, self.nx + 2)

    @property
    def n_interior(self) -> int:
        return self.nx * self.ny

    @property
    def n_nodes(self) -> int:
        return (self.nx + 2) * (self.ny + 2)

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        x1 = np.linspace(0.0, self.lx, self.nx + 2)
        x2 = np.linspace(0.0, self.ly, self.ny + 2)
        X1, X2 = np.meshgrid(x1, x2)
        return X1, X2

    def interior(self, values: np.ndarray) -> np.ndarray:
        return values[1:-1, 1:-1]

    def embed(self, vec: np.ndarray, ring: float = 0.0) -> np.ndarray:
        """Full node array from a flat interior vector and a constant ring value."""
        out = np.full(self.shape, float(ring))
        out[1:-1, 1:-1] = np.asarray(vec).reshape(self.ny, self.nx)
        return out

    def refined(self) -> "Grid":
        """Grid with halved spacings; the coarse nodes are a subset."""
        return Grid(2 * self.nx + 1, 2 * self.ny + 1, self.lx, self.ly)


@dataclass
class Field:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"field shape {self.values.shape} does not match grid {self.grid.shape}")

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "Field":
        X1, X2 = grid.coords()
        return cls(grid, np.broadcast_to(fn(X1, X2), grid.shape).copy())

    @classmethod
    def constant(cls, grid: Grid, value: float) -> "Field":
        return cls(grid, np.full(grid.shape, float(value)))

    @property
    def interior(self) -> np.ndarray:
        return self.values[1:-1, 1:-1]


@dataclass
class VecField:
    c1: Field
    c2: Field

    def __post_init__(self):
        if self.c1.grid != self.c2.grid:
            raise ValueError("vector components live on different grids")

    @property
    def grid(self) -> Grid:
        return self.c1.grid


@dataclass
class SymTensorField:
    c11: Field
    c22: Field
    c12: Field

    def __post_init__(self):
        if not (self.c11.grid == self.c22.grid == self.c12.grid):
            raise ValueError("tensor components live on different grids")

    @property
    def grid(self) -> Grid:
        return self.c11.grid


@dataclass
class BoundaryCondition:
    kind: BCKind
    dirichlet_data: Field

    def __post_init__(self):
        self.kind = BCKind(self.kind)
        if not np.all(np.isfinite(self.dirichlet_data.values)):
            raise ValueError("dirichlet data must be finite")


def _check_same(*fields: Field) -> Grid:
    grid = fields[0].grid
    for f in fields[1:]:
        if f.grid != grid:
            raise ValueError("grid mismatch between fields")
    return grid


def ghost_extend(f: Field, bc: BoundaryCondition) -> np.ndarray:
    """Pad ``f`` by one ghost ring using reflection rules of ``bc``.

    Clamped: ``f - d`` is mirrored evenly, with ``d`` linearly extrapolated,
    so the centered normal derivative of ``f`` follows the data.
    Simply supported: ``f`` is mirrored oddly about its boundary value, which
    makes the normal second difference vanish on the boundary.
    """
    grid = _check_same(f, bc.dirichlet_data)
    a = f.values
    out = np.zeros((grid.ny + 4, grid.nx + 4))
    out[1:-1, 1:-1] = a
    if bc.kind is BCKind.CLAMPED:
        d = bc.dirichlet_data.values
        out[1:-1, 0] = a[:, 1] + 2.0 * (d[:, 0] - d[:, 1])
        out[1:-1, -1] = a[:, -2] + 2.0 * (d[:, -1] - d[:, -2])
        out[0, 1:-1] = a[1, :] + 2.0 * (d[0, :] - d[1, :])
        out[-1, 1:-1] = a[-2, :] + 2.0 * (d[-1, :] - d[-2, :])
    else:
        out[1:-1, 0] = 2.0 * a[:, 0] - a[:, 1]
        out[1:-1, -1] = 2.0 * a[:, -1] - a[:, -2]
        out[0, 1:-1] = 2.0 * a[0, :] - a[1, :]
        out[-1, 1:-1] = 2.0 * a[-1, :] - a[-2, :]
    # corner ghosts are never read by the 5-point stencil
    for r, c in ((0, 0), (0, -1), (-1, 0), (-1, -1)):
        out[r, c] = np.nan
    return out


def _lap5(ext: np.ndarray, hx: float, hy: float) -> np.ndarray:
    c = ext[1:-1, 1:-1]
    return (ext[1:-1, 2:] - 2 * c + ext[1:-1, :-2]) / hx**2 + (ext[2:, 1:-1] - 2 * c + ext[:-2, 1:-1]) / hy**2


def laplacian(f: Field, bc: BoundaryCondition) -> Field:
    """5-point Laplacian on interior and boundary nodes."""
    grid = f.grid
    ext = ghost_extend(f, bc)
    return Field(grid, _lap5(ext, grid.hx, grid.hy))


def biharmonic(f: Field, bc: BoundaryCondition) -> Field:
    """13-point biharmonic at interior nodes; the boundary ring of the result is zero."""
    grid = f.grid
    lap = laplacian(f, bc).values
    out = np.zeros(grid.shape)
    out[1:-1, 1:-1] = _lap5(lap, grid.hx, grid.hy)
    return Field(grid, out)


def second_differences(f: Field) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Centered ``d11, d22, d12`` at interior nodes (shape ``(ny, nx)``)."""
    a = f.values
    g = f.grid
    d11 = (a[1:-1, 2:] - 2 * a[1:-1, 1:-1] + a[1:-1, :-2]) / g.hx**2
    d22 = (a[2:, 1:-1] - 2 * a[1:-1, 1:-1] + a[:-2, 1:-1]) / g.hy**2
    d12 = (a[2:, 2:] - a[2:, :-2] - a[:-2, 2:] + a[:-2, :-2]) / (4 * g.hx * g.hy)
    return d11, d22, d12


def vk_bracket(u: Field, v: Field) -> Field:
    """Monge-Ampere bracket ``u11 v22 + u22 v11 - 2 u12 v12`` at interior nodes."""
    grid = _check_same(u, v)
    u11, u22, u12 = second_differences(u)
    v11, v22, v12 = second_differences(v)
    out = np.zeros(grid.shape)
    out[1:-1, 1:-1] = u11 * v22 + u22 * v11 - 2 * u12 * v12
    return Field(grid, out)


# -- first-order vector/tensor operators --------------------------------------


def gradient(f: Field) -> VecField:
    g = f.grid
    d2, d1 = np.gradient(f.values, g.hy, g.hx, edge_order=2)
    return VecField(Field(g, d1), Field(g, d2))


def sym_strain(phi: VecField) -> SymTensorField:
    """``(grad phi + grad phi^T) / 2``."""
    g1, g2 = gradient(phi.c1), gradient(phi.c2)
    grid = phi.grid
    return SymTensorField(g1.c1, g2.c2, Field(grid, 0.5 * (g1.c2.values + g2.c1.values)))


def div_vector(phi: VecField) -> Field:
    return Field(phi.grid, gradient(phi.c1).c1.values + gradient(phi.c2).c2.values)


def div_tensor(omega: SymTensorField) -> VecField:
    """Row-wise divergence ``(d_i w_1i, d_i w_2i)``."""
    g11, g12, g22 = gradient(omega.c11), gradient(omega.c12), gradient(omega.c22)
    grid = omega.grid
    return VecField(
        Field(grid, g11.c1.values + g12.c2.values),
        Field(grid, g12.c1.values + g22.c2.values),
    )


def trace(omega: SymTensorField) -> Field:
    return Field(omega.grid, omega.c11.values + omega.c22.values)


# -- assembled sparse operators ------------------------------------------------


def _full_index(grid: Grid, j, i):
    return j * (grid.nx + 2) + i


def interior_to_full(grid: Grid) -> sp.csr_matrix:
    """Injection of interior unknowns into the full node array (ring = 0)."""
    j, i = np.meshgrid(np.arange(1, grid.ny + 1), np.arange(1, grid.nx + 1), indexing="ij")
    rows = _full_index(grid, j, i).ravel()
    cols = np.arange(grid.n_interior)
    return sp.csr_matrix((np.ones(grid.n_interior), (rows, cols)), shape=(grid.n_nodes, grid.n_interior))


def lap_from_full(grid: Grid) -> sp.csr_matrix:
    """5-point Laplacian at interior nodes reading full node values."""
    hx2, hy2 = grid.hx**2, grid.hy**2
    j, i = np.meshgrid(np.arange(1, grid.ny + 1), np.arange(1, grid.nx + 1), indexing="ij")
    row = np.arange(grid.n_interior)
    j, i = j.ravel(), i.ravel()
    rows, cols, vals = [], [], []
    for dj, di, w in ((0, 0, -2 / hx2 - 2 / hy2), (0, 1, 1 / hx2), (0, -1, 1 / hx2), (1, 0, 1 / hy2), (-1, 0, 1 / hy2)):
        rows.append(row)
        cols.append(_full_index(grid, j + dj, i + di))
        vals.append(np.full(row.size, w))
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(grid.n_interior, grid.n_nodes),
    )


def lap_matrix(grid: Grid) -> sp.csr_matrix:
    """Interior Laplacian for fields vanishing on the boundary."""
    return (lap_from_full(grid) @ interior_to_full(grid)).tocsr()


def lap_ext_matrix(grid: Grid, kind: BCKind) -> sp.csr_matrix:
    """Laplacian on interior and boundary nodes of a field vanishing on the boundary.

    Boundary rows follow the homogeneous ghost rule of ``kind``: clamped gives
    ``2 w_1 / h^2`` from the normal neighbour, simply supported gives zero.
    """
    kind = BCKind(kind)
    full = interior_to_full(grid) @ lap_matrix(grid)
    if kind is BCKind.CLAMPED:
        rows, cols, vals = [], [], []
        nx, ny = grid.nx, grid.ny
        jj = np.arange(1, ny + 1)
        ii = np.arange(1, nx + 1)
        # left / right edges: normal neighbour along x1
        for edge_i, nb_i in ((0, 1), (nx + 1, nx)):
            rows.append(_full_index(grid, jj, edge_i))
            cols.append((jj - 1) * nx + (nb_i - 1))
            vals.append(np.full(ny, 2 / grid.hx**2))
        for edge_j, nb_j in ((0, 1), (ny + 1, ny)):
            rows.append(_full_index(grid, edge_j, ii))
            cols.append((nb_j - 1) * nx + (ii - 1))
            vals.append(np.full(nx, 2 / grid.hy**2))
        full = full + sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(grid.n_nodes, grid.n_interior),
        )
    return full.tocsr()


def biharmonic_matrix(grid: Grid, kind: BCKind) -> sp.csr_matrix:
    """13-point biharmonic on interior unknowns (homogeneous boundary data)."""
    return (lap_from_full(grid) @ lap_ext_matrix(grid, kind)).tocsr()


def trapezoid_weights(grid: Grid) -> np.ndarray:
    """Nodal trapezoid weights on the full node array (flattened)."""
    wx = np.full(grid.nx + 2, grid.hx)
    wx[[0, -1]] *= 0.5
    wy = np.full(grid.ny + 2, grid.hy)
    wy[[0, -1]] *= 0.5
    return np.outer(wy, wx).ravel()


def second_difference_matrices(grid: Grid) -> tuple[sp.csr_matrix, sp.csr_matrix, sp.csr_matrix]:
    """``d11, d22, d12`` on interior unknowns of fields vanishing on the boundary."""
    hx, hy = grid.hx, grid.hy
    j, i = np.meshgrid(np.arange(1, grid.ny + 1), np.arange(1, grid.nx + 1), indexing="ij")
    j, i = j.ravel(), i.ravel()
    row = np.arange(grid.n_interior)
    E = interior_to_full(grid)

    def build(stencil):
        rows, cols, vals = [], [], []
        for dj, di, w in stencil:
            rows.append(row)
            cols.append(_full_index(grid, j + dj, i + di))
            vals.append(np.full(row.size, w))
        M = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(grid.n_interior, grid.n_nodes),
        )
        return (M @ E).tocsr()

    d11 = build([(0, 1, 1 / hx**2), (0, 0, -2 / hx**2), (0, -1, 1 / hx**2)])
    d22 = build([(1, 0, 1 / hy**2), (0, 0, -2 / hy**2), (-1, 0, 1 / hy**2)])
    c = 1 / (4 * hx * hy)
    d12 = build([(1, 1, c), (1, -1, -c), (-1, 1, -c), (-1, -1, c)])
    return d11, d22, d12


@dataclass(frozen=True)
class VertexQuadrature:
    """Cell-corner quadrature with edge-difference gradients.

    Every cell contributes its four corners with weight ``hx * hy / 4``.  At a
    corner, ``d1`` is the difference along the cell's x1-edge through that
    corner and ``d2`` along its x2-edge.  Operators map full node arrays to
    quadrature values; ``G^T W G`` reproduces the 5-point Laplacian and
    ``V^T W 1`` the nodal trapezoid weights.
    """

    G1: sp.csr_matrix
    G2: sp.csr_matrix
    V: sp.csr_matrix
    weights: np.ndarray

    @property
    def n_points(self) -> int:
        return self.weights.size


def vertex_quadrature(grid: Grid) -> VertexQuadrature:
    nx, ny, hx, hy = grid.nx, grid.ny, grid.hx, grid.hy
    cj, ci = np.meshgrid(np.arange(ny + 1), np.arange(nx + 1), indexing="ij")
    cj, ci = cj.ravel(), ci.ravel()
    nc = cj.size
    rows1, cols1, vals1 = [], [], []
    rows2, cols2, vals2 = [], [], []
    rowsv, colsv = [], []
    q = 0
    for a in (0, 1):
        for b in (0, 1):
            r = q * nc + np.arange(nc)
            rows1 += [r, r]
            cols1 += [_full_index(grid, cj + b, ci + 1), _full_index(grid, cj + b, ci)]
            vals1 += [np.full(nc, 1 / hx), np.full(nc, -1 / hx)]
            rows2 += [r, r]
            cols2 += [_full_index(grid, cj + 1, ci + a), _full_index(grid, cj, ci + a)]
            vals2 += [np.full(nc, 1 / hy), np.full(nc, -1 / hy)]
            rowsv.append(r)
            colsv.append(_full_index(grid, cj + b, ci + a))
            q += 1
    nq = 4 * nc
    shape = (nq, grid.n_nodes)
    G1 = sp.csr_matrix((np.concatenate(vals1), (np.concatenate(rows1), np.concatenate(cols1))), shape=shape)
    G2 = sp.csr_matrix((np.concatenate(vals2), (np.concatenate(rows2), np.concatenate(cols2))), shape=shape)
    V = sp.csr_matrix((np.ones(nq), (np.concatenate(rowsv), np.concatenate(colsv))), shape=shape)
    return VertexQuadrature(G1, G2, V, np.full(nq, hx * hy / 4))


def write_field_csv(path, field: Field) -> None:
    """Interior values, ``ny`` rows by ``nx`` columns, 17 significant digits."""
    np.savetxt(path, field.interior, delimiter=",", fmt="%.17g")


def read_field_csv(path, grid: Grid, ring: float = 0.0) -> Field:
    vals = np.loadtxt(path, delimiter=",", ndmin=2)
    return Field(grid, grid.embed(vals.ravel(), ring))
