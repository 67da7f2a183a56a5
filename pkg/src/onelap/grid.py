"""Uniform staggered grids on boxes in 1D and 2D.

Node fields are arrays of shape ``grid.shape``. Face fields are flat vectors
holding the faces of axis 0 first, then axis 1, each block raveled in C order.
Faces sit between adjacent nodes; one extra boundary face per grid line on
each side connects the outermost node to a ghost node carrying the value 0,
so the Dirichlet trace shows up as a boundary-face jump.

Magnitudes of face fields are evaluated on *cells*: in 1D a cell is a face;
in 2D the cells are the dual squares around every lattice point of the
ghost-extended node lattice, and each face belongs to exactly two of them
with weight 1/2.  The cell magnitude is sqrt(sum_f C[c, f] * z_f**2), which is
the Euclidean length of a constant vector field in the interior and makes

    |<z, grad u>| <= max_c |z|_c * TV(u)

hold exactly by Cauchy-Schwarz.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class Grid:
    extents: tuple[tuple[float, float], ...]
    n: tuple[int, ...]
    h: tuple[float, ...] = field(init=False)

    def __post_init__(self):
        if len(self.extents) != len(self.n) or len(self.n) not in (1, 2):
            raise ValueError("grid must be 1D or 2D with one extent per axis")
        h = []
        for (a, b), m in zip(self.extents, self.n):
            if not (np.isfinite(a) and np.isfinite(b)) or not a < b:
                raise ValueError(f"degenerate extents [{a}, {b}]")
            if m < 3:
                raise ValueError(f"need at least 3 nodes per axis, got {m}")
            h.append((b - a) / (m - 1))
        object.__setattr__(self, "h", tuple(h))

    def __hash__(self):
        return hash((self.extents, self.n))

    # sizes ---------------------------------------------------------------

    @property
    def dim(self) -> int:
        return len(self.n)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.n)

    @property
    def node_count(self) -> int:
        return int(np.prod(self.n))

    @property
    def cell_volume(self) -> float:
        """Weight h^d shared by node and face inner products."""
        return float(np.prod(self.h))

    @property
    def volume(self) -> float:
        return float(np.prod([b - a for a, b in self.extents]))

    @property
    def perimeter(self) -> float:
        if self.dim == 1:
            return 2.0
        (a0, b0), (a1, b1) = self.extents
        return 2.0 * ((b0 - a0) + (b1 - a1))

    def face_shape(self, axis: int) -> tuple[int, ...]:
        s = list(self.n)
        s[axis] += 1
        return tuple(s)

    @cached_property
    def face_offsets(self) -> tuple[int, ...]:
        sizes = [int(np.prod(self.face_shape(k))) for k in range(self.dim)]
        return tuple(np.concatenate([[0], np.cumsum(sizes)]).astype(int))

    @property
    def face_count(self) -> int:
        return self.face_offsets[-1]

    def split_faces(self, z: np.ndarray) -> list[np.ndarray]:
        """Per-axis views of a flat face field, shaped ``face_shape(axis)``."""
        z = np.asarray(z)
        if z.shape != (self.face_count,):
            raise ValueError(f"face field has shape {z.shape}, expected ({self.face_count},)")
        o = self.face_offsets
        return [z[o[k]:o[k + 1]].reshape(self.face_shape(k)) for k in range(self.dim)]

    def join_faces(self, parts) -> np.ndarray:
        return np.concatenate([np.asarray(p, dtype=float).ravel() for p in parts])

    # coordinates ---------------------------------------------------------

    def axis_coords(self, axis: int) -> np.ndarray:
        a, b = self.extents[axis]
        return np.linspace(a, b, self.n[axis])

    def node_coords(self) -> list[np.ndarray]:
        """Meshgrid (ij indexing) of node coordinates, one array per axis."""
        return np.meshgrid(*[self.axis_coords(k) for k in range(self.dim)], indexing="ij")

    def face_axis_coords(self, axis: int) -> np.ndarray:
        """Positions of the faces along ``axis``; boundary faces sit on the boundary."""
        a, b = self.extents[axis]
        x = a + (np.arange(self.n[axis] + 1) - 0.5) * self.h[axis]
        x[0], x[-1] = a, b
        return x

    def face_coords(self, axis: int) -> list[np.ndarray]:
        axes = [self.axis_coords(k) for k in range(self.dim)]
        axes[axis] = self.face_axis_coords(axis)
        return np.meshgrid(*axes, indexing="ij")

    # masks ---------------------------------------------------------------

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        for k in range(self.dim):
            idx = [slice(None)] * self.dim
            idx[k] = 0
            m[tuple(idx)] = True
            idx[k] = -1
            m[tuple(idx)] = True
        return m

    @cached_property
    def boundary_faces(self) -> np.ndarray:
        parts = []
        for k in range(self.dim):
            m = np.zeros(self.face_shape(k), dtype=bool)
            idx = [slice(None)] * self.dim
            idx[k] = 0
            m[tuple(idx)] = True
            idx[k] = -1
            m[tuple(idx)] = True
            parts.append(m)
        return self.join_faces(parts).astype(bool)

    @cached_property
    def outward_normal(self) -> np.ndarray:
        """+-1 on boundary faces (component along the face axis), 0 inside."""
        parts = []
        for k in range(self.dim):
            nu = np.zeros(self.face_shape(k))
            idx = [slice(None)] * self.dim
            idx[k] = 0
            nu[tuple(idx)] = -1.0
            idx[k] = -1
            nu[tuple(idx)] = 1.0
            parts.append(nu)
        return self.join_faces(parts)

    @cached_property
    def boundary_face_node(self) -> np.ndarray:
        """Flat index of the trace-side node of every face (-1 on interior faces)."""
        out = np.full(self.face_count, -1, dtype=int)
        nodes = np.arange(self.node_count).reshape(self.shape)
        for k, part in enumerate(self.split_faces(out)):
            idx = [slice(None)] * self.dim
            src = [slice(None)] * self.dim
            idx[k], src[k] = 0, 0
            part[tuple(idx)] = nodes[tuple(src)]
            idx[k], src[k] = -1, -1
            part[tuple(idx)] = nodes[tuple(src)]
        return out

    def distance_to_boundary(self) -> np.ndarray:
        """Distance of every node to the box boundary."""
        xs = self.node_coords()
        d = np.full(self.shape, np.inf)
        for k, x in enumerate(xs):
            a, b = self.extents[k]
            d = np.minimum(d, np.minimum(x - a, b - x))
        return d

    # operators -----------------------------------------------------------

    @cached_property
    def G(self) -> sp.csr_matrix:
        """Face-by-node forward difference matrix with ghost-zero boundary faces."""
        blocks = []
        for k in range(self.dim):
            m = self.n[k]
            d = sp.diags([np.ones(m), -np.ones(m)], [0, -1], shape=(m + 1, m)) / self.h[k]
            mats = [sp.identity(self.n[j]) for j in range(self.dim)]
            mats[k] = d
            blk = mats[0]
            for mat in mats[1:]:
                blk = sp.kron(blk, mat)
            blocks.append(blk)
        return sp.vstack(blocks).tocsr()

    @cached_property
    def C(self) -> sp.csr_matrix:
        """Cell-by-face averaging weights; every column sums to one."""
        if self.dim == 1:
            return sp.identity(self.face_count, format="csr")
        nx, ny = self.n
        cells = np.arange((nx + 1) * (ny + 1)).reshape(nx + 1, ny + 1)
        rows, cols = [], []
        # x-face (a, j) lies in cells (a, j) and (a, j + 1)
        fx = np.arange((nx + 1) * ny).reshape(nx + 1, ny)
        for shift in (0, 1):
            rows.append(cells[:, shift:shift + ny].ravel())
            cols.append(fx.ravel())
        # y-face (i, b) lies in cells (i, b) and (i + 1, b)
        fy = self.face_offsets[1] + np.arange(nx * (ny + 1)).reshape(nx, ny + 1)
        for shift in (0, 1):
            rows.append(cells[shift:shift + nx, :].ravel())
            cols.append(fy.ravel())
        rows, cols = np.concatenate(rows), np.concatenate(cols)
        return sp.csr_matrix((np.full(rows.size, 0.5), (rows, cols)),
                             shape=((nx + 1) * (ny + 1), self.face_count))

    def cell_magnitude(self, z: np.ndarray) -> np.ndarray:
        return np.sqrt(self.C @ (np.asarray(z) ** 2))

    @cached_property
    def cell_nodes(self) -> sp.csr_matrix:
        """Cell-by-node averaging of node values (ghost nodes count as zero)."""
        if self.dim == 1:
            m = self.n[0]
            return sp.diags([np.full(m, 0.5), np.full(m, 0.5)], [0, -1],
                            shape=(m + 1, m), format="csr")
        nx, ny = self.n
        ax = sp.diags([np.full(nx, 0.5), np.full(nx, 0.5)], [0, -1], shape=(nx + 1, nx))
        ay = sp.diags([np.full(ny, 0.5), np.full(ny, 0.5)], [0, -1], shape=(ny + 1, ny))
        return sp.kron(ax, ay).tocsr()

    @cached_property
    def face_nodes(self) -> sp.csr_matrix:
        """Face-by-node average of the two adjacent nodes (ghosts are zero)."""
        return (sp.diags(0.5 * np.array(self.h)[self._face_axis]) @ abs(self.G)).tocsr()

    @cached_property
    def _face_axis(self) -> np.ndarray:
        return np.concatenate([np.full(self.face_offsets[k + 1] - self.face_offsets[k], k)
                               for k in range(self.dim)])

    def _check_nodes(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != self.shape:
            raise ValueError(f"node field has shape {u.shape}, expected {self.shape}")
        return u

    def _check_faces(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if z.shape != (self.face_count,):
            raise ValueError(f"face field has shape {z.shape}, expected ({self.face_count},)")
        return z


def build_grid(extents, n_per_axis) -> Grid:
    """Build a uniform grid.

    ``extents`` is ``(a, b)`` or a sequence of such pairs; ``n_per_axis`` an
    int or a sequence of ints (broadcast to every axis).
    """
    ext = np.asarray(extents, dtype=float)
    if ext.ndim == 1:
        ext = ext[None, :]
    if ext.ndim != 2 or ext.shape[1] != 2:
        raise ValueError("extents must be (a, b) or [(a0, b0), (a1, b1)]")
    n = np.atleast_1d(np.asarray(n_per_axis, dtype=int))
    if n.size == 1:
        n = np.repeat(n, ext.shape[0])
    return Grid(tuple((float(a), float(b)) for a, b in ext), tuple(int(m) for m in n))


def gradient(u: np.ndarray, g: Grid) -> np.ndarray:
    u = g._check_nodes(u)
    return g.G @ u.ravel()


def divergence(z: np.ndarray, g: Grid) -> np.ndarray:
    """Negative adjoint of :func:`gradient` under the h^d-weighted inner products."""
    z = g._check_faces(z)
    return -(g.G.T @ z).reshape(g.shape)


def inner_nodes(u, v, g: Grid) -> float:
    return g.cell_volume * float(np.vdot(np.asarray(u).ravel(), np.asarray(v).ravel()))


def inner_faces(z, w, g: Grid) -> float:
    return g.cell_volume * float(np.vdot(z, w))


def boundary_flux(z: np.ndarray, u: np.ndarray, g: Grid) -> float:
    """Discrete boundary integral of u [z, nu] using trace-side node values."""
    z, u = g._check_faces(z), g._check_nodes(u)
    b = g.boundary_faces
    u_near = u.ravel()[g.boundary_face_node[b]]
    return float(np.sum(z[b] * g.outward_normal[b] * u_near * boundary_area(g)[b]))


def boundary_area(g: Grid) -> np.ndarray:
    """h^(d-1) per face: the area element of a boundary face."""
    return g.cell_volume / np.array(g.h)[g._face_axis]


def green_defect(u: np.ndarray, z: np.ndarray, g: Grid) -> float:
    """<div z, u> + <z, grad u>_interior - boundary flux; zero up to round-off."""
    gu = gradient(u, g)
    interior = ~g.boundary_faces
    lhs = inner_nodes(divergence(z, g), u, g) + g.cell_volume * float(np.dot(z[interior], gu[interior]))
    return lhs - boundary_flux(z, u, g)


def total_variation(u: np.ndarray, g: Grid, interior_only: bool = False) -> float:
    """Boundary-inclusive discrete total variation (ghost-zero convention)."""
    gu = gradient(u, g)
    if interior_only:
        gu = np.where(g.boundary_faces, 0.0, gu)
    return g.cell_volume * float(np.sum(g.cell_magnitude(gu)))


def pairing(z: np.ndarray, u: np.ndarray, g: Grid, interior_only: bool = False) -> float:
    z = g._check_faces(z)
    gu = gradient(u, g)
    if interior_only:
        gu = np.where(g.boundary_faces, 0.0, gu)
    return g.cell_volume * float(np.dot(z, gu))


def flux_inf_norm(z: np.ndarray, g: Grid) -> float:
    """max over cells of |z|; the plain max |z_f| in 1D."""
    z = g._check_faces(z)
    return float(np.max(g.cell_magnitude(z))) if z.size else 0.0


def clip_flux(z: np.ndarray, g: Grid, bound: float = 1.0) -> tuple[np.ndarray, float]:
    """Scale faces so that every cell magnitude is <= bound.

    Returns the clipped field and the largest excess removed.
    """
    z = g._check_faces(z)
    mag = g.cell_magnitude(z)
    excess = float(max(0.0, mag.max() - bound)) if mag.size else 0.0
    if excess == 0.0:
        return z.copy(), 0.0
    scale_c = bound / np.maximum(mag, bound)
    # each face takes the smallest scale among its cells
    Cc = g.C.tocsc()
    scale_f = np.minimum.reduceat(scale_c[Cc.indices], Cc.indptr[:-1])
    return z * scale_f, excess
