"""Computational domains, tagged triangular meshes, and boundary deformation.

Two structured domains are supported: the rectangle (0, pi) x (0, 1) and the
half annulus 1 < r < 2, 0 < angle < pi.  The boundary of each mesh is split
into three tagged parts:

* ``A`` -- the accessible part, where the current density is prescribed and
  the voltage is measured (bottom edge / outer arc),
* ``I`` -- the inaccessible part carrying the Robin condition, where the
  unknown perturbation lives (top edge / inner arc),
* ``D`` -- the grounded part with a homogeneous Dirichlet condition
  (the two remaining segments).

The ``A`` and ``I`` parts are parameterized by cumulative arclength along
ordered vertex chains, which is what every boundary quantity (fluxes, traces,
perturbation profiles) is expressed in.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass
from typing import Callable, TextIO

import numpy as np

TAG_ACCESSIBLE = "A"
TAG_INACCESSIBLE = "I"
TAG_GROUNDED = "D"

_THETA_ENDPOINT_TOL = 1e-9


class GeometryError(ValueError):
    """Invalid geometric input."""


class DegenerateMeshError(GeometryError):
    """A triangle with non-positive area was produced."""


class DomainKind(enum.Enum):
    RECTANGLE = "rectangle"
    HALF_ANNULUS = "half_annulus"


@dataclass(frozen=True)
class DomainSpec:
    """One instance of the mixed boundary value problem.

    Parameters
    ----------
    kind:
        Which of the two supported domains.
    gamma:
        Impedance coefficient of the Robin condition, strictly positive.
    flux:
        Current density on the accessible boundary; a callable ``flux(x, y)``
        accepting coordinate arrays. Must be nonnegative pointwise.
    curvature_multiplier:
        Factor applied to the curvature term in the boundary source of the
        sensitivity problem.  The weak formulation used here gives 1; the
        value 2 selects an alternative convention, and the two coincide on
        the rectangle, where the curvature vanishes.
    """

    kind: DomainKind
    gamma: float
    flux: Callable[[np.ndarray, np.ndarray], np.ndarray]
    curvature_multiplier: float = 1.0

    def __post_init__(self) -> None:
        if self.gamma <= 0.0:
            raise GeometryError(f"gamma must be positive, got {self.gamma}")
        # a-priori assumption 2*H + gamma > 0 on the Robin part
        h = 0.0 if self.kind is DomainKind.RECTANGLE else 1.0
        if 2.0 * h + self.gamma <= 0.0:
            raise GeometryError(
                f"2*H + gamma = {2.0 * h + self.gamma} must be positive"
            )


@dataclass(frozen=True)
class BoundaryChain:
    """Ordered vertex chain along one tagged boundary part.

    ``arclength`` holds the cumulative chord length along the chain,
    starting at zero; it is strictly increasing.
    """

    vertices: np.ndarray  # (m,) vertex indices, ordered along the part
    arclength: np.ndarray  # (m,) cumulative arclength, arclength[0] == 0

    @property
    def length(self) -> float:
        return float(self.arclength[-1])

    @property
    def size(self) -> int:
        return len(self.vertices)

    def edge_lengths(self) -> np.ndarray:
        return np.diff(self.arclength)


@dataclass(frozen=True)
class Mesh:
    """Triangulated structured mesh with tagged boundary.

    ``grid_u`` is the structured coordinate running along the A and I chains
    (x for the rectangle, polar angle for the half annulus); ``grid_v`` is
    the transverse coordinate (y, respectively radius).  Vertex ``(iu, iv)``
    has flat index ``iv * len(grid_u) + iu``.
    """

    kind: DomainKind
    vertices: np.ndarray  # (nv, 2) float
    triangles: np.ndarray  # (nt, 3) int, counterclockwise
    boundary_edges: np.ndarray  # (ne, 2) int
    edge_tags: np.ndarray  # (ne,) unicode, one of A/I/D
    gamma_A: BoundaryChain
    gamma_I: BoundaryChain
    grid_u: np.ndarray
    grid_v: np.ndarray

    def chain(self, tag: str) -> BoundaryChain:
        if tag == TAG_ACCESSIBLE:
            return self.gamma_A
        if tag == TAG_INACCESSIBLE:
            return self.gamma_I
        raise GeometryError(f"no parameterized chain for tag {tag!r}")

    def dirichlet_vertices(self) -> np.ndarray:
        """Indices of vertices lying on the grounded part (corners included)."""
        edges = self.boundary_edges[self.edge_tags == TAG_GROUNDED]
        return np.unique(edges)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)


@dataclass(frozen=True)
class ThetaField:
    """Normal displacement sampled at the Gamma_I chain nodes.

    The samples are the scalar component of the boundary perturbation along
    the outward normal, as a function of the chain arclength.  A valid field
    vanishes at both chain endpoints (they sit on the grounded part).
    """

    values: np.ndarray
    arclength: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        arclength = np.asarray(self.arclength, dtype=float)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "arclength", arclength)
        if values.shape != arclength.shape or values.ndim != 1:
            raise GeometryError("theta samples and arclength grid must match")
        if values.size < 2:
            raise GeometryError("theta field needs at least two nodes")
        if np.any(np.diff(arclength) <= 0.0):
            raise GeometryError("arclength must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise GeometryError("theta samples must be finite")
        tol = _THETA_ENDPOINT_TOL * max(1.0, float(np.max(np.abs(values))))
        if abs(values[0]) > tol or abs(values[-1]) > tol:
            raise GeometryError(
                "theta must vanish at the chain endpoints, got "
                f"{values[0]:.3e} and {values[-1]:.3e}"
            )

    def derivative(self) -> np.ndarray:
        """Finite-difference derivative along arclength (averaged edge slopes)."""
        return _chain_derivative(self.values, self.arclength)


def _chain_derivative(values: np.ndarray, s: np.ndarray) -> np.ndarray:
    slopes = np.diff(values) / np.diff(s)
    out = np.empty_like(values)
    out[0] = slopes[0]
    out[-1] = slopes[-1]
    out[1:-1] = 0.5 * (slopes[:-1] + slopes[1:])
    return out


def _signed_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = vertices[triangles]
    return 0.5 * (
        (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
        - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1])
    )


def _structured_triangles(nu: int, nv: int) -> np.ndarray:
    """Two triangles per cell with alternating (criss-cross) diagonals."""
    iu, iv = np.meshgrid(np.arange(nu - 1), np.arange(nv - 1), indexing="ij")
    iu = iu.ravel()
    iv = iv.ravel()
    a = iv * nu + iu
    b = a + 1
    c = b + nu
    d = a + nu
    even = (iu + iv) % 2 == 0
    t1 = np.where(even[:, None], np.column_stack([a, b, c]), np.column_stack([a, b, d]))
    t2 = np.where(even[:, None], np.column_stack([a, c, d]), np.column_stack([b, c, d]))
    return np.vstack([t1, t2]).astype(np.int64)


def _orient_ccw(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    areas = _signed_areas(vertices, triangles)
    flipped = triangles.copy()
    neg = areas < 0.0
    flipped[neg] = flipped[neg][:, [0, 2, 1]]
    return flipped


def _chain(vertices: np.ndarray, idx: np.ndarray) -> BoundaryChain:
    coords = vertices[idx]
    seg = np.linalg.norm(np.diff(coords, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    return BoundaryChain(vertices=idx, arclength=s)


def _freeze(*arrays: np.ndarray) -> None:
    for a in arrays:
        a.setflags(write=False)


def _make_mesh(kind, vertices, triangles, edges, tags, a_idx, i_idx, grid_u, grid_v) -> Mesh:
    triangles = _orient_ccw(vertices, triangles)
    areas = _signed_areas(vertices, triangles)
    if np.any(areas <= 0.0):
        raise DegenerateMeshError(
            f"minimum signed triangle area {areas.min():.3e} is not positive"
        )
    mesh = Mesh(
        kind=kind,
        vertices=vertices,
        triangles=triangles,
        boundary_edges=edges,
        edge_tags=tags,
        gamma_A=_chain(vertices, a_idx),
        gamma_I=_chain(vertices, i_idx),
        grid_u=grid_u,
        grid_v=grid_v,
    )
    _freeze(vertices, triangles, edges, mesh.gamma_A.arclength, mesh.gamma_I.arclength)
    return mesh


def build_rectangle_mesh(nx: int, ny: int) -> Mesh:
    """Structured crossed-triangle mesh of the rectangle (0, pi) x (0, 1).

    The bottom edge is tagged A, the top edge I, and the two vertical sides
    D.  There are ``(nx+1)*(ny+1)`` vertices and ``2*nx*ny`` triangles.
    """
    if nx < 2 or ny < 2:
        raise GeometryError(f"need nx >= 2 and ny >= 2, got ({nx}, {ny})")
    x = np.linspace(0.0, np.pi, nx + 1)
    y = np.linspace(0.0, 1.0, ny + 1)
    xx, yy = np.meshgrid(x, y)  # rows iterate y, columns x
    vertices = np.column_stack([xx.ravel(), yy.ravel()])
    triangles = _structured_triangles(nx + 1, ny + 1)

    bottom = np.arange(nx + 1)
    top = ny * (nx + 1) + np.arange(nx + 1)
    left = np.arange(ny + 1) * (nx + 1)
    right = left + nx

    edges = []
    tags = []
    for row, tag in ((bottom, TAG_ACCESSIBLE), (top, TAG_INACCESSIBLE)):
        edges.append(np.column_stack([row[:-1], row[1:]]))
        tags.append(np.full(nx, tag))
    for col in (left, right):
        edges.append(np.column_stack([col[:-1], col[1:]]))
        tags.append(np.full(ny, TAG_GROUNDED))
    return _make_mesh(
        DomainKind.RECTANGLE,
        vertices,
        triangles,
        np.vstack(edges),
        np.concatenate(tags),
        bottom,
        top,
        x,
        y,
    )


def build_half_annulus_mesh(nr: int, nt: int) -> Mesh:
    """Polar-structured mesh of the half annulus 1 < r < 2, 0 < angle < pi.

    The outer arc is tagged A, the inner arc I, and the two segments on the
    x axis D.  Chains run from angle 0 to angle pi.
    """
    if nr < 2 or nt < 4:
        raise GeometryError(f"need nr >= 2 and nt >= 4, got ({nr}, {nt})")
    t = np.linspace(0.0, np.pi, nt + 1)
    r = np.linspace(1.0, 2.0, nr + 1)
    rr = np.repeat(r, nt + 1)
    tt = np.tile(t, nr + 1)
    vertices = np.column_stack([rr * np.cos(tt), rr * np.sin(tt)])
    triangles = _structured_triangles(nt + 1, nr + 1)

    inner = np.arange(nt + 1)
    outer = nr * (nt + 1) + np.arange(nt + 1)
    side0 = np.arange(nr + 1) * (nt + 1)  # angle 0, x in [1, 2]
    side1 = side0 + nt  # angle pi, x in [-2, -1]

    edges = []
    tags = []
    for row, tag in ((outer, TAG_ACCESSIBLE), (inner, TAG_INACCESSIBLE)):
        edges.append(np.column_stack([row[:-1], row[1:]]))
        tags.append(np.full(nt, tag))
    for col in (side0, side1):
        edges.append(np.column_stack([col[:-1], col[1:]]))
        tags.append(np.full(nr, TAG_GROUNDED))
    return _make_mesh(
        DomainKind.HALF_ANNULUS,
        vertices,
        triangles,
        np.vstack(edges),
        np.concatenate(tags),
        outer,
        inner,
        t,
        r,
    )


def curvature(spec: DomainSpec, s) -> np.ndarray:
    """Curvature of the Robin boundary part at arclength ``s``.

    Zero for the flat top of the rectangle; +1 for the unit inner semicircle
    of the half annulus (the sign that keeps 2*H + gamma positive for every
    impedance tested here).
    """
    s = np.asarray(s, dtype=float)
    if spec.kind is DomainKind.RECTANGLE:
        return np.zeros_like(s)
    return np.ones_like(s)


def gamma_I_normals(mesh: Mesh) -> np.ndarray:
    """Outward unit normals of the domain at the Gamma_I chain nodes."""
    if mesh.kind is DomainKind.RECTANGLE:
        normals = np.zeros((mesh.gamma_I.size, 2))
        normals[:, 1] = 1.0
        return normals
    t = mesh.grid_u
    return -np.column_stack([np.cos(t), np.sin(t)])


def deform_mesh(mesh: Mesh, theta: ThetaField) -> Mesh:
    """Realize the perturbed domain for a given normal displacement.

    Gamma_I chain nodes move along the outward normal by the sampled values;
    interior vertices follow with a blend linear in the transverse grid
    coordinate, decaying to zero at Gamma_A.  Tags and connectivity are
    preserved.  Raises :class:`DegenerateMeshError` if any displaced triangle
    loses positive area.
    """
    if theta.values.shape != (mesh.gamma_I.size,):
        raise GeometryError(
            f"theta has {theta.values.size} samples, chain has {mesh.gamma_I.size}"
        )
    if not np.allclose(theta.arclength, mesh.gamma_I.arclength, atol=1e-9, rtol=0.0):
        raise GeometryError("theta is sampled on a different chain parameterization")
    if mesh.kind is DomainKind.RECTANGLE:
        # Gamma_I at grid_v[-1], Gamma_A at grid_v[0]
        blend = (mesh.grid_v - mesh.grid_v[0]) / (mesh.grid_v[-1] - mesh.grid_v[0])
    else:
        # Gamma_I at grid_v[0] (r = 1), Gamma_A at grid_v[-1] (r = 2)
        blend = (mesh.grid_v - mesh.grid_v[-1]) / (mesh.grid_v[0] - mesh.grid_v[-1])
    normals = gamma_I_normals(mesh)
    disp = blend[:, None, None] * (theta.values[None, :, None] * normals[None, :, :])
    new_vertices = mesh.vertices + disp.reshape(-1, 2)

    new_triangles = mesh.triangles.copy()
    areas = _signed_areas(new_vertices, new_triangles)
    if np.any(areas <= 0.0):
        raise DegenerateMeshError(
            "deformation collapses the mesh: minimum signed area "
            f"{areas.min():.3e}"
        )
    out = Mesh(
        kind=mesh.kind,
        vertices=new_vertices,
        triangles=new_triangles,
        boundary_edges=mesh.boundary_edges,
        edge_tags=mesh.edge_tags,
        gamma_A=_chain(new_vertices, mesh.gamma_A.vertices),
        gamma_I=_chain(new_vertices, mesh.gamma_I.vertices),
        grid_u=mesh.grid_u,
        grid_v=mesh.grid_v,
    )
    _freeze(new_vertices, new_triangles, out.gamma_A.arclength, out.gamma_I.arclength)
    return out


def mesh_fingerprint(mesh: Mesh) -> str:
    """Deterministic content hash of vertex coordinates, triangles, and tags."""
    digest = hashlib.sha256()
    digest.update(mesh.kind.value.encode())
    digest.update(np.ascontiguousarray(mesh.vertices).tobytes())
    digest.update(np.ascontiguousarray(mesh.triangles).tobytes())
    digest.update("".join(mesh.edge_tags.tolist()).encode())
    return digest.hexdigest()


def write_mesh_listing(mesh: Mesh, target: str | TextIO) -> None:
    """Dump the mesh as plain text: vertices, triangles, tagged edges.

    One vertex per line ("x y"), one triangle per line ("i j k"), one
    boundary edge per line ("i j TAG").
    """
    own = isinstance(target, str)
    fh = open(target, "w") if own else target
    try:
        for x, y in mesh.vertices:
            fh.write(f"{x:.17g} {y:.17g}\n")
        for i, j, k in mesh.triangles:
            fh.write(f"{i} {j} {k}\n")
        for (i, j), tag in zip(mesh.boundary_edges, mesh.edge_tags):
            fh.write(f"{i} {j} {tag}\n")
    finally:
        if own:
            fh.close()
