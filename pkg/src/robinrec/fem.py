"""P1 finite elements for the mixed Laplace problem with a Robin part.

Solves, on the tagged meshes of :mod:`robinrec.geometry`,

* the background problem: harmonic potential with prescribed flux on the
  accessible part, homogeneous Robin condition on the inaccessible part and
  grounded Dirichlet part,
* the same problem on a deformed mesh (the perturbed domain), and
* the linearized sensitivity problem, whose right-hand side lives on the
  Robin part and is driven by a normal-displacement field.

All boundary integrals use exact integration of products of linear traces;
midpoint sampling is used where a factor exceeds P1 exactness.  The left-hand
operator (stiffness plus Robin boundary mass, Dirichlet-reduced) is factorized
once per mesh and reused across right-hand sides.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, TextIO

import numpy as np
from scipy.sparse import coo_matrix, csc_matrix, csr_matrix
from scipy.sparse.linalg import splu

from .geometry import (
    BoundaryChain,
    DegenerateMeshError,
    DomainSpec,
    Mesh,
    ThetaField,
    curvature,
)


class FemError(RuntimeError):
    """Assembly or solve failure."""


@dataclass(frozen=True)
class NodalField:
    """One value per mesh vertex."""

    values: np.ndarray
    mesh: Mesh

    def trace(self, tag: str) -> "BoundaryField":
        chain = self.mesh.chain(tag)
        return BoundaryField(
            tag=tag,
            values=self.values[chain.vertices].copy(),
            arclength=chain.arclength,
            mesh_name=self.mesh.kind.value,
        )

    def to_csv(self, target: str | TextIO, name: str = "nodal") -> None:
        _write_csv(target, f"# {name} mesh={self.mesh.kind.value} nodes={len(self.values)}", self.values)


@dataclass(frozen=True)
class BoundaryField:
    """Values at the vertices of one tagged chain, ordered by arclength."""

    tag: str
    values: np.ndarray
    arclength: np.ndarray
    mesh_name: str = ""

    def __post_init__(self) -> None:
        if len(self.values) != len(self.arclength):
            raise FemError("boundary field length does not match its chain")

    def to_csv(self, target: str | TextIO, name: str = "trace") -> None:
        _write_csv(
            target,
            f"# {name} mesh={self.mesh_name} tag={self.tag} nodes={len(self.values)}",
            self.values,
        )


def _write_csv(target: str | TextIO, header: str, values: np.ndarray) -> None:
    own = isinstance(target, str)
    fh = open(target, "w") if own else target
    try:
        fh.write(header + "\n")
        for v in values:
            fh.write(f"{v:.17g}\n")
    finally:
        if own:
            fh.close()


def assemble_interior(mesh: Mesh) -> csr_matrix:
    """P1 stiffness matrix of the Laplacian.

    Symmetric and positive semidefinite; constants span the kernel before the
    Dirichlet reduction.  Exact for piecewise-linear fields.
    """
    tri = mesh.triangles
    p = mesh.vertices[tri]  # (nt, 3, 2)
    x = p[:, :, 0]
    y = p[:, :, 1]
    beta = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    gamma_ = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    area2 = x[:, 0] * beta[:, 0] + x[:, 1] * beta[:, 1] + x[:, 2] * beta[:, 2]
    if np.any(area2 <= 0.0):
        raise DegenerateMeshError("stiffness assembly hit a non-positive triangle area")
    coef = 1.0 / (2.0 * area2)
    local = (
        beta[:, :, None] * beta[:, None, :] + gamma_[:, :, None] * gamma_[:, None, :]
    ) * coef[:, None, None]
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    n = mesh.num_vertices
    return coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def chain_mass_matrix(chain: BoundaryChain, size: int | None = None) -> csr_matrix:
    """Boundary mass matrix of a chain (exact for products of linear traces).

    With ``size`` given, entries are placed at the global vertex indices of a
    mesh with that many vertices; otherwise the matrix is chain-local.
    """
    h = chain.edge_lengths()
    if size is None:
        idx = np.arange(chain.size)
        n = chain.size
    else:
        idx = chain.vertices
        n = size
    p = idx[:-1]
    q = idx[1:]
    rows = np.concatenate([p, q, p, q])
    cols = np.concatenate([p, q, q, p])
    data = np.concatenate([h / 3.0, h / 3.0, h / 6.0, h / 6.0])
    return coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()


def assemble_robin(mesh: Mesh, gamma: float) -> csr_matrix:
    """Robin boundary mass on Gamma_I, scaled by the impedance coefficient."""
    if gamma < 0.0:
        raise FemError(f"impedance coefficient must be nonnegative, got {gamma}")
    return gamma * chain_mass_matrix(mesh.gamma_I, size=mesh.num_vertices)


def assemble_flux_load(mesh: Mesh, flux: Callable) -> np.ndarray:
    """Load vector of the prescribed flux on Gamma_A.

    The flux is sampled at the chain vertices and integrated against the P1
    trace basis exactly (edgewise, trapezoid-consistent).
    """
    chain = mesh.gamma_A
    coords = mesh.vertices[chain.vertices]
    phi = np.broadcast_to(
        np.asarray(flux(coords[:, 0], coords[:, 1]), dtype=float), (chain.size,)
    )
    h = chain.edge_lengths()
    load = np.zeros(mesh.num_vertices)
    np.add.at(load, chain.vertices[:-1], h / 6.0 * (2.0 * phi[:-1] + phi[1:]))
    np.add.at(load, chain.vertices[1:], h / 6.0 * (phi[:-1] + 2.0 * phi[1:]))
    return load


def boundary_l2_product(a: BoundaryField, b: BoundaryField) -> float:
    """L2 inner product of two fields living on the same chain."""
    if a.tag != b.tag or len(a.values) != len(b.values):
        raise FemError("boundary fields live on different chains")
    h = np.diff(a.arclength)
    u0, u1 = a.values[:-1], a.values[1:]
    v0, v1 = b.values[:-1], b.values[1:]
    return float(np.sum(h / 6.0 * (2.0 * u0 * v0 + u0 * v1 + u1 * v0 + 2.0 * u1 * v1)))


class RobinOperator:
    """Factorized left-hand operator: stiffness + Robin mass, Gamma_D-reduced.

    Immutable once built; one factorization serves any number of right-hand
    sides (all sensitivity solves of an inversion reuse the same instance).
    """

    def __init__(self, mesh: Mesh, gamma: float):
        self.mesh = mesh
        self.gamma = gamma
        self.matrix = (assemble_interior(mesh) + assemble_robin(mesh, gamma)).tocsr()
        fixed = mesh.dirichlet_vertices()
        free = np.setdiff1d(np.arange(mesh.num_vertices), fixed)
        if free.size == mesh.num_vertices:
            raise FemError("mesh has no grounded part; the operator is singular")
        self.free = free
        reduced = csc_matrix(self.matrix[np.ix_(free, free)])
        try:
            self._lu = splu(reduced)
        except RuntimeError as exc:  # pragma: no cover - cannot occur for gamma > 0
            raise FemError(f"factorization failed: {exc}") from exc

    def solve(self, load: np.ndarray) -> NodalField:
        if load.shape != (self.mesh.num_vertices,):
            raise FemError("load vector does not match the mesh")
        values = np.zeros(self.mesh.num_vertices)
        values[self.free] = self._lu.solve(load[self.free])
        return NodalField(values=values, mesh=self.mesh)

    def residual(self, field: NodalField, load: np.ndarray) -> float:
        """Relative residual over the free (non-Dirichlet) rows."""
        r = (load - self.matrix @ field.values)[self.free]
        scale = np.linalg.norm(load[self.free])
        return float(np.linalg.norm(r) / scale) if scale > 0 else float(np.linalg.norm(r))


def solve_mixed_bvp(
    mesh: Mesh,
    gamma: float,
    flux: Callable,
    operator: RobinOperator | None = None,
) -> NodalField:
    """Solve the mixed problem: prescribed flux on Gamma_A, Robin on Gamma_I,
    grounded on Gamma_D.  Direct sparse factorization; exact zeros on Gamma_D.
    """
    op = operator if operator is not None else RobinOperator(mesh, gamma)
    return op.solve(assemble_flux_load(mesh, flux))


def tangential_derivative(field: NodalField, tag: str) -> BoundaryField:
    """Arclength derivative of a boundary trace.

    Piecewise constant per edge, reported at vertices by averaging the two
    adjacent edge slopes (one-sided at the chain endpoints).  Exact for traces
    that are linear in arclength.
    """
    chain = field.mesh.chain(tag)
    vals = field.values[chain.vertices]
    slopes = np.diff(vals) / chain.edge_lengths()
    out = np.empty(chain.size)
    out[0] = slopes[0]
    out[-1] = slopes[-1]
    out[1:-1] = 0.5 * (slopes[:-1] + slopes[1:])
    return BoundaryField(tag=tag, values=out, arclength=chain.arclength)


def sensitivity_load(
    mesh: Mesh, spec: DomainSpec, u: NodalField, theta: ThetaField
) -> np.ndarray:
    """Right-hand side of the sensitivity problem, assembled on Gamma_I.

    Two edgewise terms: the reaction part ``gamma * theta * (gamma + c*H) * u``
    integrated exactly against P1 traces with midpoint-sampled theta, and the
    tangential part coupling theta with the arclength derivatives of the
    background trace and of the test functions.
    """
    chain = mesh.gamma_I
    if theta.values.shape != (chain.size,):
        raise FemError("theta samples do not match the Gamma_I chain")
    gamma = spec.gamma
    h = chain.edge_lengths()
    s_mid = 0.5 * (chain.arclength[:-1] + chain.arclength[1:])
    h_curv = curvature(spec, s_mid)
    factor = gamma * (gamma + spec.curvature_multiplier * h_curv)

    u_chain = u.values[chain.vertices]
    theta_mid = 0.5 * (theta.values[:-1] + theta.values[1:])
    du_ds = np.diff(u_chain) / h

    load = np.zeros(mesh.num_vertices)
    # reaction term: exact edge integrals of u * hat, scaled per edge
    w = factor * theta_mid * h / 6.0
    np.add.at(load, chain.vertices[:-1], w * (2.0 * u_chain[:-1] + u_chain[1:]))
    np.add.at(load, chain.vertices[1:], w * (u_chain[:-1] + 2.0 * u_chain[1:]))
    # tangential term: -int theta * u_s * v_s, with v_s = -1/h and +1/h
    np.add.at(load, chain.vertices[:-1], theta_mid * du_ds)
    np.add.at(load, chain.vertices[1:], -theta_mid * du_ds)
    return load


def solve_sensitivity(
    mesh: Mesh,
    spec: DomainSpec,
    u: NodalField,
    theta: ThetaField,
    operator: RobinOperator | None = None,
) -> NodalField:
    """Solve the linearized perturbation problem for a displacement field.

    ``u`` must be the background solution on the same mesh.  The left-hand
    operator is the same as in :func:`solve_mixed_bvp`; pass ``operator`` to
    reuse its factorization.
    """
    op = operator if operator is not None else RobinOperator(mesh, spec.gamma)
    return op.solve(sensitivity_load(mesh, spec, u, theta))
