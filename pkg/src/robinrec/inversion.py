"""Galerkin-discretized Tikhonov inversion of the linearized boundary map.

The unknown normal displacement is expanded in a finite basis on the Robin
part of the boundary.  Applying the sensitivity solver to each basis function
yields the stored accessible-boundary traces; only inner products of those
traces ever enter the linear algebra (no adjoint operator is formed).  The
regularized coefficient vector solves ``(M + alpha G) c = R`` where ``M``
collects trace products, ``G`` is the Gram matrix of the basis in the
first-derivative (H1_0) inner product, and ``R`` pairs the traces with the
measured data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg

from .fem import (
    BoundaryField,
    NodalField,
    RobinOperator,
    chain_mass_matrix,
    solve_sensitivity,
)
from .geometry import (
    TAG_ACCESSIBLE,
    BoundaryChain,
    DomainSpec,
    Mesh,
    ThetaField,
    mesh_fingerprint,
)


class InversionError(ValueError):
    """Inconsistent inversion input."""


@dataclass(frozen=True)
class ThetaBasis:
    """Basis of the trial space on the Robin boundary part.

    ``value`` and ``deriv`` map an arclength array of length m to an (n, m)
    matrix of basis values / first derivatives.  Every basis function
    vanishes at both endpoints of the chain.  ``descriptor`` identifies
    constructible bases for serialization; ``breakpoints`` (optional) are
    interior kinks honored by the Gram quadrature.
    """

    n: int
    length: float
    value: Callable[[np.ndarray], np.ndarray]
    deriv: Callable[[np.ndarray], np.ndarray]
    descriptor: dict
    breakpoints: tuple = ()


def make_sine_basis(n: int, length: float) -> ThetaBasis:
    """Sine modes ``sin(i * pi * s / length)``, i = 1..n.

    They vanish exactly at both endpoints and are mutually orthogonal in the
    derivative inner product, so the Gram matrix is diagonal.
    """
    if n < 1 or length <= 0.0:
        raise InversionError(f"need n >= 1 and length > 0, got ({n}, {length})")
    k = np.arange(1, n + 1) * (np.pi / length)

    def value(s: np.ndarray) -> np.ndarray:
        s = np.atleast_1d(np.asarray(s, dtype=float))
        out = np.sin(np.multiply.outer(k, s))
        out[:, (s == 0.0) | (s == length)] = 0.0
        return out

    def deriv(s: np.ndarray) -> np.ndarray:
        s = np.atleast_1d(np.asarray(s, dtype=float))
        return k[:, None] * np.cos(np.multiply.outer(k, s))

    return ThetaBasis(
        n=n,
        length=float(length),
        value=value,
        deriv=deriv,
        descriptor={"kind": "sine", "n": n, "length": float(length)},
    )


def make_hat_basis(n: int, length: float) -> ThetaBasis:
    """Piecewise-linear hats on n uniform interior nodes (alternative basis)."""
    if n < 1 or length <= 0.0:
        raise InversionError(f"need n >= 1 and length > 0, got ({n}, {length})")
    nodes = np.linspace(0.0, length, n + 2)
    h = nodes[1] - nodes[0]

    def value(s: np.ndarray) -> np.ndarray:
        s = np.atleast_1d(np.asarray(s, dtype=float))
        out = np.empty((n, len(s)))
        for i in range(n):
            out[i] = np.clip(1.0 - np.abs(s - nodes[i + 1]) / h, 0.0, None)
        return out

    def deriv(s: np.ndarray) -> np.ndarray:
        s = np.atleast_1d(np.asarray(s, dtype=float))
        out = np.zeros((n, len(s)))
        for i in range(n):
            rising = (s >= nodes[i]) & (s < nodes[i + 1])
            falling = (s >= nodes[i + 1]) & (s < nodes[i + 2])
            out[i][rising] = 1.0 / h
            out[i][falling] = -1.0 / h
        return out

    return ThetaBasis(
        n=n,
        length=float(length),
        value=value,
        deriv=deriv,
        descriptor={"kind": "hat", "n": n, "length": float(length)},
        breakpoints=tuple(nodes[1:-1]),
    )


def basis_from_descriptor(descriptor: dict) -> ThetaBasis:
    kind = descriptor.get("kind")
    if kind == "sine":
        return make_sine_basis(descriptor["n"], descriptor["length"])
    if kind == "hat":
        return make_hat_basis(descriptor["n"], descriptor["length"])
    raise InversionError(f"unknown basis descriptor {descriptor!r}")


def _gauss_panels(length: float, breakpoints: tuple, min_panels: int):
    edges = np.linspace(0.0, length, min_panels + 1)
    if breakpoints:
        edges = np.union1d(edges, np.asarray(breakpoints, dtype=float))
    nodes, weights = np.polynomial.legendre.leggauss(10)
    a = edges[:-1]
    b = edges[1:]
    half = 0.5 * (b - a)
    pts = (0.5 * (a + b))[:, None] + half[:, None] * nodes[None, :]
    w = half[:, None] * weights[None, :]
    return pts.ravel(), w.ravel()


def h10_gram(basis: ThetaBasis) -> np.ndarray:
    """Gram matrix of the basis in the derivative inner product.

    Integrates products of first derivatives by composite Gauss quadrature
    (panel count scales with the basis size, and panel edges include any
    declared breakpoints), then symmetrizes.
    """
    pts, w = _gauss_panels(basis.length, basis.breakpoints, max(32, 4 * basis.n))
    d = basis.deriv(pts)
    gram = (d * w) @ d.T
    return 0.5 * (gram + gram.T)


@dataclass
class GalerkinSystem:
    """Assembled discrete operator: trace products, Gram matrix, stored traces."""

    M: np.ndarray  # (n, n) symmetric positive semidefinite
    G: np.ndarray  # (n, n) symmetric positive definite
    traces: np.ndarray  # (n, m) traces of the basis responses on Gamma_A
    arclength_A: np.ndarray
    arclength_I: np.ndarray
    basis: ThetaBasis
    mesh_fingerprint: str
    R: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.basis.n

    def to_json_dict(self) -> dict:
        out = {
            "n": self.n,
            "trace_nodes": int(self.traces.shape[1]),
            "M": self.M.ravel().tolist(),
            "G": self.G.ravel().tolist(),
            "traces": self.traces.ravel().tolist(),
            "arclength_A": self.arclength_A.tolist(),
            "arclength_I": self.arclength_I.tolist(),
            "basis": self.basis.descriptor,
            "mesh_fingerprint": self.mesh_fingerprint,
        }
        if self.R is not None:
            out["R"] = self.R.tolist()
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)

    @classmethod
    def from_json_dict(cls, data: dict) -> "GalerkinSystem":
        n = int(data["n"])
        m = int(data["trace_nodes"])
        return cls(
            M=np.asarray(data["M"], dtype=float).reshape(n, n),
            G=np.asarray(data["G"], dtype=float).reshape(n, n),
            traces=np.asarray(data["traces"], dtype=float).reshape(n, m),
            arclength_A=np.asarray(data["arclength_A"], dtype=float),
            arclength_I=np.asarray(data["arclength_I"], dtype=float),
            basis=basis_from_descriptor(data["basis"]),
            mesh_fingerprint=data["mesh_fingerprint"],
            R=np.asarray(data["R"], dtype=float) if "R" in data else None,
        )

    @classmethod
    def from_json(cls, text: str) -> "GalerkinSystem":
        return cls.from_json_dict(json.loads(text))


@dataclass(frozen=True)
class Reconstruction:
    """Regularized solution: coefficients and the resampled displacement."""

    coefficients: np.ndarray
    alpha: float
    theta_field: ThetaField


def assemble_operator(
    mesh: Mesh,
    spec: DomainSpec,
    u: NodalField,
    basis: ThetaBasis,
    operator: RobinOperator | None = None,
) -> GalerkinSystem:
    """Run one sensitivity solve per basis function and collect trace products.

    ``u`` must solve the background problem on ``mesh``.  A single operator
    factorization is shared by all n solves.  The returned system has no
    right-hand side attached; see :func:`assemble_rhs`.
    """
    op = operator if operator is not None else RobinOperator(mesh, spec.gamma)
    chain_I = mesh.gamma_I
    chain_A = mesh.gamma_A
    samples = basis.value(chain_I.arclength)
    traces = np.empty((basis.n, chain_A.size))
    for i in range(basis.n):
        theta_i = ThetaField(values=samples[i], arclength=chain_I.arclength)
        u_prime = solve_sensitivity(mesh, spec, u, theta_i, operator=op)
        traces[i] = u_prime.values[chain_A.vertices]
    w = chain_mass_matrix(chain_A)
    m = traces @ (w @ traces.T)
    return GalerkinSystem(
        M=0.5 * (m + m.T),
        G=h10_gram(basis),
        traces=traces,
        arclength_A=chain_A.arclength.copy(),
        arclength_I=chain_I.arclength.copy(),
        basis=basis,
        mesh_fingerprint=mesh_fingerprint(mesh),
    )


def assemble_rhs(system: GalerkinSystem, data: BoundaryField) -> np.ndarray:
    """Pair the stored traces with measured data on Gamma_A."""
    if data.tag != TAG_ACCESSIBLE:
        raise InversionError(f"data must live on the accessible chain, got tag {data.tag!r}")
    if len(data.values) != system.traces.shape[1]:
        raise InversionError(
            f"data has {len(data.values)} nodes, traces have {system.traces.shape[1]}"
        )
    chain = BoundaryChain(
        vertices=np.arange(len(system.arclength_A)), arclength=system.arclength_A
    )
    w = chain_mass_matrix(chain)
    return system.traces @ (w @ data.values)


def solve_tikhonov(system: GalerkinSystem, rhs: np.ndarray, alpha: float) -> Reconstruction:
    """Solve ``(M + alpha G) c = rhs`` by a dense symmetric-definite factorization."""
    if alpha <= 0.0:
        raise InversionError(f"regularization parameter must be positive, got {alpha}")
    lhs = system.M + alpha * system.G
    try:
        c = scipy.linalg.solve(lhs, rhs, assume_a="pos")
    except np.linalg.LinAlgError as exc:  # pragma: no cover - G is definite
        raise InversionError(f"regularized system not positive definite: {exc}") from exc
    values = system.basis.value(system.arclength_I).T @ c
    return Reconstruction(
        coefficients=c,
        alpha=float(alpha),
        theta_field=ThetaField(values=values, arclength=system.arclength_I),
    )


def h10_norm(system: GalerkinSystem, c: np.ndarray) -> float:
    """Norm induced by the Gram matrix: sqrt(c' G c)."""
    c = np.asarray(c, dtype=float)
    if c.shape != (system.n,):
        raise InversionError(f"coefficient vector has shape {c.shape}, expected ({system.n},)")
    return float(np.sqrt(max(c @ system.G @ c, 0.0)))


def discretization_gap(
    system: GalerkinSystem,
    mesh: Mesh,
    spec: DomainSpec,
    u: NodalField,
    probes: int,
    operator: RobinOperator | None = None,
) -> float:
    """Probe the operator norm on modes beyond the trial space.

    Applies the sensitivity solver to the next ``probes`` sine modes above the
    basis dimension and returns the largest ratio of accessible-trace norm to
    derivative norm.  A small value certifies that the neglected modes
    contribute below the working noise level.
    """
    if probes < 1:
        raise InversionError(f"probes must be >= 1, got {probes}")
    if system.basis.descriptor.get("kind") != "sine":
        raise InversionError("gap probing is defined for the sine basis only")
    op = operator if operator is not None else RobinOperator(mesh, spec.gamma)
    chain_I = mesh.gamma_I
    chain_A = mesh.gamma_A
    length = system.basis.length
    w = chain_mass_matrix(chain_A)
    worst = 0.0
    for k in range(system.n + 1, system.n + probes + 1):
        freq = k * np.pi / length
        f = np.sin(freq * chain_I.arclength)
        f[0] = 0.0
        f[-1] = 0.0
        theta = ThetaField(values=f, arclength=chain_I.arclength)
        u_prime = solve_sensitivity(mesh, spec, u, theta, operator=op)
        t = u_prime.values[chain_A.vertices]
        trace_norm = np.sqrt(max(t @ (w @ t), 0.0))
        h10 = freq * np.sqrt(length / 2.0)
        worst = max(worst, trace_norm / h10)
    return worst
