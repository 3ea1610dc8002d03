#!/usr/bin/env python3
"""Forward-solver accuracy study on both benchmark domains.

Prints the relative L2 accessible-trace error against the separated analytic
solutions under uniform refinement, the observed convergence rates, and the
neglected-mode diagnostic of the Galerkin trial space.
"""

import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

import numpy as np

from robinrec.experiments import rectangle_trace_coefficient
from robinrec.fem import (
    BoundaryField,
    RobinOperator,
    boundary_l2_product,
    solve_mixed_bvp,
)
from robinrec.geometry import (
    DomainKind,
    DomainSpec,
    build_half_annulus_mesh,
    build_rectangle_mesh,
)
from robinrec.inversion import assemble_operator, discretization_gap, make_sine_basis


def rel_err(mesh, u, exact):
    tr = u.trace("A")
    ex = BoundaryField(tag="A", values=exact, arclength=tr.arclength)
    df = BoundaryField(tag="A", values=tr.values - exact, arclength=tr.arclength)
    return np.sqrt(boundary_l2_product(df, df) / boundary_l2_product(ex, ex))


def rectangle_study(gamma=0.999):
    print(f"rectangle, impedance {gamma}, flux sin(x):")
    errs = []
    for nx, ny in ((32, 16), (64, 32), (128, 64), (256, 128)):
        mesh = build_rectangle_mesh(nx, ny)
        u = solve_mixed_bvp(mesh, gamma, lambda x, y: np.sin(x))
        coords = mesh.vertices[mesh.gamma_A.vertices]
        exact = rectangle_trace_coefficient(gamma) * np.sin(coords[:, 0])
        errs.append(rel_err(mesh, u, exact))
        rate = "" if len(errs) < 2 else f"  rate {np.log2(errs[-2] / errs[-1]):.2f}"
        print(f"  {nx:4d}x{ny:<4d} rel trace err {errs[-1]:.3e}{rate}")


def annulus_study(gamma=0.99):
    b = (1.0 - gamma) / (1.25 * gamma + 0.75)
    a = 1.0 + b / 4.0
    print(f"half annulus, impedance {gamma}, flux y/2:")
    errs = []
    for nr, nt in ((16, 64), (32, 128), (64, 256)):
        mesh = build_half_annulus_mesh(nr, nt)
        u = solve_mixed_bvp(mesh, gamma, lambda x, y: 0.5 * y)
        x, y = mesh.vertices[mesh.gamma_A.vertices].T
        errs.append(rel_err(mesh, u, a * y + b * y / (x**2 + y**2)))
        rate = "" if len(errs) < 2 else f"  rate {np.log2(errs[-2] / errs[-1]):.2f}"
        print(f"  {nr:4d}x{nt:<4d} rel trace err {errs[-1]:.3e}{rate}")


def gap_study(gamma=0.999):
    print(f"neglected-mode diagnostic (rectangle 128x64, impedance {gamma}):")
    mesh = build_rectangle_mesh(128, 64)
    spec = DomainSpec(kind=DomainKind.RECTANGLE, gamma=gamma, flux=lambda x, y: np.sin(x))
    op = RobinOperator(mesh, gamma)
    u = solve_mixed_bvp(mesh, gamma, spec.flux, operator=op)
    for n in (10, 20, 40):
        basis = make_sine_basis(n, mesh.gamma_I.length)
        system = assemble_operator(mesh, spec, u, basis, operator=op)
        gap = discretization_gap(system, mesh, spec, u, probes=3, operator=op)
        print(f"  n = {n:3d}: sup ||F' f_k|| / ||f_k||  over probes = {gap:.3e}")


if __name__ == "__main__":
    rectangle_study()
    annulus_study()
    gap_study()
