"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines as they complete.
"""

import numpy as np
import pytest

from robinrec.balancing import alpha_grid, select_from_alpha_of_k, threshold
from robinrec.cli import main
from robinrec.experiments import (
    ExperimentSpec,
    default_balancing,
    example1_ground_truth,
    rectangle_trace_coefficient,
    run_experiment,
)
from robinrec.fem import BoundaryField, boundary_l2_product, solve_mixed_bvp, solve_sensitivity
from robinrec.geometry import ThetaField, build_half_annulus_mesh, build_rectangle_mesh
from robinrec.inversion import assemble_rhs, solve_tikhonov

REFERENCE_SEQUENCE = [
    4.827e-11, 8.157e-11, 1.379e-10, 3.937e-10, 1.900e-9,
    9.173e-9, 3.406e-8, 7.482e-8, 9.728e-8, 1.265e-7,
    1.644e-7, 2.778e-7, 3.612e-7, 6.104e-7, 1.341e-6,
    2.946e-6, 8.415e-6, 1.094e-5, 1.422e-5, 1.849e-5,
]

SEEDS = range(5)


def report_criterion(num: int, ok: bool, detail: str) -> None:
    print(f"[criterion {num:2d}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, f"criterion {num} failed: {detail}"


@pytest.fixture(scope="module")
def example1_reports():
    return [
        run_experiment(ExperimentSpec(example_id=1, gamma=0.999, delta=1e-6, seed=s))
        for s in SEEDS
    ]


def rel_trace_error(mesh, field, exact_values):
    trace = field.trace("A")
    exact = BoundaryField(tag="A", values=exact_values, arclength=trace.arclength)
    diff = BoundaryField(
        tag="A", values=trace.values - exact.values, arclength=trace.arclength
    )
    return np.sqrt(boundary_l2_product(diff, diff) / boundary_l2_product(exact, exact))


def test_criterion_1_threshold_arithmetic():
    cfg = default_balancing(1e-6)
    got = threshold(cfg)
    exact = 9.0 * 1e-11 * ((1.3**2 + 1.0) / (1.3 - 1.0)) ** 2
    ok = abs(got - exact) <= 1e-12 * exact and f"{got:.4g}" == "7.236e-09"
    report_criterion(1, ok, f"threshold = {got:.6e} (displays as {got:.4g})")


def test_criterion_2_balancing_replay():
    cfg = default_balancing(1e-6)
    trace = select_from_alpha_of_k(cfg, REFERENCE_SEQUENCE)
    kd = trace.K_estimate * cfg.delta
    ok = (
        abs(trace.alpha_plus - 3.406e-8) <= 1e-12
        and abs(kd - 2.90e-8) <= 0.01 * 2.90e-8
    )
    report_criterion(
        2, ok, f"alpha+ = {trace.alpha_plus:.4e}, implied noise level = {kd:.4e}"
    )


def test_criterion_3_forward_accuracy():
    gamma = 0.999
    rect_errs = []
    for nx, ny in ((32, 16), (64, 32), (128, 64)):
        mesh = build_rectangle_mesh(nx, ny)
        u = solve_mixed_bvp(mesh, gamma, lambda x, y: np.sin(x))
        coords = mesh.vertices[mesh.gamma_A.vertices]
        exact = rectangle_trace_coefficient(gamma) * np.sin(coords[:, 0])
        rect_errs.append(rel_trace_error(mesh, u, exact))
    rect_rates = np.log2(np.array(rect_errs[:-1]) / np.array(rect_errs[1:]))

    gamma4 = 0.99
    b = (1.0 - gamma4) / (1.25 * gamma4 + 0.75)
    a = 1.0 + b / 4.0
    ann_errs = []
    for nr, nt in ((16, 64), (32, 128), (64, 256)):
        mesh = build_half_annulus_mesh(nr, nt)
        u = solve_mixed_bvp(mesh, gamma4, lambda x, y: 0.5 * y)
        x, y = mesh.vertices[mesh.gamma_A.vertices].T
        ann_errs.append(rel_trace_error(mesh, u, a * y + b * y / (x**2 + y**2)))
    ann_rates = np.log2(np.array(ann_errs[:-1]) / np.array(ann_errs[1:]))

    ok = (
        rect_errs[-1] < 1e-3
        and np.all((rect_rates > 1.7) & (rect_rates < 2.3))
        and ann_errs[-1] < 1e-3
        and np.all((ann_rates > 1.7) & (ann_rates < 2.3))
    )
    report_criterion(
        3,
        ok,
        f"rectangle err {rect_errs[-1]:.2e} rates {np.round(rect_rates, 2)}, "
        f"annulus err {ann_errs[-1]:.2e} rates {np.round(ann_rates, 2)}",
    )


def test_criterion_4_example1_table_row(example1_reports):
    med_l2 = float(np.median([r.err_l2 for r in example1_reports]))
    med_h1 = float(np.median([r.err_h1 for r in example1_reports]))
    ok = (6.127e-4 / 5.0 <= med_l2 <= 6.127e-4 * 5.0) and (
        0.0080 / 5.0 <= med_h1 <= 0.0080 * 5.0
    )
    report_criterion(
        4,
        ok,
        f"median err_l2 = {med_l2:.3e} (target 6.127e-4 within 5x), "
        f"median err_h1 = {med_h1:.3e} (target 8.0e-3 within 5x)",
    )


def test_criterion_5_example4_table_row():
    errs = [
        run_experiment(
            ExperimentSpec(example_id=4, gamma=0.99, delta=1e-5, seed=s)
        ).err_l2
        for s in SEEDS
    ]
    med = float(np.median(errs))
    ok = 0.0028 / 5.0 <= med <= 0.0028 * 5.0
    report_criterion(5, ok, f"median err_l2 = {med:.3e} (target 2.8e-3 within 5x)")


def test_criterion_6_example3_impedance_trend():
    h = 30.0 * np.pi
    med = {}
    for gamma in (1.0, 10.0):
        errs = [
            run_experiment(
                ExperimentSpec(
                    example_id=3, gamma=gamma, delta=1e-5, seed=s, example3_h=h
                )
            ).err_l2
            for s in SEEDS
        ]
        med[gamma] = float(np.median(errs))
    ok = np.isfinite(med[1.0]) and np.isfinite(med[10.0]) and med[10.0] < med[1.0]
    report_criterion(
        6, ok, f"median err_l2: gamma=1 -> {med[1.0]:.3e}, gamma=10 -> {med[10.0]:.3e}"
    )


def test_criterion_7_linearization_consistency():
    from robinrec.geometry import DomainKind, DomainSpec

    normalized = {}
    for gamma in (0.999, 0.9999):
        mesh = build_rectangle_mesh(128, 64)
        spec = DomainSpec(kind=DomainKind.RECTANGLE, gamma=gamma, flux=lambda x, y: np.sin(x))
        u = solve_mixed_bvp(mesh, gamma, spec.flux)
        gt = example1_ground_truth(gamma)
        s = mesh.gamma_I.arclength
        values = gt.value(s)
        values[0] = values[-1] = 0.0
        up = solve_sensitivity(mesh, spec, u, ThetaField(values, s))
        coords = mesh.vertices[mesh.gamma_A.vertices]
        c = rectangle_trace_coefficient(gamma)
        exact = (1.0 - c) * np.sin(coords[:, 0])
        trace = up.trace("A")
        diff = BoundaryField(
            tag="A", values=trace.values - exact, arclength=trace.arclength
        )
        dist = np.sqrt(boundary_l2_product(diff, diff))
        scale = np.max(np.abs(values)) + np.max(np.abs(gt.deriv(s)))
        normalized[gamma] = dist / scale
    ok = normalized[0.9999] < normalized[0.999]
    report_criterion(
        7,
        ok,
        f"normalized linearization distance: gamma=0.999 -> {normalized[0.999]:.3e}, "
        f"gamma=0.9999 -> {normalized[0.9999]:.3e}",
    )


def test_criterion_8_tikhonov_solver_properties(example1_reports, fine_system):
    system = fine_system
    cfg = default_balancing(1e-6)
    grid = alpha_grid(cfg)
    rng = np.random.default_rng(0)
    x = system.arclength_A
    data = BoundaryField(
        tag="A",
        values=-1.354e-4 * np.sin(x) + 1e-6 * rng.uniform(-1, 1, x.size),
        arclength=x,
    )
    rhs = assemble_rhs(system, data)
    worst_resid = 0.0
    norms = []
    for alpha in grid:
        rec = solve_tikhonov(system, rhs, alpha)
        lhs = system.M + alpha * system.G
        worst_resid = max(
            worst_resid,
            np.linalg.norm(lhs @ rec.coefficients - rhs) / np.linalg.norm(rhs),
        )
        norms.append(np.sqrt(rec.coefficients @ system.G @ rec.coefficients))
    monotone = bool(np.all(np.diff(norms) <= 1e-12 * max(norms)))
    m_sym = np.max(np.abs(system.M - system.M.T)) <= 1e-12 * np.max(np.abs(system.M))
    g_sym = np.max(np.abs(system.G - system.G.T)) <= 1e-12 * np.max(np.abs(system.G))
    g_pd = bool(np.linalg.eigvalsh(system.G)[0] > 0.0)
    ok = worst_resid <= 1e-10 and monotone and m_sym and g_sym and g_pd
    report_criterion(
        8,
        ok,
        f"worst residual {worst_resid:.2e}, norm monotone {monotone}, "
        f"M/G symmetric {m_sym}/{g_sym}, G positive definite {g_pd}",
    )


def test_criterion_9_zero_noise_ordering(example1_reports):
    noisy_median = float(np.median([r.err_l2 for r in example1_reports]))
    clean = run_experiment(
        ExperimentSpec(example_id=1, gamma=0.999, delta=1e-6, seed=0, noise_delta=0.0)
    )
    ok = clean.err_l2 <= noisy_median
    report_criterion(
        9,
        ok,
        f"noise-free err_l2 = {clean.err_l2:.3e} <= noisy median {noisy_median:.3e}",
    )


def test_criterion_10_cli_determinism(tmp_path):
    cfg_text = f"""
[experiment]
example = 1
gamma = 0.999
delta = 1e-6
seed = 3
resolution = [64, 32]
basis_size = 20

[output]
directory = "{tmp_path / 'ignored'}"
emit = ["csv", "json"]
"""
    cfg = tmp_path / "det.toml"
    cfg.write_text(cfg_text)
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    rc_a = main(["run", "--config", str(cfg), "--out", str(out_a)])
    rc_b = main(["run", "--config", str(cfg), "--out", str(out_b)])
    identical = all(
        (out_a / name).read_bytes() == (out_b / name).read_bytes()
        for name in ("report.json", "row.csv", "curves.csv")
    )
    ok = rc_a == 0 and rc_b == 0 and identical
    report_criterion(10, ok, f"reruns byte-identical: {identical}")
