"""Command-line driver: single runs, table sweeps, and self-validation.

Configuration files are TOML with an ``[experiment]`` section, an optional
``[balancing]`` section, an optional ``[output]`` section, and, for the
``table`` subcommand, a ``[table]`` section whose ``rows`` entries override
experiment keys per row.  Results go to files (CSV/JSON/SVG) and standard
output; log messages go to standard error.  Output files are written
atomically and contain no timestamps, so identical configurations reproduce
byte-identical artifacts.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .balancing import (
    BalancingConfig,
    select_from_alpha_of_k,
    threshold,
)
from .experiments import (
    ExperimentReport,
    ExperimentSpec,
    PipelineError,
    default_balancing,
    run_experiment,
)
from .fem import BoundaryField, boundary_l2_product, solve_mixed_bvp
from .geometry import build_rectangle_mesh
from .inversion import assemble_operator, make_sine_basis, solve_tikhonov

log = logging.getLogger("robinrec")

# Adaptive-parameter sequence and selection outcome of the reference benchmark
# (gamma = 0.999, delta = 1e-6); used by `validate` to pin the threshold rule.
REFERENCE_ALPHA_OF_K = (
    4.827e-11, 8.157e-11, 1.379e-10, 3.937e-10, 1.900e-9,
    9.173e-9, 3.406e-8, 7.482e-8, 9.728e-8, 1.265e-7,
    1.644e-7, 2.778e-7, 3.612e-7, 6.104e-7, 1.341e-6,
    2.946e-6, 8.415e-6, 1.094e-5, 1.422e-5, 1.849e-5,
)
REFERENCE_ALPHA_PLUS = 3.406e-8
REFERENCE_NOISE_LEVEL = 2.90e-8


class ConfigError(ValueError):
    """Missing or malformed configuration."""


def _load_config(path: str) -> dict:
    if not os.path.exists(path):
        raise ConfigError(f"configuration file not found: {path}")
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc


def _require(section: dict, key: str, where: str):
    if key not in section:
        raise ConfigError(f"missing key '{key}' in [{where}]")
    return section[key]


def _balancing_from(section: dict | None, delta: float) -> BalancingConfig:
    if not section:
        return default_balancing(delta)
    try:
        return BalancingConfig(
            alpha0=float(section.get("alpha0", 1e-11)),
            q=float(section.get("q", 1.3)),
            k0=float(section.get("k0", 0.006)),
            p=float(section.get("p", 1.3)),
            M=int(section.get("hypotheses", 19)),
            delta=float(section.get("delta", delta)),
            N=int(section["grid_length"]) if "grid_length" in section else None,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [balancing] section: {exc}") from exc


def _spec_from_sections(exp: dict, balancing: dict | None, seed: int | None) -> ExperimentSpec:
    example = int(_require(exp, "example", "experiment"))
    gamma = float(_require(exp, "gamma", "experiment"))
    delta = float(_require(exp, "delta", "experiment"))
    kwargs = {}
    if "resolution" in exp:
        res = exp["resolution"]
        if not isinstance(res, (list, tuple)) or len(res) != 2:
            raise ConfigError("key 'resolution' must be a pair of integers")
        kwargs["resolution"] = (int(res[0]), int(res[1]))
    if "basis_size" in exp:
        kwargs["n_basis"] = int(exp["basis_size"])
    h = exp.get("h", exp.get("example3_h"))
    if h is not None:
        kwargs["example3_h"] = float(h)
    if "example2_breakpoints" in exp:
        pts = exp["example2_breakpoints"]
        try:
            kwargs["example2_breakpoints"] = tuple(
                (float(s), float(v)) for s, v in pts
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(
                "key 'example2_breakpoints' must be a list of [s, value] pairs"
            ) from exc
    for key, target in (
        ("slope_variant", "slope_variant"),
        ("curvature_multiplier", "curvature_multiplier"),
        ("noise_mode", "noise_mode"),
        ("noise_delta", "noise_delta"),
    ):
        if key in exp:
            kwargs[target] = exp[key]
    try:
        return ExperimentSpec(
            example_id=example,
            gamma=gamma,
            delta=delta,
            seed=int(seed if seed is not None else exp.get("seed", 0)),
            balancing=_balancing_from(balancing, delta),
            **kwargs,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _atomic_write(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _report_json(report: ExperimentReport) -> str:
    return json.dumps(report.to_json_dict(), sort_keys=True, separators=(",", ":"))


def _curves_csv(report: ExperimentReport) -> str:
    lines = ["s,theta_true,theta_reconstructed"]
    for s, tv, rv in zip(report.s_grid, report.theta_true, report.theta_rec):
        lines.append(f"{s:.10e},{tv:.10e},{rv:.10e}")
    return "\n".join(lines) + "\n"


def emit_svg(report: ExperimentReport, path: str) -> None:
    """Write an SVG overlay of the true and reconstructed profiles.

    Exactly one polyline per curve; axes and legend use line/text elements.
    No timestamps, so output is deterministic.
    """
    width, height = 720, 480
    ml, mr, mt, mb = 70, 25, 40, 55
    pw, ph = width - ml - mr, height - mt - mb

    s = report.s_grid
    lo = min(report.theta_true.min(), report.theta_rec.min())
    hi = max(report.theta_true.max(), report.theta_rec.max())
    if hi - lo < 1e-15:
        lo, hi = lo - 1.0, hi + 1.0
    pad = 0.08 * (hi - lo)
    lo, hi = lo - pad, hi + pad

    def px(v):
        return ml + pw * (v - s[0]) / (s[-1] - s[0])

    def py(v):
        return mt + ph * (hi - v) / (hi - lo)

    def polyline(vals, color, dash=""):
        pts = " ".join(f"{px(x):.2f},{py(v):.2f}" for x, v in zip(s, vals))
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        return (
            f'<polyline fill="none" stroke="{color}" stroke-width="1.6"{extra} '
            f'points="{pts}"/>'
        )

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" stroke="black"/>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="black"/>',
    ]
    for xv in np.linspace(s[0], s[-1], 5):
        xpix = px(xv)
        parts.append(
            f'<line x1="{xpix:.2f}" y1="{mt + ph}" x2="{xpix:.2f}" y2="{mt + ph + 5}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{xpix:.2f}" y="{mt + ph + 20}" font-size="12" text-anchor="middle">{xv:.3g}</text>'
        )
    for yv in np.linspace(lo, hi, 5):
        ypix = py(yv)
        parts.append(
            f'<line x1="{ml - 5}" y1="{ypix:.2f}" x2="{ml}" y2="{ypix:.2f}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{ml - 8}" y="{ypix + 4:.2f}" font-size="12" text-anchor="end">{yv:.3g}</text>'
        )
    parts.append(polyline(report.theta_true, "#1f77b4"))
    parts.append(polyline(report.theta_rec, "#d62728", dash="6 3"))
    lx = ml + pw - 170
    parts.extend(
        [
            f'<line x1="{lx}" y1="{mt + 12}" x2="{lx + 28}" y2="{mt + 12}" stroke="#1f77b4" stroke-width="1.6"/>',
            f'<text x="{lx + 34}" y="{mt + 16}" font-size="12">true profile</text>',
            f'<line x1="{lx}" y1="{mt + 30}" x2="{lx + 28}" y2="{mt + 30}" stroke="#d62728" stroke-width="1.6" stroke-dasharray="6 3"/>',
            f'<text x="{lx + 34}" y="{mt + 34}" font-size="12">reconstruction</text>',
            f'<text x="{ml}" y="{mt - 14}" font-size="13">gamma={report.spec.gamma:g}  '
            f"delta={report.spec.delta:.3e}  alpha+={report.alpha_plus:.3e}</text>",
            f'<text x="{ml + pw / 2:.0f}" y="{height - 12}" font-size="12" text-anchor="middle">arclength s</text>',
        ]
    )
    parts.append("</svg>")
    _atomic_write(path, "\n".join(parts) + "\n")


def _emit_report(report: ExperimentReport, outdir: str, emit: set[str]) -> list[str]:
    os.makedirs(outdir, exist_ok=True)
    written = []
    if "json" in emit:
        path = os.path.join(outdir, "report.json")
        _atomic_write(path, _report_json(report) + "\n")
        written.append(path)
    if "csv" in emit:
        path = os.path.join(outdir, "row.csv")
        _atomic_write(path, ExperimentReport.csv_header() + "\n" + report.csv_row() + "\n")
        written.append(path)
        path = os.path.join(outdir, "curves.csv")
        _atomic_write(path, _curves_csv(report))
        written.append(path)
    if "svg" in emit:
        path = os.path.join(outdir, "theta.svg")
        emit_svg(report, path)
        written.append(path)
    return written


def cmd_run(args) -> int:
    try:
        cfg = _load_config(args.config)
        exp = cfg.get("experiment")
        if exp is None:
            raise ConfigError(f"missing [experiment] section in {args.config}")
        spec = _spec_from_sections(exp, cfg.get("balancing"), args.seed)
    except ConfigError as exc:
        log.error("configuration: %s", exc)
        return 2
    outdir = args.out or cfg.get("output", {}).get("directory", "runs")
    emit = set(args.emit.split(",")) if args.emit else set(
        cfg.get("output", {}).get("emit", ["csv", "json", "svg"])
    )
    unknown = emit - {"csv", "json", "svg"}
    if unknown:
        log.error("configuration: unknown emit formats %s", sorted(unknown))
        return 2
    log.info("running benchmark %d (gamma=%g, delta=%g, seed=%d)",
             spec.example_id, spec.gamma, spec.delta, spec.seed)
    try:
        report = run_experiment(spec)
    except PipelineError as exc:
        log.error("%s", exc)
        return 1
    try:
        _emit_report(report, outdir, emit)
    except OSError as exc:
        log.error("cannot write artifacts to %s: %s", outdir, exc)
        return 1
    print(ExperimentReport.csv_header())
    print(report.csv_row())
    return 0


def _table_task(exp: dict, balancing: dict | None, row: dict, seed: int) -> dict:
    merged = {**exp, **row}
    try:
        spec = _spec_from_sections(merged, balancing, seed)
        report = run_experiment(spec)
        return {
            "ok": True,
            "gamma": spec.gamma,
            "delta": spec.delta,
            "K": report.K_estimate,
            "alpha_plus": report.alpha_plus,
            "err_h1": report.err_h1,
            "err_l2": report.err_l2,
        }
    except PipelineError as exc:
        return {"ok": False, "stage": exc.stage, "error": str(exc),
                "gamma": merged.get("gamma"), "delta": merged.get("delta")}
    except ConfigError as exc:
        return {"ok": False, "stage": "config", "error": str(exc),
                "gamma": merged.get("gamma"), "delta": merged.get("delta")}


def cmd_table(args) -> int:
    try:
        cfg = _load_config(args.config)
        exp = cfg.get("experiment")
        if exp is None:
            raise ConfigError(f"missing [experiment] section in {args.config}")
        table = cfg.get("table", {})
        rows = table.get("rows", [])
        if not rows:
            raise ConfigError("table mode needs a nonempty [table] rows list")
        replications = int(table.get("replications", 1))
        if replications < 1:
            raise ConfigError("replications must be >= 1")
        base_seed = args.seed if args.seed is not None else int(table.get("seed", 0))
    except ConfigError as exc:
        log.error("configuration: %s", exc)
        return 2

    balancing = cfg.get("balancing")
    tasks = [
        (row_idx, rep, exp, balancing, row, base_seed + rep)
        for row_idx, row in enumerate(rows)
        for rep in range(replications)
    ]
    log.info("table sweep: %d rows x %d replications, jobs=%d",
             len(rows), replications, args.jobs)
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_table_task,
                                    [t[2] for t in tasks], [t[3] for t in tasks],
                                    [t[4] for t in tasks], [t[5] for t in tasks]))
    else:
        results = [_table_task(t[2], t[3], t[4], t[5]) for t in tasks]

    replicated = replications > 1
    header = "gamma,delta,K,alpha_plus,err_h1,err_l2"
    if replicated:
        header += ",err_l2_min,err_l2_max"
    header += ",status"
    lines = [header]
    failed = False
    for row_idx in range(len(rows)):
        chunk = results[row_idx * replications:(row_idx + 1) * replications]
        errors = [r for r in chunk if not r["ok"]]
        if errors:
            failed = True
            stage = errors[0]["stage"]
            gamma = errors[0].get("gamma")
            delta = errors[0].get("delta")
            prefix = f"{gamma if gamma is not None else ''},{delta if delta is not None else ''}"
            blanks = ",,,," if not replicated else ",,,,,,"
            lines.append(f"{prefix}{blanks}error:{stage}")
            log.error("row %d failed at stage '%s': %s", row_idx, stage, errors[0]["error"])
            continue
        k = float(np.median([r["K"] for r in chunk]))
        alpha = float(np.median([r["alpha_plus"] for r in chunk]))
        eh1 = float(np.median([r["err_h1"] for r in chunk]))
        el2 = np.array([r["err_l2"] for r in chunk])
        line = (
            f"{chunk[0]['gamma']:g},{chunk[0]['delta']:.3e},{k:.3e},{alpha:.3e},"
            f"{eh1:.3e},{float(np.median(el2)):.3e}"
        )
        if replicated:
            line += f",{el2.min():.3e},{el2.max():.3e}"
        line += ",ok"
        lines.append(line)

    outdir = args.out or cfg.get("output", {}).get("directory", "runs")
    try:
        os.makedirs(outdir, exist_ok=True)
        _atomic_write(os.path.join(outdir, "table.csv"), "\n".join(lines) + "\n")
    except OSError as exc:
        log.error("cannot write table to %s: %s", outdir, exc)
        return 1
    print("\n".join(lines))
    return 1 if failed else 0


def _check_threshold() -> tuple[bool, str]:
    cfg = default_balancing(1e-6)
    got = threshold(cfg)
    exact = 9.0 * cfg.alpha0 * ((cfg.p**2 + 1.0) / (cfg.p - 1.0)) ** 2
    ok = abs(got - exact) <= 1e-12 * exact and f"{got:.4g}" == "7.236e-09"
    return ok, f"threshold = {got:.6e}"


def _check_replay() -> tuple[bool, str]:
    cfg = default_balancing(1e-6)
    trace = select_from_alpha_of_k(cfg, np.array(REFERENCE_ALPHA_OF_K))
    ok = (
        abs(trace.alpha_plus - REFERENCE_ALPHA_PLUS) <= 1e-12
        and abs(trace.K_estimate * cfg.delta - REFERENCE_NOISE_LEVEL)
        <= 0.01 * REFERENCE_NOISE_LEVEL
    )
    return ok, (
        f"alpha+ = {trace.alpha_plus:.3e}, K*delta = {trace.K_estimate * cfg.delta:.3e}"
    )


def _rectangle_trace_error(nx: int, ny: int, gamma: float) -> float:
    from .experiments import rectangle_trace_coefficient

    mesh = build_rectangle_mesh(nx, ny)
    u = solve_mixed_bvp(mesh, gamma, lambda x, y: np.sin(x))
    trace = u.trace("A")
    coords = mesh.vertices[mesh.gamma_A.vertices]
    exact = BoundaryField(
        tag="A",
        values=rectangle_trace_coefficient(gamma) * np.sin(coords[:, 0]),
        arclength=trace.arclength,
    )
    diff = BoundaryField(
        tag="A", values=trace.values - exact.values, arclength=trace.arclength
    )
    return float(
        np.sqrt(boundary_l2_product(diff, diff) / boundary_l2_product(exact, exact))
    )


def _check_convergence() -> tuple[bool, str]:
    e1 = _rectangle_trace_error(32, 16, 0.999)
    e2 = _rectangle_trace_error(64, 32, 0.999)
    rate = float(np.log2(e1 / e2))
    ok = 1.7 <= rate <= 2.3 and e2 < 5e-3
    return ok, f"trace errors {e1:.3e} -> {e2:.3e}, rate {rate:.2f}"


def _check_tikhonov() -> tuple[bool, str]:
    from .geometry import DomainKind, DomainSpec

    mesh = build_rectangle_mesh(32, 16)
    spec = DomainSpec(kind=DomainKind.RECTANGLE, gamma=0.999, flux=lambda x, y: np.sin(x))
    u = solve_mixed_bvp(mesh, spec.gamma, spec.flux)
    system = assemble_operator(mesh, spec, u, make_sine_basis(8, mesh.gamma_I.length))
    sym = np.max(np.abs(system.M - system.M.T)) <= 1e-12 * max(np.max(np.abs(system.M)), 1e-300)
    gpd = bool(np.all(np.linalg.eigvalsh(system.G) > 0.0))
    rng = np.random.default_rng(0)
    rhs = system.traces @ rng.uniform(-1.0, 1.0, system.traces.shape[1])
    grid = 1e-11 * 1.3 ** np.arange(0, 60, 6)
    norms = []
    resid_ok = True
    for alpha in grid:
        rec = solve_tikhonov(system, rhs, alpha)
        lhs = system.M + alpha * system.G
        resid = np.linalg.norm(lhs @ rec.coefficients - rhs) / np.linalg.norm(rhs)
        resid_ok = resid_ok and resid <= 1e-10
        norms.append(np.sqrt(rec.coefficients @ system.G @ rec.coefficients))
    monotone = bool(np.all(np.diff(norms) <= 1e-12 * max(norms)))
    ok = sym and gpd and resid_ok and monotone
    return ok, (
        f"M symmetric: {sym}, G positive definite: {gpd}, "
        f"residuals <= 1e-10: {resid_ok}, norm monotone: {monotone}"
    )


def cmd_validate(args) -> int:
    checks = [
        ("threshold formula", _check_threshold),
        ("balancing replay", _check_replay),
        ("forward convergence", _check_convergence),
        ("tikhonov properties", _check_tikhonov),
    ]
    all_ok = True
    for name, fn in checks:
        try:
            ok, detail = fn()
        except Exception as exc:  # a failing check must not abort the others
            ok, detail = False, f"raised {exc!r}"
        all_ok = all_ok and ok
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return 0 if all_ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="robinrec",
        description="Robin boundary perturbation reconstruction from boundary voltage data",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one reconstruction from a config file")
    run.add_argument("--config", required=True, help="TOML configuration path")
    run.add_argument("--out", default=None, help="output directory")
    run.add_argument("--seed", type=int, default=None, help="override the config seed")
    run.add_argument("--emit", default=None, help="comma list of csv,json,svg")
    run.set_defaults(func=cmd_run)

    table = sub.add_parser("table", help="run a (gamma, delta) sweep from a config file")
    table.add_argument("--config", required=True)
    table.add_argument("--out", default=None)
    table.add_argument("--seed", type=int, default=None, help="override the base seed")
    table.add_argument("--jobs", type=int, default=1, help="concurrent rows")
    table.set_defaults(func=cmd_table)

    val = sub.add_parser("validate", help="run the built-in property checks")
    val.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="[%(levelname)s] %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
