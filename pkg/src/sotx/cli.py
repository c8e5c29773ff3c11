"""Command-line pipeline: generate, solve, verify, scan.

Exit codes: 0 success / all checks passed, 1 a verification or assumption
check failed, 2 usage or file errors. All randomness flows through the
seed recorded in the outputs; reports embed the resolved config hash so
every number is traceable to its parameters.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from sotx import figures
from sotx.config import RunConfig
from sotx.fractalgeo import (
    KernelSpec,
    ahlfors_constants,
    kernel_eval,
    kernel_mass_check,
    kernel_normalizer,
)
from sotx.io import read_cloud_csv, read_measure, write_json, write_measure
from sotx.measures import check_assumptions, discretize
from sotx.partition import (
    PartitionParams,
    assign_regions,
    build_potentials,
    inter_sign_ratio,
    regime_scan,
    signed_texture_distance,
)
from sotx.presets import make_preset
from sotx.regularize import RegularizationParams, apply_Rn, weak_error_check
from sotx.transport import (
    CostSpec,
    build_block_problem,
    check_cyclical_monotonicity,
    duality_gap,
    extract_map,
    solve_entropic,
    solve_exact,
)
from sotx.verify import (
    fractal_preservation_report,
    legendre_system_residual,
    ma_residual_inter,
    ma_residual_intra,
)

VERIFY_KINDS = ("ma", "legendre", "monotone", "fractal", "kernel",
                "weak-error", "all")


def _cost_from(config: RunConfig) -> CostSpec:
    return CostSpec(alpha=float(config["cost.alpha"]))


def _fractal_parts(measure):
    out = []
    for sign, comp in (("plus", measure.plus), ("minus", measure.minus)):
        if comp.fractal is not None:
            out.append((sign, comp.fractal))
    return out


def _maybe_regularize(measure, config: RunConfig, seed: int):
    mode = config["regularization.enabled"]
    has_fractal = bool(_fractal_parts(measure))
    apply_it = mode is True or (mode == "auto" and has_fractal)
    if not apply_it:
        return measure, None
    dp = config["regularization.delta_plus"]
    dm = config["regularization.delta_minus"]
    h = float(config["regularization.h"])
    if dp is None or dm is None:
        # radii default to fractions of the measured sign gap
        from sotx.measures import _cloud_gap

        gap = _cloud_gap(measure.plus.support_points(),
                         measure.minus.support_points())
        if not np.isfinite(gap):
            gap = 4.0 * h
        dp, dm = gap / 4.0, gap / 5.0
    spacing_ceiling = []
    for comp in (measure.plus, measure.minus):
        if comp.ac is not None:
            spacing_ceiling.append(float(comp.ac.spacing.max()))
    if spacing_ceiling:
        dp = max(dp, 1.01 * max(spacing_ceiling))
        dm = max(dm, 1.02 * max(spacing_ceiling))
    if dp == dm:
        dm *= 1.01
    params = RegularizationParams(delta_plus=float(dp), delta_minus=float(dm),
                                  h=h, n=int(config["regularization.n"]),
                                  grid_resolution=config["regularization.grid_resolution"])
    return apply_Rn(measure, params, seed=seed), params


def _solve_pipeline(mu, nu, config: RunConfig, require_signed_balance=True):
    cost = _cost_from(config)
    seed = config.seed
    report = check_assumptions(mu, nu, cost, kernel_h=float(config["kernel.h"]),
                               seed=seed)
    mu_r, params = _maybe_regularize(mu, config, seed)
    nu_r, _ = _maybe_regularize(nu, config, seed + 1)
    mu_clouds = discretize(mu_r)
    nu_clouds = discretize(nu_r)
    problem = build_block_problem(mu_clouds, nu_clouds, cost,
                                  require_signed_balance=require_signed_balance)
    if config["solver.kind"] == "entropic":
        plan, duals = solve_entropic(problem, float(config["solver.epsilon"]))
    else:
        plan, duals = solve_exact(problem, cap=int(config["solver.cap"]))
    tmap = extract_map(plan, problem)
    pot = build_potentials(duals, problem)
    labels = assign_regions(pot, tmap, PartitionParams(
        delta=float(config["partition.delta"])))
    return {"assumptions": report, "problem": problem, "plan": plan,
            "duals": duals, "map": tmap, "potentials": pot, "labels": labels,
            "regularization": params, "mu_reg": mu_r, "nu_reg": nu_r}


def _write_map_csv(path, tmap):
    d = tmap.source_points.shape[1]
    header = [f"x{k+1}" for k in range(d)] + [f"T{k+1}" for k in range(d)] \
        + ["block", "split"]
    lines = [",".join(header)]
    for k in range(len(tmap.source_points)):
        row = [repr(float(v)) for v in tmap.source_points[k]]
        row += [repr(float(v)) for v in tmap.image[k]]
        row += [tmap.dominant_block[k], str(bool(tmap.split[k]))]
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n")


def cmd_generate(args) -> int:
    out = Path(args.out)
    params = {}
    for key in ("depth", "resolution", "n", "seed"):
        val = getattr(args, key, None)
        if val is not None:
            params[key] = val
    if args.preset == "gaussian-signed":
        params["signed"] = not args.no_minus
    mu, nu = make_preset(args.preset, **params)
    mu_path = write_measure(mu, out, "mu")
    nu_path = write_measure(nu, out, "nu")
    if not args.no_figures:
        figures.plot_measure_pair(mu, nu, out / "measures.png")
    print(f"wrote {mu_path} and {nu_path}")
    return 0


def cmd_solve(args) -> int:
    config = RunConfig.load(args.config, seed=args.seed)
    if args.solver:
        config.data["solver"]["kind"] = args.solver
    mu = read_measure(args.mu)
    nu = read_measure(args.nu)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = _solve_pipeline(mu, nu, config)
    report = result["assumptions"]
    write_json(out / "assumptions.json", report.to_dict())
    if report.hard_failure:
        print("assumption hard failure (H3/H4); aborting", file=sys.stderr)
        print(f"diagnostics in {out / 'assumptions.json'}", file=sys.stderr)
        return 1
    plan, duals, problem = result["plan"], result["duals"], result["problem"]
    tmap, labels = result["map"], result["labels"]
    gap = duality_gap(plan, duals, problem)
    r_value = inter_sign_ratio(plan)
    d_st = signed_texture_distance(plan, problem)
    write_json(out / "plan.json", plan.to_dict())
    write_json(out / "duals.json", duals.to_dict())
    write_json(out / "labels.json", labels.to_dict())
    _write_map_csv(out / "map.csv", tmap)
    summary = {
        "config_hash": config.hash(),
        "config": config.to_dict(),
        "objective": plan.objective,
        "duality_gap": gap,
        "marginal_error": plan.marginal_error,
        "inter_sign_mass": {"pm": plan.block_mass("pm"),
                            "mp": plan.block_mass("mp")},
        "R": r_value,
        "d_ST": d_st,
        "region_masses": labels.masses,
        "unassigned_mass": labels.unassigned_mass,
        "split_rows": int(tmap.n_split),
        "solver": plan.solver,
        "assumptions_pass": report.pass_flags,
    }
    write_json(out / "summary.json", summary)
    if not args.no_figures:
        figures.plot_measure_pair(result["mu_reg"], result["nu_reg"],
                                  out / "measures.png")
        figures.plot_map(tmap, out / "map.png")
        figures.plot_labels(tmap, labels, out / "labels.png")
    print(f"objective {plan.objective:.6g}  gap {gap:.3e}")
    print(f"inter-sign split pm={plan.block_mass('pm'):.6g} "
          f"mp={plan.block_mass('mp'):.6g}  R={r_value:.4f}  d_ST={d_st:.6g}")
    print("region masses: " + "  ".join(
        f"{k}={v:.6g}" for k, v in labels.masses.items() if v > 0))
    return 0


def _check_kernel(mu, nu, config, out, no_figures) -> tuple[bool, dict]:
    parts = _fractal_parts(mu) + (_fractal_parts(nu) if nu is not None else [])
    if not parts:
        raise ValueError("kernel check needs a measure with a fractal part")
    tol = float(config["verify.kernel_mass_tol"])
    seed = config.seed
    entries = []
    ok = True
    sign, part = parts[0][0], parts[0][1]
    for h in config["verify.kernel_h_list"]:
        spec = KernelSpec(ds=part.ds, h=float(h), e_sample=part,
                          nodes=int(config["kernel.nodes"]), seed=seed)
        kernel_normalizer(spec)
        mass = kernel_mass_check(spec, seed=seed + 17)
        # support: outside the profile radius and away from the sample
        far = part.points.max(axis=0) + 10.0 * h
        support_zero = float(kernel_eval(spec, far[None, :])[0]) == 0.0
        entry = {"h": h, "z_h": spec.z_h, "z_h_mc_error": spec.z_h_error,
                 "kernel_mass": mass, "mass_pass": abs(mass - 1.0) <= tol,
                 "support_zero": support_zero}
        ok = ok and entry["mass_pass"] and support_zero
        entries.append(entry)
    # bandwidth scaling of the normalizer across dyadic h
    diam = part.diameter()
    oct_lo, oct_hi = config["verify.z_scaling_octaves"]
    hs = [diam * 2.0 ** (-k) for k in range(int(oct_lo), int(oct_hi) + 1)]
    zs = []
    for h in hs:
        spec = KernelSpec(ds=part.ds, h=h, e_sample=part,
                          nodes=int(config["kernel.nodes"]), seed=seed)
        zs.append(kernel_normalizer(spec) / h ** part.dim)
    ahl = ahlfors_constants(part, part.ds, seed=seed,
                            max_ratio=float(config["verify.ahlfors_max_ratio"]))
    z_ratio = max(zs) / min(zs)
    z_bound = ahl.ratio * 1.2
    z_pass = z_ratio <= z_bound
    ok = ok and z_pass
    report = {"per_h": entries,
              "z_scaling": {"h": hs, "z_over_hd": zs, "ratio": z_ratio,
                            "bound": z_bound, "pass": z_pass},
              "ahlfors": ahl.to_dict(), "pass": ok}
    return ok, report


def _check_weak_error(mu, nu, config, out, no_figures) -> tuple[bool, dict]:
    parts = _fractal_parts(mu) + (_fractal_parts(nu) if nu is not None else [])
    if not parts:
        raise ValueError("weak-error check needs a fractal part")
    part = parts[0][1]
    ok = True
    reports = []
    for h in config["verify.weak_error_h"]:
        spec = KernelSpec(ds=part.ds, h=float(h), e_sample=part,
                          nodes=int(config["kernel.nodes"]), seed=config.seed)
        rep = weak_error_check(part, spec, seed=config.seed)
        reports.append({"h": h, "max_error": rep["max_error"],
                        "bound": part.mass * float(h), "pass": rep["pass"]})
        ok = ok and rep["pass"]
        if not no_figures:
            figures.plot_weak_error(rep, out / f"weak_error_h{h:g}.png")
    return ok, {"per_h": reports, "pass": ok}


def _check_monotone(mu, nu, config, out, no_figures) -> tuple[bool, dict]:
    result = _solve_pipeline(mu, nu, config)
    rep = check_cyclical_monotonicity(
        result["plan"], _cost_from(config), result["problem"],
        maxlen=int(config["verify.monotone_maxlen"]),
        samples=int(config["verify.monotone_samples"]), seed=config.seed)
    return rep["pass"], rep


def _check_legendre(mu, nu, config, out, no_figures) -> tuple[bool, dict]:
    config.data["solver"]["kind"] = "exact"
    result = _solve_pipeline(mu, nu, config)
    rep = legendre_system_residual(result["potentials"])
    tol = float(config["verify.legendre_scaled_tol"])
    ok = rep["scaled_max"] <= tol
    rep["tolerance"] = tol
    rep["pass"] = bool(ok)
    gap = duality_gap(result["plan"], result["duals"], result["problem"])
    rep["duality_gap"] = gap
    return ok, rep


def _check_ma(mu, nu, config, out, no_figures) -> tuple[bool, dict]:
    if mu.plus.ac is None or nu.plus.ac is None:
        raise ValueError("ma check needs absolutely continuous plus parts")
    config.data["solver"]["kind"] = "exact"
    cost = _cost_from(config)
    resolutions = [int(n) for n in config["verify.ma_resolutions"]]
    rate = float(config["verify.ma_rate"])
    ny_ratio = nu.plus.ac.values.shape[0] / mu.plus.ac.values.shape[0]
    norms, spacings = [], []
    for n in resolutions:
        f = mu.plus.ac.rebin(n)
        g = nu.plus.ac.rebin(max(4, int(round(ny_ratio * n))))
        from sotx.measures import Cloud

        mu_c = (Cloud(f.centers(), f.values.ravel() * f.cell_volume),
                Cloud.empty(mu.dim))
        nu_c = (Cloud(g.centers(), g.values.ravel() * g.cell_volume),
                Cloud.empty(mu.dim))
        problem = build_block_problem(mu_c, nu_c, cost)
        plan, duals = solve_exact(problem, cap=int(config["solver.cap"]))
        pot = build_potentials(duals, problem)
        field = ma_residual_intra(pot, f, g)
        norms.append(field.max_norm)
        spacings.append(field.spacing)
    ratios = [norms[k] / norms[k + 1] for k in range(len(norms) - 1)]
    intra_pass = all(r >= rate for r in ratios)
    report = {"intra": {"resolutions": resolutions, "max_norms": norms,
                        "spacings": spacings, "ratios": ratios,
                        "rate_required": rate, "pass": intra_pass}}
    ok = intra_pass
    if not no_figures:
        figures.plot_decay(spacings, norms, out / "ma_intra_decay.png")
    if nu.minus.ac is not None:
        inter_norms, inter_spacings = [], []
        for n in resolutions:
            f = mu.plus.ac.rebin(n)
            g = nu.minus.ac.rebin(max(4, int(round(ny_ratio * n))))
            from sotx.measures import Cloud

            mu_c = (Cloud(f.centers(), f.values.ravel() * f.cell_volume),
                    Cloud.empty(mu.dim))
            nu_c = (Cloud.empty(mu.dim),
                    Cloud(g.centers(), g.values.ravel() * g.cell_volume))
            problem = build_block_problem(mu_c, nu_c, cost,
                                          require_signed_balance=False)
            plan, duals = solve_exact(problem, cap=int(config["solver.cap"]))
            pot = build_potentials(duals, problem)
            tmap = extract_map(plan, problem)
            res_a, res_b = ma_residual_inter(pot, tmap, f, g, cost)
            inter_norms.append(max(res_a.max_norm, res_b.max_norm))
            inter_spacings.append(res_a.spacing)
        inter_ratios = [inter_norms[k] / inter_norms[k + 1]
                        for k in range(len(inter_norms) - 1)]
        inter_pass = all(r > 1.0 for r in inter_ratios)
        report["inter"] = {"max_norms": inter_norms, "ratios": inter_ratios,
                           "pass": inter_pass}
        ok = ok and inter_pass
        if not no_figures:
            figures.plot_decay(inter_spacings, inter_norms,
                               out / "ma_inter_decay.png")
    report["pass"] = bool(ok)
    return ok, report


def _fractal_cloud_slice(measure, sign: str) -> slice:
    """Rows of the discretized cloud occupied by the fractal sample."""
    comp = measure.plus if sign == "plus" else measure.minus
    n_before = 0
    for grid in (comp.ac, comp.smoothed):
        if grid is not None:
            n_before += int((grid.values.ravel() > 0).sum())
    if comp.atoms is not None:
        n_before += len(comp.atoms.masses)
    n = len(comp.fractal.weights)
    return slice(n_before, n_before + n)


def _check_fractal(mu, nu, config, out, no_figures) -> tuple[bool, dict]:
    parts = _fractal_parts(mu)
    if not parts:
        raise ValueError("fractal check needs a source fractal part")
    sign, part = parts[0]
    config.data["solver"]["kind"] = "exact"
    config.data["regularization"]["enabled"] = False  # transport the raw sample
    result = _solve_pipeline(mu, nu, config)
    tmap = result["map"]
    sl = _fractal_cloud_slice(mu, sign)
    offset = 0 if sign == "plus" else result["problem"].source_plus.size
    rows = slice(offset + sl.start, offset + sl.stop)
    image = tmap.image[rows]
    rep = fractal_preservation_report(
        part, image, seed=config.seed,
        dim_tolerance=float(config["verify.dim_tolerance"]),
        ahlfors_max_ratio=float(config["verify.ahlfors_max_ratio"]))
    if not no_figures:
        figures.plot_dimension_fit(rep.d_hat_image, out / "fractal_image_fit.png",
                                   ds=part.ds)
    return rep.passed, rep.to_dict()


CHECKS = {
    "kernel": _check_kernel,
    "weak-error": _check_weak_error,
    "monotone": _check_monotone,
    "legendre": _check_legendre,
    "ma": _check_ma,
    "fractal": _check_fractal,
}


def cmd_verify(args) -> int:
    config = RunConfig.load(args.config, seed=args.seed)
    if "kernel_h_list" not in config.data["verify"]:
        config.data["verify"]["kernel_h_list"] = [0.2, 0.1, 0.05]
    mu = read_measure(args.mu)
    nu = read_measure(args.nu) if args.nu else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    kinds = list(CHECKS) if args.kind == "all" else [args.kind]
    overall = True
    combined = {"config_hash": config.hash(), "checks": {}}
    for kind in kinds:
        if args.kind == "all" and kind in ("monotone", "legendre", "ma",
                                           "fractal") and nu is None:
            continue
        try:
            ok, report = CHECKS[kind](mu, nu, config, out, args.no_figures)
        except ValueError as exc:
            if args.kind == "all":
                combined["checks"][kind] = {"skipped": str(exc)}
                continue
            raise
        combined["checks"][kind] = report
        overall = overall and ok
        print(f"verify {kind}: {'PASS' if ok else 'FAIL'}")
    write_json(out / "verify_report.json", combined)
    return 0 if overall else 1


def cmd_scan(args) -> int:
    config = RunConfig.load(args.config, seed=args.seed)
    path = Path(args.series)
    try:
        pts, w = None, None
        values = []
        for line in path.read_text().strip().splitlines():
            line = line.strip()
            if not line:
                continue
            values.append(float(line.split(",")[0]))
    except ValueError as exc:
        print(f"malformed series CSV: {exc}", file=sys.stderr)
        return 2
    rows = regime_scan(values, window=args.window, stride=args.stride,
                       cost=_cost_from(config))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["t,R,d_ST"]
    for r in rows:
        if r["R"] is None:
            lines.append(f"{r['t']},,")
        else:
            lines.append(f"{r['t']},{r['R']!r},{r['d_ST']!r}")
    (out / "scan.csv").write_text("\n".join(lines) + "\n")
    if not args.no_figures:
        figures.plot_scan(rows, out / "scan.png")
    print(f"wrote {out / 'scan.csv'} ({len(rows)} steps)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sotx",
        description="signed optimal transport with fractal components")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write a preset measure pair")
    gen.add_argument("--preset", required=True)
    gen.add_argument("--depth", type=int)
    gen.add_argument("--resolution", type=int)
    gen.add_argument("--n", type=int)
    gen.add_argument("--no-minus", action="store_true",
                     help="drop the minus components where supported")
    _common(gen)
    gen.set_defaults(func=cmd_generate)

    slv = sub.add_parser("solve", help="run the full transport pipeline")
    slv.add_argument("--mu", required=True)
    slv.add_argument("--nu", required=True)
    slv.add_argument("--solver", choices=["exact", "entropic"])
    _common(slv)
    slv.set_defaults(func=cmd_solve)

    ver = sub.add_parser("verify", help="structure checks with exit status")
    ver.add_argument("kind", choices=VERIFY_KINDS)
    ver.add_argument("--mu", required=True)
    ver.add_argument("--nu")
    _common(ver)
    ver.set_defaults(func=cmd_verify)

    scn = sub.add_parser("scan", help="windowed signed-series diagnostics")
    scn.add_argument("--series", required=True)
    scn.add_argument("--window", type=int, required=True)
    scn.add_argument("--stride", type=int, required=True)
    _common(scn)
    scn.set_defaults(func=cmd_scan)
    return parser


def _common(p):
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="out")
    p.add_argument("--no-figures", action="store_true")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, PermissionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
