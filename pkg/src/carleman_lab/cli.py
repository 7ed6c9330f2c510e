"""Command-line entry point.

Exit status: 0 success, 2 invalid configuration or inadmissible setup,
3 numerical failure (CFL, non-finite values), 4 a verification check failed.
Failures also leave ``error.json`` in the output directory.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from pathlib import Path

import numpy as np

from .config import Config, ConfigError, load, modes_function
from .experiments import (
    admissibility_compare,
    carleman_study,
    geometry_summary,
    identity_study,
    stability_scan,
    write_csv,
    write_json,
)
from .forward import NumericalError, neumann_trace, solve_wave
from .geometry import GeometryError
from .grid import GridError, fmt, write_field, write_field_csv, write_trace_csv
from .inverse import (
    AdmissibilityError,
    ObservationOperator,
    add_noise,
    discrepancy_alpha,
    reconstruct,
    synthesize_data,
)

COMMANDS = ("geometry", "forward", "verify-identity", "verify-carleman", "invert", "stability",
            "compare-admissibility")

IDENTITY_TOL = 5e-2


class CheckFailed(RuntimeError):
    """A verification command ran but its assertion did not hold."""


def _default_source(cfg: Config):
    """Configured source, else the lowest sine mode of the box."""
    f = cfg.source()
    return f if f is not None else modes_function([[1] * cfg.domain.dim + [1.0]], cfg.domain)


# ---------------------------------------------------------------- commands


def cmd_geometry(cfg: Config, out: Path, args) -> None:
    write_json(out / "geometry.json", geometry_summary(cfg))


def cmd_forward(cfg: Config, out: Path, args) -> None:
    op = ObservationOperator(cfg.observation())
    grid = op.grid
    f = op.source_field(op.source_vector(_default_source(cfg)))
    u = solve_wave(op.coeffs, op.coeffs.R * f[None], grid)
    trace = neumann_trace(u, op.layout, grid)
    dt_trace = op.trace(op.apply_forward(op.source_vector(f)))
    norms = (trace.norm(), dt_trace.norm())
    if not all(math.isfinite(v) for v in norms):
        raise NumericalError("boundary traces overflowed; the solution grows without bound on this grid")
    write_field(out / "u.bin", u.values)
    write_field(out / "f.bin", f)
    if grid.dim == 1 or max(grid.nx) <= 64:
        write_field_csv(out / "f.csv", f, grid)
    write_trace_csv(out / "dnu_u.csv", trace)
    write_trace_csv(out / "dt_dnu_u.csv", dt_trace)
    write_json(out / "forward.json", {
        "nx": list(grid.nx), "nt": grid.nt, "h": grid.h, "dt": grid.dt, "T": grid.T,
        "max_abs_u": float(np.max(np.abs(u.values))),
        "trace_norm": norms[0], "dt_trace_norm": norms[1],
        "admissibility": op.info,
    })


def cmd_verify_identity(cfg: Config, out: Path, args) -> None:
    rep = identity_study(cfg)
    write_json(out / "identity_report.json", rep.as_dict())
    write_csv(out / "identity_report.csv", rep.columns, rep.records)
    ok = rep.summary["monotone"] and rep.summary["finest"] <= IDENTITY_TOL
    if not ok:
        raise CheckFailed(f"identity residuals {[r['normalized_residual'] for r in rep.records]} "
                          f"are not decreasing to below {IDENTITY_TOL:g}")


def cmd_verify_carleman(cfg: Config, out: Path, args) -> None:
    rep = carleman_study(cfg, threads=args.threads)
    rep.write(out, "carleman")
    # worst test function in the six-column layout
    cols = ["s", "lhs", "rhs_source", "rhs_boundary", "rhs_terminal", "ratio"]
    worst = max(range(len(rep.summary["per_test"])), key=lambda i: rep.summary["per_test"][i]["C_hat"])
    write_csv(out / "carleman_report.csv", cols, [r for r in rep.records if r["test"] == worst])
    write_json(out / "carleman_summary.json", {"C_hat": rep.summary["C_hat"], "worst_test": worst,
                                               "all_bounded": rep.summary["all_bounded"],
                                               "provenance": rep.provenance})
    if not rep.summary["all_bounded"]:
        raise CheckFailed("Carleman ratio not bounded over the s sweep")


def cmd_invert(cfg: Config, out: Path, args) -> None:
    ex = cfg.experiment
    obs = cfg.observation()
    op = ObservationOperator(obs, max_columns=int(cfg.doc["grid"]["assembly_cap"]))
    f = _default_source(cfg)
    g = synthesize_data(obs, f, int(cfg.doc["grid"]["data_factor"]), coarse=op)
    delta = float(ex["noise"])
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
    noise = 0.0
    if delta > 0:
        g, noise = add_noise(op, g, delta, rng)
    assembled = op.n_unknowns <= op.max_columns
    if assembled:
        op.assemble()
    if "alpha" in ex:
        alpha = float(ex["alpha"])
    elif delta > 0 and assembled:
        alpha, _ = discrepancy_alpha(op, g, noise, float(ex["tau"]))
    else:
        alpha = float(ex["alpha_noiseless"])
    res = reconstruct(g, op, alpha, int(ex["max_iter"]), truth=f)
    f_hat = op.source_field(res.f)
    write_field(out / "f_hat.bin", f_hat)
    write_field_csv(out / "f_hat.csv", f_hat, op.grid)
    payload = res.as_dict()
    payload.update({"noise_level": delta, "noise_norm": noise, "history": res.history})
    write_json(out / "reconstruction.json", payload)
    if args.dump_matrix:
        if not assembled:
            raise ConfigError(f"{op.n_unknowns} unknowns exceed the assembly cap {op.max_columns}")
        with open(out / "matrix.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            for row in op.assemble():
                w.writerow([fmt(v) for v in row])


def cmd_stability(cfg: Config, out: Path, args) -> None:
    stability_scan(cfg, threads=args.threads).write(out, "stability")


def cmd_compare(cfg: Config, out: Path, args) -> None:
    rep = admissibility_compare(cfg, threads=args.threads)
    rep.write(out, "admissibility")
    s = rep.summary
    failed = [k for k in ("sigma_min_monotone", "inadmissible_strictly_worse") if s.get(k) is False]
    if "subset" in s and not s["subset"]["monotone"]:
        failed.append("subset")
    if "r0" in s and not s["r0"]["drop"]:
        failed.append("r0")
    if failed:
        raise CheckFailed(f"admissibility orderings failed: {failed}")


HANDLERS = {
    "geometry": cmd_geometry,
    "forward": cmd_forward,
    "verify-identity": cmd_verify_identity,
    "verify-carleman": cmd_verify_carleman,
    "invert": cmd_invert,
    "stability": cmd_stability,
    "compare-admissibility": cmd_compare,
}


# ---------------------------------------------------------------- plumbing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="carleman-lab", description="Carleman-weight and inverse-source laboratory")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("config_pos", nargs="?", metavar="CONFIG", help="config JSON (or --config)")
    p.add_argument("out_pos", nargs="?", metavar="OUT", help="output directory (or --out)")
    p.add_argument("--config", dest="config")
    p.add_argument("--out", dest="out")
    p.add_argument("--threads", type=int, default=None, help="worker cap (default: logical cores)")
    p.add_argument("--seed", type=int, default=None, help="overrides experiment.seed")
    p.add_argument("--override-admissibility", action="store_true",
                   help="allow inadmissible T or vanishing R(., 0) for negative controls")
    p.add_argument("--dump-matrix", action="store_true", help="invert: write the assembled matrix as CSV")
    return p


def _fail(out: Path | None, code: int, exc: BaseException) -> int:
    kind = {2: "validation", 3: "numerical", 4: "verification"}[code]
    print(f"carleman-lab: {kind} error: {exc}", file=sys.stderr)
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            write_json(out / "error.json", {"status": code, "kind": kind, "type": type(exc).__name__,
                                            "message": str(exc)})
        except OSError:
            pass
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    config_path = args.config or args.config_pos
    out_dir = args.out or args.out_pos or "."
    out = Path(out_dir)
    if args.threads is None:
        args.threads = os.cpu_count() or 1
    if args.threads < 1:
        return _fail(out, 2, ConfigError("--threads must be at least 1"))
    if config_path is None:
        return _fail(out, 2, ConfigError("no config given (positional CONFIG or --config)"))
    try:
        cfg = load(config_path).with_overrides(seed=args.seed, override=args.override_admissibility)
        if args.command != "geometry":
            _check_time(cfg)
        out.mkdir(parents=True, exist_ok=True)
        stale = out / "error.json"
        if stale.exists():
            stale.unlink()
        HANDLERS[args.command](cfg, out, args)
    except CheckFailed as exc:
        return _fail(out, 4, exc)
    except NumericalError as exc:
        return _fail(out, 3, exc)
    except (ConfigError, AdmissibilityError, GeometryError, GridError, ValueError) as exc:
        return _fail(out, 2, exc)
    return 0


def _check_time(cfg: Config) -> None:
    """Reject observation times at or below the threshold before any work is done."""
    from .geometry import min_observation_time

    t_min = min_observation_time(cfg.domain, cfg.x0)
    if cfg.T <= t_min and not cfg.override:
        raise AdmissibilityError(
            f"observation-time condition violated: T={cfg.T:g} must exceed "
            f"T_min = sqrt(max|x-x0|^2 - min|x-x0|^2) = {t_min:.6g}; "
            "pass --override-admissibility for a negative control"
        )
    if not math.isfinite(cfg.T):
        raise ConfigError("T must be finite")


if __name__ == "__main__":
    sys.exit(main())
