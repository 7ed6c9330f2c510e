"""Experiment drivers: Carleman sweeps, identity refinement, stability scans and
admissibility comparisons.

Every driver returns an :class:`ExperimentReport` whose JSON form depends only
on the configuration and seed. Trials run on a thread pool but each has its
own generator seeded from ``(seed, trial)`` and results are collected in
trial order.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .carleman import constant_sweep, identity_residual
from .config import Config, modes_function
from .families import polynomial_z, random_smooth_v, random_source_modes
from .geometry import distance_extrema, min_observation_time, observation_boundary, select_beta
from .grid import build_grid, fmt
from .inverse import (
    ObservationOperator,
    add_noise,
    discrepancy_alpha,
    range_norm,
    reconstruct,
    synthesize_data,
)


# ---------------------------------------------------------------- serialization


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return _Float(float(obj))
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    return obj


class _Float(float):
    def __repr__(self) -> str:
        if not math.isfinite(self):
            return "null"
        return fmt(self)


def _encode(o, indent, level):
    pad = "\n" + " " * (indent * (level + 1)) if indent else ""
    end = "\n" + " " * (indent * level) if indent else ""
    if isinstance(o, _Float):
        yield repr(o)
    elif isinstance(o, dict):
        if not o:
            yield "{}"
            return
        yield "{"
        for i, (k, v) in enumerate(sorted(o.items())):
            yield ("," if i else "") + pad + json.dumps(k) + ": "
            yield from _encode(v, indent, level + 1)
        yield end + "}"
    elif isinstance(o, list):
        if not o:
            yield "[]"
            return
        yield "["
        for i, v in enumerate(o):
            yield ("," if i else "") + pad
            yield from _encode(v, indent, level + 1)
        yield end + "]"
    else:
        yield json.dumps(o)


def dumps(obj, indent: int = 2) -> str:
    """Deterministic JSON: sorted keys, floats with 17 significant digits, non-finite as null."""
    return "".join(_encode(_plain(obj), indent, 0)) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj), encoding="utf-8")


def write_csv(path, columns: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(row.get(c)) for c in columns])


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return fmt(v) if math.isfinite(v) else ""
    return str(v)


# ---------------------------------------------------------------- report


@dataclass
class ExperimentReport:
    kind: str
    records: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    columns: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"kind": self.kind, "records": self.records, "summary": self.summary, "provenance": self.provenance}

    def to_json(self) -> str:
        return dumps(self.as_dict())

    def write(self, out_dir, stem: str | None = None) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = stem or self.kind
        jpath, cpath = out / f"{stem}_report.json", out / f"{stem}_table.csv"
        jpath.write_text(self.to_json(), encoding="utf-8")
        write_csv(cpath, self.columns or sorted({k for r in self.records for k in r}), self.records)
        return jpath, cpath


def provenance(cfg: Config, **extra) -> dict:
    return {"config_hash": cfg.hash(), "seed": cfg.seed, "version": __version__, **extra}


def _trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, trial]))


def _map(fn, items, threads: int | None):
    items = list(items)
    if threads == 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def loglog_slope(x, y) -> float:
    x, y = np.asarray(x, float), np.asarray(y, float)
    if len(x) < 2 or np.any(x <= 0) or np.any(y <= 0):
        return math.nan
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


# ---------------------------------------------------------------- geometry / identity / Carleman


def geometry_summary(cfg: Config) -> dict:
    dom, x0 = cfg.domain, cfg.x0
    ext = distance_extrema(dom, x0)
    t_min = min_observation_time(dom, x0)
    gamma = observation_boundary(dom, x0)
    out = {
        "d0": ext.d0,
        "d1": ext.d1,
        "T_min": t_min,
        "T": cfg.T,
        "admissible": cfg.T > t_min,
        "observed_faces": gamma.observed_names,
        "faces": [
            {"name": f.name, "normal": list(f.normal), "observed": f.observed,
             "segments": [list(seg) for seg in f.segments]}
            for f in gamma.faces
        ],
    }
    if cfg.T > t_min:
        out["beta"] = cfg.params().beta
        out["beta_selected"] = select_beta(dom, x0, cfg.T)
    return out


def identity_study(cfg: Config, refinements=None) -> ExperimentReport:
    """Identity residual for ``z = t * bubble`` on each grid of the refinement list."""
    refinements = refinements or cfg.doc["grid"]["refinements"]
    params = cfg.params(s=1.0)
    records = []
    for nx in refinements:
        grid = build_grid(cfg.domain, nx, cfg.T, cfg.cfl)
        ledger = identity_residual(polynomial_z(grid), params, grid)
        rec = {"nx": nx, "normalized_residual": ledger.normalized(),
               "normalized_residual_without_cross": ledger.normalized_without_cross()}
        rec.update(ledger.as_dict())
        records.append(rec)
    res = [r["normalized_residual"] for r in records]
    monotone = all(b < a for a, b in zip(res, res[1:]))
    orders = [math.log2(a / b) for a, b in zip(res, res[1:]) if a > 0 and b > 0]
    summary = {"monotone": monotone, "finest": res[-1], "orders": orders, "lambda": params.lam,
               "beta": params.beta, "s": params.s}
    cols = ["nx", "normalized_residual", "normalized_residual_without_cross", "J1", "J2", "J3", "J4",
            "B0", "B1", "terminal_cross", "inner_product"]
    return ExperimentReport("identity", records, summary, provenance(cfg), cols)


def carleman_study(cfg: Config, threads: int | None = None, n_tests: int | None = None) -> ExperimentReport:
    """Carleman ratio sweeps over ``s`` for seeded random test functions."""
    n_tests = int(cfg.doc["carleman"]["test_functions"] if n_tests is None else n_tests)
    grid = build_grid(cfg.domain, cfg.nx, cfg.T, cfg.cfl)
    params = cfg.params()
    boundary = observation_boundary(cfg.domain, cfg.x0)
    s_list = cfg.s_list

    def run(i):
        v, F = random_smooth_v(grid, _trial_rng(cfg.seed, i))
        return constant_sweep(v, F, params, s_list, grid, boundary)

    reports = _map(run, range(n_tests), threads)
    records = []
    for i, rep in enumerate(reports):
        for e in rep.entries:
            records.append({"test": i, "s": e.s, "lhs": e.lhs, "rhs_source": e.rhs_source,
                            "rhs_boundary": e.rhs_boundary, "rhs_terminal": e.rhs_terminal,
                            "ratio": e.ratio, "log_offset": e.log_offset})
    ratios = [r["ratio"] for r in records]
    summary = {
        "C_hat": max(ratios) if ratios else math.nan,
        "median_ratio": float(np.median(ratios)) if ratios else math.nan,
        "all_bounded": all(rep.bounded() for rep in reports),
        "per_test": [rep.summary() for rep in reports],
        "lambda": params.lam, "beta": params.beta, "nx": cfg.nx, "s_list": s_list,
    }
    cols = ["test", "s", "lhs", "rhs_source", "rhs_boundary", "rhs_terminal", "ratio", "log_offset"]
    return ExperimentReport("carleman", records, summary, provenance(cfg), cols)


# ---------------------------------------------------------------- stability


def _source_for_trial(cfg: Config, rng: np.random.Generator):
    given = cfg.source()
    if given is not None:
        return given
    return modes_function(random_source_modes(rng, cfg.domain.dim), cfg.domain)


def stability_scan(cfg: Config, threads: int | None = None, op: ObservationOperator | None = None) -> ExperimentReport:
    """Forward ratios and reconstructions from fine-grid data at each noise level.

    Two errors are recorded for each reconstruction: against the true source
    (includes the discretisation mismatch between data and inversion grids)
    and against the pseudo-inverse reconstruction of the noiseless data, which
    isolates the propagation of the added noise. The discrepancy rule uses the
    noise component inside the range of the discrete operator, which is the
    part the reconstruction can respond to.
    """
    ex = cfg.experiment
    n_trials = int(ex["trials"])
    deltas = [float(d) for d in ex["noise_levels"]]
    cols = ["trial", "delta", "alpha", "alpha_attained", "iterations", "converged", "residual",
            "error_vs_oracle", "error_vs_truth", "ratio", "model_error"]
    if n_trials == 0:
        return ExperimentReport("stability", [], {"trials": 0}, provenance(cfg), cols)
    obs = cfg.observation()
    op = op or ObservationOperator(obs, max_columns=int(cfg.doc["grid"]["assembly_cap"]))
    op.assemble()
    op.scaled_svd()
    factor = int(cfg.doc["grid"]["data_factor"])
    tau, alpha0, max_iter = float(ex["tau"]), float(ex["alpha_noiseless"]), int(ex["max_iter"])

    def run(i):
        rng = _trial_rng(cfg.seed, i)
        f = _source_for_trial(cfg, rng)
        truth = op.source_vector(f)
        ratio = op.norm_omega(truth) / op.norm_sigma(op.matvec(truth))
        g = synthesize_data(obs, f, factor, coarse=op)
        model_error = op.norm_sigma(g - op.matvec(truth)) / op.norm_sigma(g)
        oracle = op.pinv_solution(g)

        def errors(fhat):
            return (op.norm_omega(fhat - oracle) / op.norm_omega(oracle),
                    op.norm_omega(fhat - truth) / op.norm_omega(truth))

        rows = []
        r = reconstruct(g, op, alpha0, max_iter)
        e_or, e_tr = errors(r.f)
        rows.append({"trial": i, "delta": 0.0, "alpha": alpha0, "alpha_attained": True, "iterations": r.iterations,
                     "converged": r.converged, "residual": r.residual, "error_vs_oracle": e_or,
                     "error_vs_truth": e_tr, "ratio": ratio, "model_error": model_error})
        for delta in deltas:
            gn, _ = add_noise(op, g, delta, rng)
            alpha, ok = discrepancy_alpha(op, gn, range_norm(op, gn - g), tau, in_range=True)
            r = reconstruct(gn, op, alpha, max_iter)
            e_or, e_tr = errors(r.f)
            rows.append({"trial": i, "delta": delta, "alpha": alpha, "alpha_attained": ok,
                         "iterations": r.iterations, "converged": r.converged, "residual": r.residual,
                         "error_vs_oracle": e_or, "error_vs_truth": e_tr, "ratio": ratio,
                         "model_error": model_error})
        return rows

    records = [row for rows in _map(run, range(n_trials), threads) for row in rows]
    clean = [r for r in records if r["delta"] == 0.0]
    mean_oracle = [float(np.mean([r["error_vs_oracle"] for r in records if r["delta"] == d])) for d in deltas]
    mean_truth = [float(np.mean([r["error_vs_truth"] for r in records if r["delta"] == d])) for d in deltas]
    sigma_min = op.sigma_min()
    summary = {
        "trials": n_trials,
        "noise_levels": deltas,
        "C_emp": max(r["ratio"] for r in clean),
        "C_bound": 1.0 / sigma_min,
        "sigma_min": sigma_min,
        "sigma_max": float(op.singular_values()[0]),
        "noiseless_error_vs_oracle": max(r["error_vs_oracle"] for r in clean),
        "noiseless_error_vs_truth": max(r["error_vs_truth"] for r in clean),
        "model_error_median": float(np.median([r["model_error"] for r in clean])),
        "mean_error_vs_oracle": mean_oracle,
        "mean_error_vs_truth": mean_truth,
        "slope": loglog_slope(deltas, mean_oracle),
        "slope_vs_truth": loglog_slope(deltas, mean_truth),
        "all_converged": all(r["converged"] for r in records),
        "nx": op.grid.nx[0], "data_nx": op.grid.nx[0] * factor, "T": obs.T,
    }
    return ExperimentReport("stability", records, summary, provenance(cfg, threads_independent=True), cols)


# ---------------------------------------------------------------- admissibility


def _empirical_constant(op: ObservationOperator, seed: int, n: int) -> float:
    """``max ||f|| / ||A f||`` over ``n`` seeded random smooth sources."""
    best = 0.0
    for i in range(n):
        f = modes_function(random_source_modes(_trial_rng(seed, i), op.grid.dim), op.config.domain)
        v = op.source_vector(f)
        best = max(best, op.norm_omega(v) / op.norm_sigma(op.matvec(v)))
    return best


def quarter_vanishing_R(domain):
    """``R = t`` on the lower-corner quarter of the domain, ``1`` elsewhere, so ``R(., 0)`` vanishes there."""
    lo, sides = np.asarray(domain.lower), np.asarray(domain.sides)
    cut = lo + sides * (0.5 if domain.dim == 2 else 0.25)

    def R(*args):
        *xs, t = args
        mask = np.ones(np.broadcast(*args).shape, dtype=bool)
        for i, x in enumerate(xs):
            mask &= x < cut[i] - 1e-12
        return np.where(mask, t, 1.0) * np.ones_like(mask, dtype=float)

    return R


def admissibility_compare(cfg: Config, t_values=None, threads: int | None = None) -> ExperimentReport:
    """``sigma_min`` and empirical constants per observation time, plus subset and ``R(., 0)`` checks."""
    ex = cfg.experiment
    t_min = min_observation_time(cfg.domain, cfg.x0)
    if t_values is None:
        t_values = [float(k) * t_min for k in ex["t_factors"]]
    t_values = sorted(float(t) for t in t_values)
    n = max(int(ex["trials"]), 1)
    cap = int(cfg.doc["grid"]["assembly_cap"])

    def run(T):
        op = ObservationOperator(cfg.observation(T=T), max_columns=cap)
        return {"T": T, "T_over_T_min": T / t_min, "admissible": T > t_min, "sigma_min": op.sigma_min(),
                "sigma_max": float(op.singular_values()[0]), "C_emp": _empirical_constant(op, cfg.seed, n)}

    records = _map(run, t_values, threads)
    summary: dict = {"T_min": t_min, "t_values": t_values}
    if len(records) > 1:
        sig = [r["sigma_min"] for r in records]
        cem = [r["C_emp"] for r in records]
        summary["sigma_min_monotone"] = all(b >= a for a, b in zip(sig, sig[1:]))
        summary["C_emp_monotone"] = all(b <= a for a, b in zip(cem, cem[1:]))
        adm = [r for r in records if r["admissible"]]
        bad = [r for r in records if not r["admissible"]]
        if adm and bad:
            summary["inadmissible_strictly_worse"] = max(r["C_emp"] for r in adm) < min(r["C_emp"] for r in bad)

    # checks at the configured (admissible) time
    if cfg.T > t_min:
        base = ObservationOperator(cfg.observation(override=cfg.override), max_columns=cap)
        observed = base.boundary.observed_names
        keep = observed[: max(1, len(observed) // 2)]
        mask = np.isin(np.asarray(base.layout.face), keep)
        rows = np.broadcast_to(mask, base.trace_shape).reshape(-1)
        M = base.assemble() / math.sqrt(base.cell)
        sub_exact = float(np.linalg.svd(M[rows], compute_uv=False)[-1])
        sub_op = ObservationOperator(cfg.observation(faces=keep), max_columns=cap).sigma_min()
        summary["subset"] = {"faces": keep, "sigma_min_full": base.sigma_min(), "sigma_min_subset": sub_op,
                             "sigma_min_row_deletion": sub_exact,
                             "monotone": sub_exact <= base.sigma_min() and sub_op <= base.sigma_min() * (1 + 1e-12)}
        co = cfg.coefficients()
        obs_v = cfg.observation(override=True)
        one = ObservationOperator(replace(obs_v, coefficients=replace(co, R=1.0)), max_columns=cap).sigma_min()
        vanish = replace(co, R=quarter_vanishing_R(cfg.domain))
        quarter = ObservationOperator(replace(obs_v, coefficients=vanish), max_columns=cap).sigma_min()
        summary["r0"] = {"sigma_min_R_one": one, "sigma_min_R_quarter_vanishing": quarter, "drop": quarter < one}
    return ExperimentReport("admissibility", records, summary, provenance(cfg),
                            ["T", "T_over_T_min", "admissible", "sigma_min", "sigma_max", "C_emp"])
