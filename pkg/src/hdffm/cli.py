"""Command-line surface: simulate, estimate, select-r, bench, forecast.

Every command is deterministic given its flags and seeds, and embeds a
manifest (command, flags, seeds, package version) in its outputs.  The
bench driver runs replications in a process pool capped by the
``HDFFM_THREADS`` environment variable; rows are canonically sorted before
writing so the output never depends on scheduling.

Exit codes: 0 success, 2 validation error, 3 numerical error
(rank-deficient panel), 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .estimate import (
    RankDeficientError,
    common_component,
    fit_factors,
    fit_to_dict,
    goodness_of_fit,
)
from .fbasis import AGE_GRID, build_bspline, ingest_mortality, load_mortality_csv
from .forecast import ForecastConfig, cf_forecast, tnh_forecast
from .metrics import LoadingMatrix, delta_nt, epsilon_nt, mafe_msfe, phi_nt
from .panel import Panel, load_panel, load_scalar_csv, panel_to_dict, save_panel
from .select import IC2A, AbcConfig, abc_select_r, select_r_fixed
from .simulate import DgpConfig, gen_dgp

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

BENCH_HEADER = ["dgp", "N", "T", "k", "replication", "delta_sq", "epsilon_sq", "phi"]
SELECTION_HEADER = ["dgp", "N", "T", "replication", "r_hat"]


def _manifest(command: str, args: dict) -> dict:
    return {"command": command, "version": __version__, "args": args}


def _write_csv(path, header, rows, manifest: dict) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("# manifest: " + json.dumps(manifest, sort_keys=True) + "\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _load_panel_arg(path) -> Panel:
    """Panel files are JSON; all-scalar panels may come as N x T CSV."""
    if str(path).lower().endswith(".csv"):
        return load_scalar_csv(path)
    return load_panel(path)


def _worker_count(n_jobs: int) -> int:
    cap = os.environ.get("HDFFM_THREADS")
    cap = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(cap, n_jobs))


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def _dgp_config_from_dict(d: dict) -> DgpConfig:
    return DgpConfig(
        dgp=int(d["dgp"]),
        N=int(d["N"]),
        T=int(d["T"]),
        seed=int(d["seed"]),
        fixed_design_seed=int(d.get("fixed_design_seed", 12345)),
        basis_dim=int(d.get("basis_dim", 7)),
        n_factors=int(d.get("n_factors", 3)),
        target_opnorm=float(d.get("target_opnorm", 0.8)),
    )


def cmd_simulate(args) -> int:
    with open(args.config) as fh:
        cfg_dict = json.load(fh)
    cfg = _dgp_config_from_dict(cfg_dict)
    panel, truth = gen_dgp(cfg)
    manifest = _manifest("simulate", cfg_dict)
    save_panel(panel, args.out_panel, manifest=manifest)
    if args.out_truth:
        truth_doc = {
            "manifest": manifest,
            "U": truth.U.tolist(),
            "B_coeffs": truth.B_coeffs.tolist(),
            "a": truth.a.tolist(),
            "chi": panel_to_dict(truth.chi),
        }
        with open(args.out_truth, "w") as fh:
            json.dump(truth_doc, fh)
    print(json.dumps({"seed": cfg.seed, "fixed_design_seed": cfg.fixed_design_seed,
                      "dgp": cfg.dgp, "N": cfg.N, "T": cfg.T}, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------
# estimate
# ---------------------------------------------------------------------------


def cmd_estimate(args) -> int:
    panel = _load_panel_arg(args.panel)
    fit = fit_factors(panel, args.k)
    v = goodness_of_fit(panel, args.k)
    manifest = _manifest("estimate", {"panel": str(args.panel), "k": args.k})
    with open(args.out, "w") as fh:
        json.dump({**fit_to_dict(fit, manifest), "V": v}, fh)
    print(f"k={args.k} V={v:.10g}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# select-r
# ---------------------------------------------------------------------------


def cmd_select_r(args) -> int:
    panel = _load_panel_arg(args.panel)
    if args.method == "fixed":
        r = select_r_fixed(panel, args.c, args.kind, args.k_max)
        print(r)
        return EXIT_OK
    cfg = AbcConfig.for_panel(panel.N, panel.T, rng_seed=args.seed, k_max=args.k_max, P=args.P)
    r, trace = abc_select_r(panel, cfg, args.kind)
    if args.trace:
        manifest = _manifest(
            "select-r",
            {"panel": str(args.panel), "kind": args.kind, "k_max": args.k_max,
             "P": args.P, "seed": args.seed},
        )
        trace.save(args.trace, manifest=manifest)
    if args.variance_csv:
        trace.save_variance_csv(args.variance_csv)
    print(r)
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------


def _bench_replication(job: dict) -> list:
    """Metrics rows for one (dgp, N, T, replication); runs in a worker."""
    cfg = DgpConfig(
        dgp=job["dgp"], N=job["N"], T=job["T"],
        seed=job["seed"] + job["rep"],
        fixed_design_seed=job["fixed_design_seed"],
    )
    panel, truth = gen_dgp(cfg)
    rows = []
    for k in job["k_list"]:
        fit = fit_factors(panel, k)
        d = delta_nt(fit.factors, truth.U)
        e = epsilon_nt(LoadingMatrix.from_fit(fit), LoadingMatrix.from_ground_truth(truth))
        p = phi_nt(common_component(fit), truth.chi)
        rows.append([job["dgp"], job["N"], job["T"], k, job["rep"],
                     repr(d * d), repr(e * e), repr(p)])
    if job["select"] is not None:
        sel = job["select"]
        if sel.get("method", "abc") == "fixed":
            r_hat = select_r_fixed(panel, float(sel.get("c", 1.0)),
                                   sel.get("kind", IC2A), int(sel.get("k_max", 10)))
        else:
            abc = AbcConfig.for_panel(panel.N, panel.T,
                                      rng_seed=int(sel.get("seed", 0)) + job["rep"],
                                      k_max=int(sel.get("k_max", 10)),
                                      P=int(sel.get("P", 5)))
            r_hat, _ = abc_select_r(panel, abc, sel.get("kind", IC2A))
        rows.append(["SELECT", job["dgp"], job["N"], job["T"], job["rep"], r_hat])
    return rows


def cmd_bench(args) -> int:
    with open(args.spec) as fh:
        spec = json.load(fh)
    dgps = [int(d) for d in spec["dgps"]]
    n_list = [int(n) for n in spec["N"]]
    t_list = [int(t) for t in spec["T"]]
    k_list = [int(k) for k in spec["k"]]
    reps = int(spec["replications"])
    if not (dgps and n_list and t_list and k_list) or reps < 1:
        raise ValueError("bench spec lists must be nonempty and replications >= 1")
    seed = int(spec.get("seed", 0))
    fds = int(spec.get("fixed_design_seed", 12345))
    select = spec.get("select")

    jobs = [
        {"dgp": dgp, "N": n, "T": t, "rep": rep, "seed": seed,
         "fixed_design_seed": fds, "k_list": k_list, "select": select}
        for dgp in dgps for n in n_list for t in t_list for rep in range(reps)
    ]
    workers = _worker_count(len(jobs))
    if workers == 1:
        results = [_bench_replication(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_bench_replication, jobs, chunksize=4))

    metric_rows, select_rows = [], []
    for rows in results:
        for row in rows:
            if row[0] == "SELECT":
                select_rows.append(row[1:])
            else:
                metric_rows.append(row)
    metric_rows.sort(key=lambda r: (r[0], r[1], r[2], r[4], r[3]))
    select_rows.sort(key=lambda r: (r[0], r[1], r[2], r[3]))

    manifest = _manifest("bench", spec)
    _write_csv(args.out, BENCH_HEADER, metric_rows, manifest)
    if select_rows:
        sel_path = os.path.splitext(str(args.out))[0] + ".selection.csv"
        _write_csv(sel_path, SELECTION_HEADER, select_rows, manifest)
        under = sum(1 for r in select_rows if r[4] < 3)
        over = sum(1 for r in select_rows if r[4] > 3)
        print(f"selection: {len(select_rows)} runs, {under} under, {over} over (r=3)")
    print(f"wrote {len(metric_rows)} rows to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# forecast
# ---------------------------------------------------------------------------


def _forecast_panel(panel, args, horizon: int, rng_seed: int = 0):
    if args.method == "cf":
        return cf_forecast(panel, horizon, args.n_components, p_max=args.p_max)
    cfg = ForecastConfig(
        horizon=horizon, p_max=args.p_max, fixed_r=args.fixed_r, rng_seed=rng_seed
    )
    return tnh_forecast(panel, cfg)


def _mortality_rolling(args) -> int:
    records = load_mortality_csv(args.mortality)
    basis = build_bspline((0.0, float(AGE_GRID[-1])), dim=9, order=4)
    data = ingest_mortality(records, basis)
    sexes = [args.sex] if args.sex else sorted(data)
    eval_ages = AGE_GRID[: args.eval_age_max + 1]
    design = basis.evaluate(eval_ages)
    table_rows = []
    for sex in sexes:
        md = data[sex]
        T = md.panel.T
        delta_min = args.delta_min or max(T - 16, 3 * (args.p_max + 2))
        if delta_min >= T:
            raise ValueError(f"no rolling origins: delta_min={delta_min} >= T={T}")
        # One fit per origin; forecast curves for every horizon at once.
        fc = {}  # (delta, h) -> (N, ages) forecast values
        for delta in range(delta_min, T):
            train = Panel(md.panel.spaces, [c[:delta] for c in md.panel.coeffs])
            horizon = min(args.horizon, T - delta)
            result = _forecast_panel(train, args, horizon, rng_seed=args.seed)
            for h in range(1, horizon + 1):
                fc[(delta, h)] = np.stack([design @ c for c in result.at_step(h)])
        for h in range(1, args.horizon + 1):
            deltas = [d for d in range(delta_min, T - h + 1)]
            if not deltas:
                continue
            fc_all = np.stack([fc[(d, h)] for d in deltas])
            act_all = np.stack(
                [md.log_rates[:, d + h - 1, : args.eval_age_max + 1] for d in deltas]
            )
            mafe, msfe = mafe_msfe(fc_all, act_all)
            table_rows.append([sex, h, args.method, repr(mafe), repr(msfe)])
            print(f"sex={sex} h={h} method={args.method} MAFE={mafe:.6f} MSFE={msfe:.6f}")
    if args.out:
        manifest = _manifest("forecast", {
            "mortality": str(args.mortality), "method": args.method,
            "horizon": args.horizon, "seed": args.seed,
        })
        _write_csv(args.out, ["sex", "h", "method", "mafe", "msfe"], table_rows, manifest)
    return EXIT_OK


def cmd_forecast(args) -> int:
    if args.horizon < 1:
        raise ValueError("horizon must be >= 1")
    if bool(args.mortality) == bool(args.panel):
        raise ValueError("provide exactly one of --panel or --mortality")
    if args.mortality:
        return _mortality_rolling(args)
    panel = _load_panel_arg(args.panel)
    result = _forecast_panel(panel, args, args.horizon, rng_seed=args.seed)
    doc = {
        "manifest": _manifest("forecast", {
            "panel": str(args.panel), "method": args.method,
            "horizon": args.horizon, "seed": args.seed, "fixed_r": args.fixed_r,
        }),
        "r": result.r,
        "forecasts": [s.tolist() for s in result.steps],
    }
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(doc, fh)
    print(f"r={result.r} horizon={args.horizon} method={args.method}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser / entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hdffm",
        description="Functional factor models: simulation, estimation, "
                    "factor-count selection, benchmarking, forecasting.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a benchmark panel draw")
    p.add_argument("--config", required=True, help="DGP config JSON")
    p.add_argument("--out-panel", required=True)
    p.add_argument("--out-truth", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="fit k factors to a panel file")
    p.add_argument("--panel", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("select-r", help="select the number of factors")
    p.add_argument("--panel", required=True)
    p.add_argument("--method", choices=["abc", "fixed"], default="abc")
    p.add_argument("--c", type=float, default=1.0, help="tuning constant for --method fixed")
    p.add_argument("--kind", choices=["IC1a", "IC2a"], default="IC2a")
    p.add_argument("--k-max", type=int, default=10)
    p.add_argument("--P", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace", default=None, help="write the selection trace JSON here")
    p.add_argument("--variance-csv", default=None)
    p.set_defaults(func=cmd_select_r)

    p = sub.add_parser("bench", help="run a Monte Carlo benchmark grid")
    p.add_argument("--spec", required=True, help="bench spec JSON")
    p.add_argument("--out", required=True, help="output CSV")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("forecast", help="forecast a panel or a mortality CSV")
    p.add_argument("--panel", default=None)
    p.add_argument("--mortality", default=None, help="mortality-rate CSV")
    p.add_argument("--sex", default=None)
    p.add_argument("--horizon", type=int, required=True)
    p.add_argument("--method", choices=["tnh", "cf"], default="tnh")
    p.add_argument("--fixed-r", type=int, default=None)
    p.add_argument("--n-components", type=int, default=6)
    p.add_argument("--p-max", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--delta-min", type=int, default=None,
                   help="first rolling-origin training length (mortality mode)")
    p.add_argument("--eval-age-max", type=int, default=89)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_forecast)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except RankDeficientError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
