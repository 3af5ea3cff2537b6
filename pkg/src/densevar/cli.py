"""Command-line interface.

Subcommands mirror the pipeline stages: ``simulate`` runs the Monte
Carlo sweep, ``densities`` turns observations into weekly weight tables,
``fit`` estimates the factor-adjusted VAR from a weight table,
``network`` exports the selected edge set for one factor count, and
``pipeline`` runs everything end to end.  Report-style outputs (metrics,
edge counts) are written as CSV with PNG figures alongside unless
figures are disabled.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np


def _parse_r_values(text):
    if text is None:
        return None
    if "-" in text and not text.startswith("-"):
        lo, hi = text.split("-", 1)
        return list(range(int(lo), int(hi) + 1))
    if "," in text:
        return [int(tok) for tok in text.split(",") if tok]
    return int(text)


def _load_config(args):
    from .pipeline import PipelineConfig, load_config

    config = load_config(args.config) if args.config else PipelineConfig()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "gamma", None) is not None:
        overrides["gamma"] = args.gamma
    if getattr(args, "fdr", None) is not None:
        overrides["fdr"] = args.fdr
    if getattr(args, "r", None) is not None:
        overrides["r"] = _parse_r_values(args.r)
    return replace(config, **overrides) if overrides else config


def cmd_simulate(args):
    from .report import render_sweep_panels
    from .simulation import run_sweep, write_metrics_csv

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    r_values = _parse_r_values(args.r) if args.r else list(range(9))
    if isinstance(r_values, int):
        r_values = [r_values]
    alphas = [float(tok) for tok in args.alphas.split(",")]
    rows = run_sweep(
        alpha_levels=tuple(alphas),
        r_values=tuple(r_values),
        n_reps=args.reps,
        q_fdr=args.fdr if args.fdr is not None else 0.10,
        base_seed=args.seed if args.seed is not None else 0,
        n_jobs=args.jobs,
    )
    metrics_path = out / "metrics.csv"
    write_metrics_csv(rows, metrics_path)
    print(f"wrote {metrics_path}")
    if not args.no_figures:
        figure_path = out / "metrics_panels.png"
        render_sweep_panels(rows, figure_path)
        print(f"wrote {figure_path}")
    return 0


def cmd_densities(args):
    from .pipeline import (
        cluster_regions,
        load_observations,
        site_table,
        weekly_densities,
        weights_frame,
    )

    config = _load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    obs, n_dropped = load_observations(args.input, config)
    if n_dropped:
        print(f"dropped {n_dropped} out-of-support observations")
    n_weeks = int(obs["week"].max())
    assignment = cluster_regions(
        site_table(obs), n_weeks, config.k_init, config.min_weekly,
        config.seed, config.distance,
    )
    region_weights, _ = weekly_densities(obs, assignment, config, n_weeks=n_weeks)
    weights_path = out / "weights.csv"
    weights_frame(region_weights).to_csv(weights_path, index=False)
    print(f"wrote {weights_path} ({n_weeks} weeks, {assignment.C} regions)")
    return 0


def cmd_fit(args):
    from .pipeline import fit_from_weights

    config = _load_config(args)
    r_values = config.r_values
    r = r_values[0] if len(r_values) == 1 else max(r_values)
    panel, fit_config, result = fit_from_weights(config, args.input, r)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = {
        "n_weeks": panel.T,
        "n_units": panel.C,
        "lag": fit_config.p,
        "n_factors": fit_config.r,
        "iterations": result.iterations,
        "converged": result.converged,
        "eigvals": result.eigvals.tolist(),
        "V": [v.tolist() for v in result.V],
    }
    summary_path = out / "fit_summary.json"
    summary_path.write_text(json.dumps(summary, indent=2))
    print(f"wrote {summary_path} (converged={result.converged})")
    return 0


def cmd_network(args):
    from .inference import covariance, select_edges, write_network
    from .pipeline import fit_from_weights

    config = _load_config(args)
    r_values = config.r_values
    r = r_values[0] if len(r_values) == 1 else max(r_values)
    panel, _, result = fit_from_weights(config, args.input, r)
    cov = covariance(result, panel)
    network = select_edges(result, cov, q=config.fdr)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    json_path = out / f"network_r{r}.json"
    csv_path = out / f"network_r{r}.csv"
    write_network(network, panel.C, json_path, csv_path,
                  labels=[f"region {i}" for i in range(1, panel.C + 1)])
    print(f"wrote {json_path} ({len(network.selected_edges)} selected edges)")
    return 0


def cmd_pipeline(args):
    from .pipeline import run_analysis

    config = _load_config(args)
    summary = run_analysis(
        config, args.input, args.out, figures=not args.no_figures
    )
    print(f"dropped {summary['n_dropped']} out-of-support observations")
    print(
        f"{summary['n_weeks']} weeks, {summary['assignment'].C} regions; "
        f"outputs in {summary['out_dir']}"
    )
    for r, network in sorted(summary["networks"].items()):
        print(f"  r={r}: {len(network.selected_edges)} selected edges")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="densevar",
        description="Density-valued VAR with latent factors and network selection",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, with_input=True):
        p.add_argument("--config", help="YAML config file")
        if with_input:
            p.add_argument("--input", required=True, help="input CSV path")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--r", default=None, help="factor count, list, or span (e.g. 0-8)")
        p.add_argument("--gamma", type=float, default=None, help="prior strength")
        p.add_argument("--fdr", type=float, default=None, help="FDR level")

    p_sim = sub.add_parser("simulate", help="run the Monte Carlo sweep")
    p_sim.add_argument("--out", required=True)
    p_sim.add_argument("--alphas", default="0,0.5,1", help="VAR strengths, comma list")
    p_sim.add_argument("--r", default=None, help="factor counts (default 0-8)")
    p_sim.add_argument("--reps", type=int, default=100)
    p_sim.add_argument("--fdr", type=float, default=None)
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.add_argument("--jobs", type=int, default=1)
    p_sim.add_argument("--no-figures", action="store_true")
    p_sim.set_defaults(func=cmd_simulate)

    p_dens = sub.add_parser("densities", help="observations to weekly weight table")
    add_common(p_dens)
    p_dens.set_defaults(func=cmd_densities)

    p_fit = sub.add_parser("fit", help="fit the model from a weight table")
    add_common(p_fit)
    p_fit.set_defaults(func=cmd_fit)

    p_net = sub.add_parser("network", help="export the selected edge network")
    add_common(p_net)
    p_net.set_defaults(func=cmd_network)

    p_pipe = sub.add_parser("pipeline", help="full observations-to-network run")
    add_common(p_pipe)
    p_pipe.add_argument("--no-figures", action="store_true")
    p_pipe.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    np.set_printoptions(precision=4, suppress=True)
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
