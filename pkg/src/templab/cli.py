"""Batch command-line front-end.

Subcommands: simulate | certify | search | sweep | compare.  Every command
reads one config file, writes delimited data (CSV/JSON) plus rendered PNG
figures into the output directory, and is byte-deterministic for a fixed
(config, seed) pair.

Exit codes: 0 success, 2 config error, 3 escape/NaN truncation (outputs are
still written).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

from . import analysis, plots
from .config import RunConfig, load_config
from .errors import ConfigError, TemplabError
from .hybrid import (IntegratorParams, initial_state, simulate,
                     simulate_sample_hold, simulate_state_feedback)
from .observer import ObserverConfig
from .template import certify_template, search_template

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ESCAPE = 3


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def _write_json(path, obj):
    with open(path, "w") as fh:
        fh.write(json.dumps(obj, indent=2, sort_keys=True))
        fh.write("\n")


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _run_templated(cfg: RunConfig, theta=None, delta=None):
    obs = cfg.observer
    if theta is not None or delta is not None:
        obs = ObserverConfig(q=obs.q, c=obs.c,
                             theta=obs.theta if theta is None else theta,
                             delta=obs.delta if delta is None else delta,
                             mu_margin=obs.mu_margin)
    init = initial_state(cfg.x0, cfg.system, cfg.template, obs, s0=cfg.s0,
                         mu0=cfg.mu0, z0=cfg.z0, consistent_z=cfg.consistent_z)
    integ = IntegratorParams(step=cfg.step, stride=cfg.stride)
    return simulate(cfg.system, cfg.spec, cfg.template, obs, init,
                    cfg.t_end, integ, sat=cfg.sat), obs


def cmd_simulate(cfg: RunConfig, out: str) -> int:
    arc, obs = _run_templated(cfg)
    arc.to_csv(os.path.join(out, "arc.csv"))
    summary = analysis.arc_summary(arc, cfg.spec, cfg.system, cfg.template,
                                   obs, period=obs.delta)
    _write_json(os.path.join(out, "analysis.json"), summary)
    plots.render_arc(arc, os.path.join(out, "arc.png"),
                     f"{cfg.system.name}: templated output feedback")
    return EXIT_ESCAPE if arc.escaped else EXIT_OK


def cmd_certify(cfg: RunConfig, out: str) -> int:
    report = certify_template(cfg.system, cfg.spec, cfg.template,
                              cfg.observer.q, cfg.grid)
    with open(os.path.join(out, "certification.json"), "w") as fh:
        fh.write(report.to_json())
        fh.write("\n")
    plots.render_certification(report, os.path.join(out, "certification.png"),
                               f"{cfg.system.name}: template certification")
    return EXIT_OK


def cmd_search(cfg: RunConfig, out: str) -> int:
    result = search_template(cfg.system, cfg.spec, cfg.template,
                             cfg.search_degree, cfg.search_attempts,
                             cfg.seed, cfg.observer.q, cfg.grid)
    payload = {
        "succeeded": result.succeeded,
        "attempts_used": result.attempts_used,
        "T": result.template.T,
        "coeffs": result.template.coeffs.tolist(),
        "report": json.loads(result.report.to_json()),
    }
    _write_json(os.path.join(out, "search.json"), payload)
    plots.render_certification(result.report,
                               os.path.join(out, "certification.png"),
                               f"{cfg.system.name}: searched template")
    return EXIT_OK


def _sweep_cell(cfg: RunConfig, theta: float, delta: float) -> dict:
    arc, obs = _run_templated(cfg, theta=theta, delta=delta)
    summary = analysis.arc_summary(arc, cfg.spec, cfg.system, cfg.template,
                                   obs, period=delta)
    return {
        "theta": theta,
        "delta": delta,
        "nu_x": summary["nu_x"],
        "nu_e": summary["nu_e"],
        "contained": summary["contained"],
        "clamp_events": summary["clamp_events"],
        "phi_failures": summary["phi_failures"],
        "escaped": arc.escaped,
    }


def cmd_sweep(cfg: RunConfig, out: str, threads: int) -> int:
    cells = [(theta, delta) for theta in cfg.theta_list
             for delta in cfg.delta_list]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(
                lambda c: _sweep_cell(cfg, c[0], c[1]), cells))
    else:
        rows = [_sweep_cell(cfg, theta, delta) for theta, delta in cells]
    header = ["theta", "delta", "nu_x", "nu_e", "contained",
              "clamp_events", "phi_failures", "escaped"]
    _write_rows(os.path.join(out, "sweep.csv"), header,
                [[r[k] for k in header] for r in rows])
    plots.render_sweep(rows, os.path.join(out, "sweep.png"),
                       f"{cfg.system.name}: theta x delta sweep")
    return EXIT_OK


def cmd_compare(cfg: RunConfig, out: str) -> int:
    integ = IntegratorParams(step=cfg.step, stride=cfg.stride)
    obs = cfg.observer
    init_of = lambda c: initial_state(cfg.x0, cfg.system, cfg.template, c,
                                      s0=cfg.s0, mu0=cfg.mu0, z0=cfg.z0,
                                      consistent_z=cfg.consistent_z)
    arcs = [
        ("templated",
         simulate(cfg.system, cfg.spec, cfg.template, obs, init_of(obs),
                  cfg.t_end, integ, sat=cfg.sat)),
        ("sample-hold",
         simulate_sample_hold(cfg.system, cfg.spec, obs, init_of(obs),
                              cfg.t_end, integ, sat=cfg.sat)),
        ("state-feedback",
         simulate_state_feedback(cfg.system, cfg.spec, cfg.template,
                                 obs.delta, init_of(None), cfg.t_end, integ,
                                 sat=cfg.sat)),
    ]
    rows = []
    for label, arc in arcs:
        summary = analysis.arc_summary(arc, cfg.spec, cfg.system,
                                       cfg.template, obs, period=obs.delta)
        rows.append([label, summary["nu_x"], summary["nu_e"],
                     summary["contained"]])
    _write_rows(os.path.join(out, "compare.csv"),
                ["variant", "nu_x", "nu_e", "contained"], rows)
    plots.render_compare(arcs, os.path.join(out, "compare.png"),
                         f"{cfg.system.name}: closed-loop variants")
    return EXIT_ESCAPE if any(arc.escaped for _, arc in arcs) else EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="templab",
        description="Templated output-feedback stabilization laboratory")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
            ("simulate", "run one templated closed loop; arc CSV + analysis"),
            ("certify", "grid-certify the configured control template"),
            ("search", "randomized search for a certifiable template"),
            ("sweep", "theta x delta grid of closed-loop runs"),
            ("compare", "templated vs sample-hold vs state feedback")):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="config file path")
        cmd.add_argument("--out", default=".", help="output directory")
        cmd.add_argument("--seed", type=int, default=None,
                         help="override the config seed")
        cmd.add_argument("--threads", type=int, default=None,
                         help="parallel workers (default: LAB_THREADS or 1)")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    threads = args.threads
    if threads is None:
        threads = int(os.environ.get("LAB_THREADS", "1"))
    try:
        cfg = load_config(args.config, seed_override=args.seed)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    os.makedirs(args.out, exist_ok=True)
    try:
        if args.command == "simulate":
            return cmd_simulate(cfg, args.out)
        if args.command == "certify":
            return cmd_certify(cfg, args.out)
        if args.command == "search":
            return cmd_search(cfg, args.out)
        if args.command == "sweep":
            return cmd_sweep(cfg, args.out, threads)
        return cmd_compare(cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TemplabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ESCAPE


if __name__ == "__main__":
    sys.exit(main())
