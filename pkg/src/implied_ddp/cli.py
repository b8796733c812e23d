"""Command-line interface: ``implied-ddp <command> [options]``.

Exit codes: 0 success, 1 validation failure, 2 usage or config error,
3 input/output error.
"""
from __future__ import annotations

import argparse
import glob
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__, density
from .config import ConfigError, RunConfig, dump_config, load_config, with_overrides
from .ddp_sampler import Faults, NO_FAULTS, SamplerError, read_draws, run_chain, write_draws
from .market_data import PanelError, load_panel, read_panel, write_panel
from .validation.diagnostics import gelman_rubin_report
from .validation.report import run_suite
from .validation.synthetic import SimulationError, market_shaped_spec, simulate_panel

EXIT_OK, EXIT_VALIDATION, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3
RHAT_KEYS = ("mu", "rho", "U", "delta", "alpha")


class UsageError(Exception):
    pass


def _panel(cfg: RunConfig):
    if cfg.panel:
        return read_panel(cfg.panel)
    if cfg.quotes:
        return load_panel(cfg.quotes, cfg.calendar)
    raise UsageError("no input: set 'panel' or 'quotes' in the config (or pass --panel/--quotes)")


def _data_range(panel):
    _, values = panel.flatten()
    if values.size < 2:
        return None
    sd = float(np.std(values))
    return float(values.min()) - 4 * sd, float(values.max()) + 4 * sd


def _chain_file(out, c):
    return os.path.join(out, f"draws_chain{c}.jsonl")


def _fit_one(args):
    panel, cfg, seed_seq, c, out = args
    path = _chain_file(out, c)
    rng_seed = np.random.default_rng(seed_seq)
    draws = run_chain(panel, cfg.chain_config(), rng_seed, cfg.priors(), NO_FAULTS, cfg.assignment, cfg.tail_swaps)
    write_draws(draws, path)
    return path


def cmd_ingest(cfg, args):
    panel = _panel(cfg)
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, "panel.csv")
    write_panel(panel, path)
    print(f"wrote {path}: T={panel.T} days, n={panel.n} observations")
    return EXIT_OK


def cmd_fit(cfg, args):
    panel = _panel(cfg)
    os.makedirs(cfg.out, exist_ok=True)
    start = time.time()
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.chains)
    jobs = [(panel, cfg, seeds[c], c + 1, cfg.out) for c in range(cfg.chains)]
    workers = min(cfg.chains, os.cpu_count() or 1)
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            files = list(pool.map(_fit_one, jobs))
    else:
        files = [_fit_one(j) for j in jobs]
    manifest = {
        "version": __version__,
        "seed": cfg.seed,
        "chains": cfg.chains,
        "draw_files": [os.path.basename(f) for f in files],
        "wall_time_seconds": time.time() - start,
        "T": panel.T,
        "n": panel.n,
        "config": dump_config(cfg),
    }
    if cfg.chains >= 2:
        traces = {k: [] for k in RHAT_KEYS}
        for f in files:
            draws = read_draws(f)
            for k in RHAT_KEYS:
                traces[k].append([getattr(d, k) for d in draws])
        report = gelman_rubin_report({k: np.array(v) for k, v in traces.items()})
        with open(os.path.join(cfg.out, "rhat.json"), "w") as fh:
            json.dump(report, fh, indent=2)
        manifest["rhat"] = report
    with open(os.path.join(cfg.out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
    print(f"wrote {len(files)} draw file(s) to {cfg.out}")
    return EXIT_OK


def _load_draws(cfg, args):
    files = [args.draws] if args.draws else sorted(glob.glob(os.path.join(cfg.out, "draws_chain*.jsonl")))
    if not files:
        raise FileNotFoundError(f"no draw files found in {cfg.out}; run 'fit' first")
    draws = []
    for f in files:
        draws.extend(read_draws(f))
    if any(d.atoms is None for d in draws):
        raise UsageError("draws were stored without atom paths; re-fit with store_atoms = true")
    return draws


def _days(arg, T):
    if arg in (None, "all"):
        return list(range(1, T + 1))
    try:
        t = int(arg)
    except ValueError:
        raise UsageError(f"--day must be an index or 'all', got {arg!r}") from None
    if not 1 <= t <= T:
        raise UsageError(f"--day must lie in 1..{T}")
    return [t]


def _optional_range(cfg):
    try:
        return _data_range(_panel(cfg))
    except UsageError:
        return None


def cmd_density(cfg, args):
    draws = _load_draws(cfg, args)
    T = draws[0].sigma2.shape[0] - 1
    rng_ = _optional_range(cfg)
    ests = [density.density_at(draws, t, data_range=rng_, size=cfg.grid_size) for t in _days(args.day, T)]
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, "density.csv")
    density.write_densities(ests, path)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_predict(cfg, args):
    draws = _load_draws(cfg, args)
    T = draws[0].sigma2.shape[0] - 1
    k = cfg.horizon if args.k is None else args.k
    if k < 0:
        raise UsageError("--k must be >= 0")
    rng_ = _optional_range(cfg)
    ests = [density.predict_ahead(draws, t, k, data_range=rng_, size=cfg.grid_size) for t in _days(args.day, T)]
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, "predict.csv")
    density.write_densities(ests, path)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_summarize(cfg, args):
    draws = _load_draws(cfg, args)
    T = draws[0].sigma2.shape[0] - 1
    rows = [density.summaries(draws, t, cfg.thresholds) for t in _days(args.day, T)]
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, "summary.csv")
    density.write_summaries(rows, path, cfg.thresholds)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_simulate(cfg, args):
    rng = np.random.default_rng(cfg.seed)
    spec = market_shaped_spec(rng, cfg.sim_T, cfg.sim_max_count, cfg.sim_mean_count, mu=cfg.sim_mu, rho=cfg.sim_rho,
                              U=cfg.sim_U, delta=cfg.sim_delta, alpha=cfg.sim_alpha, s0=cfg.sim_s0, S0=cfg.sim_S0)
    panel, truth = simulate_panel(spec, rng)
    os.makedirs(cfg.out, exist_ok=True)
    write_panel(panel, os.path.join(cfg.out, "panel.csv"))
    with open(os.path.join(cfg.out, "truth.json"), "w") as fh:
        fh.write(truth.to_json(spec))
    print(f"wrote synthetic panel (T={panel.T}, n={panel.n}) to {cfg.out}")
    return EXIT_OK


def cmd_validate(cfg, args):
    faults = Faults.only(args.fault) if args.fault else NO_FAULTS
    report = run_suite(cfg.seed, faults, cfg.geweke_iterations, cfg.crp_sweeps)
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, "validation_report.json")
    with open(path, "w") as fh:
        fh.write(report.to_json())
    for c in report.checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.statistic:.3g} (threshold {c.threshold:g})")
    return EXIT_OK if report.passed else EXIT_VALIDATION


COMMANDS = {
    "ingest": cmd_ingest,
    "fit": cmd_fit,
    "density": cmd_density,
    "summarize": cmd_summarize,
    "predict": cmd_predict,
    "simulate": cmd_simulate,
    "validate": cmd_validate,
}


def build_parser():
    p = argparse.ArgumentParser(prog="implied-ddp", description="DDP mixture fits of option-implied price gaps")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="key = value config file")
        s.add_argument("--seed", type=int)
        s.add_argument("--chains", type=int)
        s.add_argument("--out", help="output directory")
        s.add_argument("--quotes", help="quote CSV (date,strike,call,put,spot,rate,maturity)")
        s.add_argument("--calendar", help="calendar file, one ISO date per line")
        s.add_argument("--panel", help="panel dump CSV (day_index,date,delta)")
        s.add_argument("--draws", help="draws file (default: all draws_chain*.jsonl in --out)")
        s.add_argument("--day", help="day index or 'all'")
        s.add_argument("--k", type=int, help="prediction horizon")
        s.add_argument("--fault", choices=Faults.names(), help="inject a sampler fault (validate only)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        cfg = with_overrides(cfg, seed=args.seed, chains=args.chains, out=args.out, quotes=args.quotes,
                             calendar=args.calendar, panel=args.panel)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, UsageError, SimulationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, PanelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except SamplerError as exc:
        print(f"error: sampler failed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
