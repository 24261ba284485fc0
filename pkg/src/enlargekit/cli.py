"""Command line runner: ``enlargekit {oracle,drift,mctest,reduce,checkaAA}``.

Configuration is an INI file with one section per concern; every key has a
built-in default, unknown sections and keys are rejected, and ``--set
section.key=value`` overrides single entries.  All outputs are written under
``--out`` and depend only on the configuration and the seed.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .density_model import ModelParams, check_aAA, simulate
from .drift_engine import classical_single_time_drift, drift_sorted, drift_tau_rho
from .enlargement_oracle import run_oracle_suite
from .marginal_integrator import IntegrationError, QuadratureConfig
from .mc_harness import MartingaleTestConfig, SortedDrift, TauRhoDrift, ZeroDrift, martingale_test

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
MODES = ("oracle", "drift", "mctest", "reduce", "checkaAA")

DEFAULTS: dict[str, dict[str, str]] = {
    "run": {"seed": "0"},
    "model": {"n": "2", "mu": "-0.5", "sigma": "0.4", "rho": "0.5", "t_max": "0.9", "martingale": "brownian"},
    "grid": {"steps": "200"},
    "quadrature": {"method": "auto", "legendre_nodes": "48", "hermite_nodes": "48", "max_quadrature_chain": "2", "mc_samples": "200000"},
    "oracle": {"depth": "4", "n": "2", "k": "1", "seeds": "50", "variants": "3"},
    "drift": {"k": "1", "scenarios": "1", "target": "sorted", "rho": "1", "weight_mode": "exact"},
    "mctest": {"n_paths": "100000", "k": "1", "producer": "sorted", "rho": "1", "w_bins": "5", "time_bins": "3", "min_bin": "200", "level": "0.01"},
    "reduce": {"mu": "-0.5", "sigma": "0.4", "rho": "0.5", "scenarios": "5", "tolerance": "1e-6"},
    "checkaAA": {"n_paths": "20000", "margin": "1e6"},
}


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


@dataclass(frozen=True)
class RunConfig:
    mode: str
    values: dict
    out: Path
    seed: int

    def get(self, section: str, key: str) -> str:
        return self.values[section][key]

    def num(self, section: str, key: str, kind=float):
        text = self.get(section, key)
        try:
            return kind(text)
        except ValueError:
            raise ConfigError(f"[{section}] {key} = {text!r} is not a valid {kind.__name__}") from None

    def model(self) -> ModelParams:
        n = self.num("model", "n", int)
        try:
            mu, sigma, rho = (_floats(self.get("model", key)) for key in ("mu", "sigma", "rho"))
        except ValueError as exc:
            raise ConfigError(f"[model] {exc}") from None
        expand = lambda v: v * n if len(v) == 1 else v
        return ModelParams(expand(mu), expand(sigma), expand(rho), self.num("model", "t_max"), self.get("model", "martingale"))

    def grid(self, params: ModelParams) -> np.ndarray:
        return np.linspace(0.0, params.t_max, self.num("grid", "steps", int) + 1)

    def quadrature(self) -> QuadratureConfig:
        q = "quadrature"
        return QuadratureConfig(
            method=self.get(q, "method"),
            legendre_nodes=self.num(q, "legendre_nodes", int),
            hermite_nodes=self.num(q, "hermite_nodes", int),
            max_quadrature_chain=self.num(q, "max_quadrature_chain", int),
            mc_samples=self.num(q, "mc_samples", int),
            seed=self.seed,
        )


def load_config(mode: str, path: str | None, overrides: Sequence[str], out: str, seed: int | None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep key case (checkaAA)
    values = {s: dict(kv) for s, kv in DEFAULTS.items()}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from None
        for section in parser.sections():
            if section not in values:
                raise ConfigError(f"unknown section [{section}] in {path}")
            for key, val in parser.items(section):
                if key not in values[section]:
                    raise ConfigError(f"unknown key {key!r} in section [{section}] of {path}")
                values[section][key] = val
    for item in overrides:
        target, sep, val = item.partition("=")
        section, dot, key = target.partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        if section not in values or key not in values[section]:
            raise ConfigError(f"unknown override key {target!r}")
        values[section][key] = val
    if seed is not None:
        values["run"]["seed"] = str(seed)
    try:
        run_seed = int(values["run"]["seed"])
    except ValueError:
        raise ConfigError(f"[run] seed = {values['run']['seed']!r} is not an integer") from None
    return RunConfig(mode, values, Path(out), run_seed)


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _write_csv(path: Path, schema: str, header: Sequence[str], rows) -> None:
    buf = io.StringIO()
    buf.write(f"# {schema} enlargekit {__version__}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue(), encoding="utf-8")


def run_oracle(cfg: RunConfig) -> int:
    o = "oracle"
    depth, n, k = (cfg.num(o, key, int) for key in ("depth", "n", "k"))
    seeds = range(cfg.seed, cfg.seed + cfg.num(o, "seeds", int))
    if not 1 <= k <= n:
        raise ConfigError("[oracle] needs 1 <= k <= n")
    reports = run_oracle_suite(depth, n, k, seeds, cfg.num(o, "variants", int))
    lines = [f"oracle suite depth={depth} n={n} k={k} seeds={len(seeds)} first_seed={cfg.seed}"]
    lines += [r.line() for r in reports]
    ok = all(r.passed for r in reports)
    lines.append("verdict: " + ("PASS" if ok else "FAIL"))
    (cfg.out / "oracle_report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    return EXIT_OK if ok else EXIT_CHECK


def run_drift(cfg: RunConfig) -> int:
    params, qcfg = cfg.model(), cfg.quadrature()
    grid = cfg.grid(params)
    d = "drift"
    k = cfg.num(d, "k", int)
    target = cfg.get(d, "target")
    if target not in ("sorted", "tau_rho"):
        raise ConfigError("[drift] target must be 'sorted' or 'tau_rho'")
    flagged = 0
    for i in range(cfg.num(d, "scenarios", int)):
        scen = simulate(params, grid, cfg.seed, k, path_index=i)
        if target == "sorted":
            path = drift_sorted(params, scen, k, cfg=qcfg, weight_mode=cfg.get(d, "weight_mode"))
        else:
            path = drift_tau_rho(params, scen, _ints(cfg.get(d, "rho")), cfg=qcfg)
        flagged += len(path.flags)
        _write_csv(cfg.out / f"drift_{i:04d}.csv", f"enlargekit-drift/1 target={target}", path.header(), path.rows())
        print(f"scenario {i}: tau={[round(float(x), 6) for x in scen.tau]} cumulative drift {path.cumulative[-1]:.6g}")
    if flagged:
        print(f"{flagged} steps with vanishing denominators were set to zero")
    return EXIT_OK


def run_mctest(cfg: RunConfig) -> int:
    params = cfg.model()
    m = "mctest"
    k = cfg.num(m, "k", int)
    producers = {
        "sorted": SortedDrift(k, "exact", cfg.quadrature()),
        "swap": SortedDrift(k, "swap", cfg.quadrature(), name="sorted_swap"),
        "zero": ZeroDrift(k),
        "tau_rho": TauRhoDrift(_ints(cfg.get(m, "rho")), cfg.quadrature()),
    }
    name = cfg.get(m, "producer")
    if name not in producers:
        raise ConfigError(f"[mctest] producer must be one of {sorted(producers)}")
    tcfg = MartingaleTestConfig(
        n_paths=cfg.num(m, "n_paths", int),
        steps=cfg.num("grid", "steps", int),
        w_bins=cfg.num(m, "w_bins", int),
        time_bins=cfg.num(m, "time_bins", int),
        min_bin=cfg.num(m, "min_bin", int),
        level=cfg.num(m, "level"),
        seed=cfg.seed,
    )
    report = martingale_test(params, producers[name], tcfg)
    (cfg.out / "mctest_report.txt").write_text(report.to_text(), encoding="utf-8")
    (cfg.out / "mctest_bins.csv").write_text(report.to_csv(), encoding="utf-8")
    print(report.to_text(), end="")
    return EXIT_OK if report.passed else EXIT_CHECK


def run_reduce(cfg: RunConfig) -> int:
    r = "reduce"
    params = ModelParams((cfg.num(r, "mu"),), (cfg.num(r, "sigma"),), (cfg.num(r, "rho"),), cfg.num("model", "t_max"))
    grid = cfg.grid(params)
    tol = cfg.num(r, "tolerance")
    rows, worst = [], 0.0
    for i in range(cfg.num(r, "scenarios", int)):
        scen = simulate(params, grid, cfg.seed, 1, path_index=i)
        ours = drift_sorted(params, scen, 1, cfg=cfg.quadrature()).cumulative
        ref = classical_single_time_drift(params, grid, scen.w_path, float(scen.tau[0]))
        dev = float(np.max(np.abs(ours - ref)))
        worst = max(worst, dev)
        rows.append([i, float(scen.tau[0]), float(ours[-1]), float(ref[-1]), dev])
    _write_csv(cfg.out / "reduce.csv", "enlargekit-reduce/1", ["scenario", "tau", "drift", "classical", "max_deviation"], rows)
    ok = worst <= tol
    print(f"{'PASS' if ok else 'FAIL'} reduction: max pointwise deviation {worst:.3e} (tol {tol:.0e})")
    return EXIT_OK if ok else EXIT_CHECK


def run_check_aaa(cfg: RunConfig) -> int:
    params = cfg.model()
    c = "checkaAA"
    rep = check_aAA(params, cfg.num(c, "n_paths", int), cfg.seed, cfg.num("grid", "steps", int), cfg.num(c, "margin"))
    text = rep.line() + "\n"
    (cfg.out / "checkaAA.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK if rep.finite else EXIT_CHECK


RUNNERS = {"oracle": run_oracle, "drift": run_drift, "mctest": run_mctest, "reduce": run_reduce, "checkaAA": run_check_aaa}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="enlargekit", description="Drift computations for filtrations enlarged by several random times.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="mode", required=True)
    for mode in MODES:
        p = sub.add_parser(mode)
        p.add_argument("--config", help="INI configuration file")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override one configuration entry")
        p.add_argument("--out", default=".", help="output directory (created if missing)")
        p.add_argument("--seed", type=int, help="master seed (overrides [run] seed)")
        if mode == "oracle":
            for flag in ("depth", "n", "k", "seeds"):
                p.add_argument(f"--{flag}", type=int)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and argv[0] == "run":
        argv = argv[1:]
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    overrides = list(args.set)
    if args.mode == "oracle":
        overrides += [f"oracle.{flag}={getattr(args, flag)}" for flag in ("depth", "n", "k", "seeds") if getattr(args, flag) is not None]
    try:
        cfg = load_config(args.mode, args.config, overrides, args.out, args.seed)
        cfg.out.mkdir(parents=True, exist_ok=True)
        return RUNNERS[args.mode](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except IntegrationError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        # invalid parameter values surface here from the model constructors
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
