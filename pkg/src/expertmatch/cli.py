"""Command-line entry point: ``expertmatch {synth,regret,compas,feasibility}``.

Exit codes: 0 success, 1 runtime failure, 2 configuration error, 3 dataset missing.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import compas as cp
from .domain import BenefitConvention
from .simulate import (
    PolicyKind,
    RunResult,
    SyntheticConfig,
    adversarial_instance,
    run_adversarial,
    run_simulation,
)

log = logging.getLogger("expertmatch")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_DATA = 0, 1, 2, 3
SERIES_COLUMNS = ("t", "policy", "utility_round", "utility_cum", "true_utility_cum", "di_round",
                  "feasible", "regret_cum")
SWEEP_COLUMNS = ("tau", "biased_fraction", "alpha", "regime", "infeasibility_prob", "stderr")
DEFAULT_DATA = "data/compas-scores-two-years.csv"


class ConfigError(ValueError):
    pass


def _floats(text) -> tuple[float, ...]:
    if isinstance(text, (tuple, list)):
        return tuple(float(v) for v in text)
    return tuple(float(v) for v in str(text).replace(",", " ").split())


def _names(text) -> tuple[str, ...]:
    if isinstance(text, (tuple, list)):
        return tuple(text)
    return tuple(v for v in str(text).replace(",", " ").split())


def _optional_float(text):
    if text is None or str(text).strip().lower() in ("", "none"):
        return None
    return float(text)


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "out"
    m: int = 20
    n: int | None = None
    T: int = 1000
    c: float = 0.5
    alpha: float | None = None
    prior_alpha: float = 1.0
    prior_beta: float = 1.0
    policies: tuple = ()
    convention: str = "identity"
    # adversarial instance
    theta_tilde: float = 0.5
    variant: str = "positive"
    adversarial_T: int = 2000
    # COMPAS
    data: str = DEFAULT_DATA
    tau: float = 5.0
    biased_fraction: float = 0.0
    # feasibility sweep
    taus: tuple = (0.5, 2.0, 10.0, 50.0)
    biased_fractions: tuple = (0.0, 0.5)
    alphas: tuple = (0.0, 0.01, 0.02, 0.05, 0.1, 1.0)
    replicates: int = 3
    max_rounds: int | None = None

    def validate(self):
        if self.m < 1:
            raise ConfigError("m must be at least 1")
        if self.n is not None and self.n < self.m:
            raise ConfigError(f"n={self.n} must be at least m={self.m}")
        if self.T < 0 or self.adversarial_T < 0:
            raise ConfigError("T must be non-negative")
        if not 0.0 < self.c < 1.0:
            raise ConfigError("c must lie in (0, 1)")
        if self.alpha is not None and not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.prior_alpha <= 0 or self.prior_beta <= 0:
            raise ConfigError("prior shapes must be positive")
        for p in self.policies:
            if p not in {k.value for k in PolicyKind}:
                raise ConfigError(f"unknown policy {p!r}; choose from {[k.value for k in PolicyKind]}")
        if len(set(self.policies)) != len(self.policies):
            raise ConfigError("duplicate policy")
        if self.convention not in {k.value for k in BenefitConvention}:
            raise ConfigError(f"unknown convention {self.convention!r}")
        if not 0.0 <= self.theta_tilde <= 1.0:
            raise ConfigError("theta_tilde must lie in [0, 1]")
        if self.variant not in ("positive", "zero"):
            raise ConfigError("variant must be 'positive' or 'zero'")
        if self.variant == "positive" and self.theta_tilde <= 0.0:
            raise ConfigError("theta_tilde = 0 needs variant 'zero'")
        if self.variant == "zero" and self.theta_tilde >= 1.0:
            raise ConfigError("variant 'zero' needs theta_tilde < 1")
        if self.tau <= 0 or any(t <= 0 for t in self.taus):
            raise ConfigError("tau must be positive")
        if not all(0.0 <= b <= 1.0 for b in (self.biased_fraction, *self.biased_fractions)):
            raise ConfigError("biased fractions must lie in [0, 1]")
        if not all(0.0 <= a <= 1.0 for a in self.alphas) or not self.alphas:
            raise ConfigError("alphas must be a non-empty list in [0, 1]")
        if not self.taus or not self.biased_fractions:
            raise ConfigError("sweep grids must be non-empty")
        if self.replicates < 1:
            raise ConfigError("replicates must be at least 1")
        if self.max_rounds is not None and self.max_rounds < 1:
            raise ConfigError("max_rounds must be positive")
        return self


_PARSERS = {
    "seed": int, "out": str, "m": int, "n": lambda v: None if str(v).lower() in ("", "none") else int(v),
    "T": int, "c": float, "alpha": _optional_float, "prior_alpha": float, "prior_beta": float,
    "policies": _names, "convention": str, "theta_tilde": float, "variant": str, "adversarial_T": int,
    "data": str, "tau": float, "biased_fraction": float, "taus": _floats, "biased_fractions": _floats,
    "alphas": _floats, "replicates": int, "max_rounds": lambda v: None if str(v).lower() in ("", "none") else int(v),
}

DEFAULT_POLICIES = {
    "synth": ("optimal", "known", "unknown", "random"),
    "regret": ("known", "unknown_point", "unknown"),
    "compas": ("optimal", "known", "unknown", "random"),
    "feasibility": (),
}


def read_config(path, section: str) -> dict:
    """Keys of ``[common]`` and ``[<section>]``; unknown keys or sections are errors."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep ``T`` distinct from ``t``
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"bad config {path}: {exc}") from exc
    allowed = {"common", *DEFAULT_POLICIES}
    values = {}
    for name in parser.sections():
        if name not in allowed:
            raise ConfigError(f"unknown config section [{name}]")
    for name in ("common", section):
        if not parser.has_section(name):
            continue
        for key, raw in parser.items(name):
            if key not in _PARSERS:
                raise ConfigError(f"unknown config key {key!r} in [{name}]")
            values[key] = raw
    return values


def build_config(args: argparse.Namespace) -> RunConfig:
    raw = read_config(args.config, args.command) if args.config else {}
    for key in _PARSERS:
        val = getattr(args, key, None)
        if val is not None:
            raw[key] = val
    parsed = {}
    for key, val in raw.items():
        try:
            parsed[key] = _PARSERS[key](val)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {val!r}") from exc
    parsed.setdefault("policies", DEFAULT_POLICIES[args.command])
    return RunConfig(**parsed).validate()


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def series_rows(results: dict[str, RunResult]):
    for name, run in results.items():
        u = run.utility_cum
        tu = run.true_utility_cum
        for k, r in enumerate(run.rounds):
            yield (k + 1, name, r.utility, u[k], tu[k], r.di, r.feasible, run.regret[k])


def write_series(path: Path, results: dict[str, RunResult]):
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SERIES_COLUMNS)
        for row in series_rows(results):
            w.writerow([row[0], row[1], *(_fmt(v) for v in row[2:])])


def summarize(results: dict[str, RunResult]) -> dict:
    out = {}
    for name, run in results.items():
        out[name] = {
            "rounds": len(run.rounds),
            "utility": run.total_utility,
            "true_utility": float(run.true_utility_cum[-1]) if run.rounds else 0.0,
            "mean_di": run.mean_di,
            "regret": float(run.regret[-1]) if run.rounds else 0.0,
            "feasible_fraction": float(run.feasible.mean()) if run.rounds else 1.0,
            "draw_digest": run.draw_digest,
        }
    return out


def write_json(path: Path, payload: dict):
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _echo(cfg: RunConfig) -> dict:
    # the output directory is left out so reruns elsewhere stay byte-identical
    return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(cfg).items() if k != "out"}


def cmd_synth(cfg: RunConfig, out: Path) -> int:
    sc = SyntheticConfig(m=cfg.m, n=cfg.n, T=cfg.T, c=cfg.c, seed=cfg.seed,
                         prior_alpha=cfg.prior_alpha, prior_beta=cfg.prior_beta)
    results = run_simulation(sc, cfg.policies, alpha=cfg.alpha, convention=cfg.convention)
    write_series(out / "synth_series.csv", results)
    write_json(out / "synth_summary.json", {"config": _echo(cfg), "n": sc.n, "policies": summarize(results)})
    return EXIT_OK


def cmd_regret(cfg: RunConfig, out: Path) -> int:
    inst = adversarial_instance(cfg.theta_tilde, cfg.variant)
    adv = run_adversarial(inst, cfg.adversarial_T, cfg.seed, cfg.policies)
    sc = SyntheticConfig(m=cfg.m, n=cfg.n, T=cfg.T, c=cfg.c, seed=cfg.seed,
                         prior_alpha=cfg.prior_alpha, prior_beta=cfg.prior_beta)
    syn = run_simulation(sc, cfg.policies, alpha=cfg.alpha, convention=cfg.convention)
    write_series(out / "regret_adversarial.csv", adv)
    write_series(out / "regret_synthetic.csv", syn)
    write_json(out / "regret_summary.json", {
        "config": _echo(cfg),
        "adversarial": {"theta_tilde": cfg.theta_tilde, "variant": cfg.variant, "c": inst.c,
                        "expected_regret_per_round": inst.expected_optimal_utility - inst.expected_point_utility,
                        "policies": summarize(adv)},
        "synthetic": summarize(syn),
    })
    return EXIT_OK


def _load(cfg: RunConfig):
    path = Path(cfg.data)
    if not path.is_file():
        raise FileNotFoundError(f"COMPAS file not found: {path}")
    return cp.load_compas(path)


def cmd_compas(cfg: RunConfig, out: Path) -> int:
    records = _load(cfg)
    pool = cp.JudgePoolConfig(cfg.tau, cfg.biased_fraction, n=cfg.n or 3 * cfg.m)
    run = cp.run_compas(records, pool, cfg.policies, m=cfg.m, c=cfg.c, seed=cfg.seed, alpha=cfg.alpha,
                        convention=cfg.convention)
    log.info("judge pool: %d judges, %d biased (%.0f%%)", run.n_judges, run.n_biased,
             100.0 * run.n_biased / run.n_judges)
    write_series(out / "compas_series.csv", run.results)
    write_json(out / "compas_summary.json", {
        "config": _echo(cfg),
        "data": {"records": run.n_records, "train": run.n_train, "eval": run.n_eval, "rounds": run.n_rounds,
                 "dropped": run.dropped},
        "judges": {"n": run.n_judges, "biased": run.n_biased, "biased_fraction": run.n_biased / run.n_judges,
                   "tau": cfg.tau},
        "fair_thresholds": None if run.fair_thresholds is None else list(run.fair_thresholds.thresholds),
        "policies": summarize(run.results),
    })
    return EXIT_OK


def cmd_feasibility(cfg: RunConfig, out: Path) -> int:
    records = _load(cfg)
    _, _, _, rounds = cp.prepare(records, cfg.m, cfg.seed)
    if cfg.max_rounds is not None:
        rounds = rounds[:cfg.max_rounds]
    rows = cp.feasibility_sweep(cp.as_rounds(rounds), cfg.taus, cfg.biased_fractions, cfg.alphas, c=cfg.c,
                                replicates=cfg.replicates, seed=cfg.seed, n=cfg.n,
                                convention=cfg.convention)
    with (out / "feasibility.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r.tau), _fmt(r.biased_fraction), _fmt(r.alpha), r.regime,
                        _fmt(r.infeasibility_prob), _fmt(r.stderr)])
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "regret": cmd_regret, "compas": cmd_compas, "feasibility": cmd_feasibility}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [common] and per-command sections")
    common.add_argument("--seed", type=str, help="master seed (default 0)")
    common.add_argument("--out", type=str, help="output directory (default ./out)")
    common.add_argument("--m", type=str, help="cases per round")
    common.add_argument("--n", type=str, help="expert pool size (default 3m)")
    common.add_argument("--T", type=str, help="number of rounds")
    common.add_argument("--c", type=str, help="cost of a positive decision")
    common.add_argument("--alpha", type=str, help="disparate-impact tolerance; omit for no constraint")
    common.add_argument("--policies", type=str, help="comma-separated: " + ",".join(k.value for k in PolicyKind))
    common.add_argument("--convention", type=str, help="benefit convention: identity or complement")
    common.add_argument("--prior-alpha", dest="prior_alpha", type=str)
    common.add_argument("--prior-beta", dest="prior_beta", type=str)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="expertmatch", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="synthetic experiment")
    rg = sub.add_parser("regret", parents=[common], help="regret on the adversarial and synthetic instances")
    rg.add_argument("--theta-tilde", dest="theta_tilde", type=str)
    rg.add_argument("--variant", type=str, choices=["positive", "zero"])
    rg.add_argument("--adversarial-T", dest="adversarial_T", type=str)
    for name, text in (("compas", "COMPAS experiment"), ("feasibility", "COMPAS feasibility sweep")):
        sp = sub.add_parser(name, parents=[common], help=text)
        sp.add_argument("--data", type=str, help=f"ProPublica CSV (default {DEFAULT_DATA})")
        sp.add_argument("--tau", type=str, help="judge diversity: thresholds ~ Beta(tau, tau)")
        sp.add_argument("--biased-fraction", dest="biased_fraction", type=str)
    fs = sub.choices["feasibility"]
    fs.add_argument("--taus", type=str)
    fs.add_argument("--biased-fractions", dest="biased_fractions", type=str)
    fs.add_argument("--alphas", type=str)
    fs.add_argument("--replicates", type=str)
    fs.add_argument("--max-rounds", dest="max_rounds", type=str)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = build_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg.out)
    try:
        if args.command in ("compas", "feasibility") and not Path(cfg.data).is_file():
            print(f"dataset not found: {cfg.data}", file=sys.stderr)
            return EXIT_DATA
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out)
    except FileNotFoundError as exc:
        print(f"dataset not found: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - the exit-code contract covers every failure
        log.exception("run failed")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
