"""Command line: ``pudding scenario`` and ``pudding game``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .config import ConfigError, ScenarioConfig, load_config
from .games import GAMES, run_game
from .report import RENDERERS, emit_report
from .scenario import run_scenario


def _config(args: argparse.Namespace) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    overrides = {}
    if args.seed is not None:
        overrides["rng_seed"] = args.seed
    if getattr(args, "trials", None) is not None:
        overrides["trials"] = args.trials
    return dataclasses.replace(cfg, **overrides).validate() if overrides else cfg


def _scenario(args: argparse.Namespace) -> int:
    cfg = _config(args)
    result = run_scenario(cfg)
    out = Path(args.out)
    path = emit_report(result.metrics, args.format, out)
    reports = "[" + ",".join(r.to_json() for r in result.reports) + "]\n"
    (out / "sim_report.json").write_text(reports)
    print(f"wrote {path} and {out / 'sim_report.json'}")
    return 0


def _game(args: argparse.Namespace) -> int:
    cfg = _config(args)
    verdict = run_game(args.game, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = {"game": verdict.game, "passed": verdict.passed, "runs": verdict.runs, "evidence": verdict.evidence, "failures": verdict.failures}
    (out / f"{verdict.game}.json").write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    print(verdict.line())
    for failure in verdict.failures:
        print(f"  {failure}")
    return 0 if verdict.passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pudding", description="Simulated contact discovery: latency scenarios and security games.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="YAML or JSON scenario document")
        p.add_argument("--seed", type=int, help="override rng_seed (unsigned 64-bit)")
        p.add_argument("--out", default="out", help="output directory")

    sc = sub.add_parser("scenario", help="run a latency scenario")
    common(sc)
    sc.add_argument("--format", choices=sorted(RENDERERS), default="csv")
    sc.set_defaults(func=_scenario)

    gm = sub.add_parser("game", help="run a security game")
    gm.add_argument("game", choices=GAMES)
    common(gm)
    gm.add_argument("--trials", type=int, help="override the trial count")
    gm.add_argument("--format", choices=["json"], default="json")
    gm.set_defaults(func=_game)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
