"""``fedspectre`` command line: synth, run, sweep and report."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import __version__
from .data import write_csv
from .errors import FedSpectreError
from .evaluation import EvaluationReport
from .scenarios import (
    SCENARIO_IDS,
    SweepSpec,
    builtin_sweep,
    builtin_sweeps,
    config_hash,
    load_scenario,
    run_scenario,
    run_sweep,
    write_scenario_outputs,
    write_sweep_outputs,
)
from .synth import SyntheticSpec, default_spec_tree, synthesize

ROBUSTNESS = "robustness_sweep"


def _synth(args) -> None:
    if args.spec:
        spec = SyntheticSpec.from_file(args.spec)
        with open(args.spec, encoding="utf-8") as fh:
            tree = fh.read()
    else:
        spec = SyntheticSpec.default()
        tree = json.dumps(default_spec_tree(), sort_keys=True)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(synthesize(spec, args.seed), out)
    manifest = {
        "kind": "synth",
        "config_hash": config_hash(tree),
        "seed": args.seed,
        "spec": args.spec or "default",
        "version": __version__,
    }
    out.with_name(out.stem + ".manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(out)


def _load_sweep(ref: str) -> SweepSpec:
    if ref in builtin_sweeps():
        return builtin_sweep(ref)
    return SweepSpec.from_file(ref)


def _sweep(spec: SweepSpec, out: Path, workers) -> None:
    rows = run_sweep(spec, workers=workers, out=out)
    write_sweep_outputs(rows, spec, out)
    print(out / "sweep.csv")


def _run(args) -> None:
    out = Path(args.out)
    if args.scenario == ROBUSTNESS:
        # every bundled grid, one subdirectory each
        for name in builtin_sweeps():
            spec = builtin_sweep(name)
            spec.data = args.data
            spec.seeds = [args.seed]
            spec.paper_quotas = args.paper_quotas
            _sweep(spec, out / name, args.workers)
        return
    cfg = load_scenario(args.scenario, args.seed, args.paper_quotas)
    result = run_scenario(cfg, args.data)
    write_scenario_outputs(result, cfg, out, args.data)
    print(result.report.to_csv(), end="")


def _report(args) -> None:
    src = Path(args.input)
    if (src / "report.json").is_file():
        report = EvaluationReport.from_dict(json.loads((src / "report.json").read_text()))
        sys.stdout.write(report.to_csv() if args.format == "csv" else report.to_json())
        return
    if (src / "sweep.csv").is_file():
        text = (src / "sweep.csv").read_text()
        if args.format == "csv":
            sys.stdout.write(text)
        else:
            rows = list(csv.DictReader(text.splitlines()))
            sys.stdout.write(json.dumps(rows, indent=2) + "\n")
        return
    raise FedSpectreError(f"{src}: no report.json or sweep.csv found")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedspectre", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic fingerprint CSV")
    p.add_argument("--out", required=True, help="CSV path")
    p.add_argument("--spec", help="synthetic spec YAML (default: bundled desk spec)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_synth)

    p = sub.add_parser("run", help="train and evaluate one scenario")
    p.add_argument("--scenario", required=True,
                   help=f"{', '.join(SCENARIO_IDS + (ROBUSTNESS,))} or a scenario YAML")
    p.add_argument("--data", default="synthetic", help="'synthetic', a synthetic spec YAML or a CSV")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--paper-quotas", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=None, help="sweep worker processes (robustness_sweep only)")
    p.set_defaults(func=_run)

    p = sub.add_parser("sweep", help="run a robustness grid")
    p.add_argument("--spec", required=True, help=f"sweep YAML or one of: {', '.join(builtin_sweeps())}")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=None, help="default: FEDSPECTRE_THREADS or the CPU count")
    p.set_defaults(func=lambda a: _sweep(_load_sweep(a.spec), Path(a.out), a.workers))

    p = sub.add_parser("report", help="print a written report")
    p.add_argument("--in", dest="input", required=True, help="output directory of run or sweep")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (FedSpectreError, OSError) as exc:
        print(f"fedspectre {args.command}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
