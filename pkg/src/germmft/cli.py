"""Command line entry point: ``germmft <scenario> --config <file> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys

import yaml

from .experiment import SCENARIOS, ExperimentConfig, resolve_jobs, run


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="germmft", description="Mean-field and complex-germ asymptotics experiments.")
    ap.add_argument("scenario", choices=SCENARIOS)
    ap.add_argument("--config", required=True, help="YAML file mirroring ExperimentConfig")
    ap.add_argument("--out", help="output directory (overrides the config)")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--n-list", help="comma separated particle numbers, e.g. 4,6,8")
    ap.add_argument("--dt", type=float)
    ap.add_argument("--jobs", type=int, help="worker processes (GERMMFT_JOBS overrides)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        with open(args.config) as fh:
            doc = yaml.safe_load(fh) or {}
        if not isinstance(doc, dict):
            raise ValueError("config file must hold a key-value mapping")
        doc["scenario"] = args.scenario
        if args.out:
            doc["output_dir"] = args.out
        if args.seed is not None:
            doc["seed"] = args.seed
        if args.n_list:
            doc["N_list"] = [int(s) for s in args.n_list.split(",") if s.strip()]
        if args.dt is not None:
            doc["dt"] = args.dt
        doc["jobs"] = resolve_jobs(args.jobs if args.jobs is not None else doc.get("jobs", 1))
        cfg = ExperimentConfig.from_dict(doc)
        rep = run(cfg)
    except (ValueError, RuntimeError, OSError, yaml.YAMLError) as exc:
        print(f"germmft: error: {exc}", file=sys.stderr)
        return 2
    sys.stdout.write(rep.summary())
    return 0 if rep.passed else 1


if __name__ == "__main__":
    sys.exit(main())
