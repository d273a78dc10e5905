"""Command-line runner: ``fedrare run <config>`` and ``fedrare validate <config>``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from fedrare import config as cfgmod
from fedrare.errors import FedRareError, NumericError
from fedrare.experiment import run_seed
from fedrare.metrics import aggregate_summaries

CSV_HEADER = "round,adversary_round,clean_acc,backdoor_acc,defense_rejections"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


def format_rounds(records) -> str:
    rows = [CSV_HEADER]
    for r in records:
        rows.append(f"{r.round},{int(r.adversary_round)},{r.clean_acc:.6f},{r.backdoor_acc:.6f},{r.defense_rejections}")
    return "\n".join(rows) + "\n"


def run_dir_name(digest, seed, label=None):
    name = f"{digest}-seed{seed}"
    return f"{digest}-{label}-seed{seed}" if label else name


def run_config(cfg: cfgmod.ExperimentConfig, out: Path, threads=1, quiet=False):
    """Execute every (sweep value, seed) pair; returns the list of summary documents."""
    digest = cfg.digest()
    config_lines = cfgmod.resolved_lines(cfg)
    docs = []
    for label, settings in cfg.variants():
        summaries = []
        for seed in cfg.seeds:
            result, summary = run_seed(settings, seed, threads=threads)
            run_dir = out / run_dir_name(digest, seed, label)
            run_dir.mkdir(parents=True, exist_ok=True)
            (run_dir / "rounds.csv").write_text(format_rounds(result.records), encoding="utf-8")
            doc = {
                "config_hash": digest,
                "seed": seed,
                "sweep": label,
                "summary": summary,
                "adversary_rounds": result.schedule.rounds,
                "config": config_lines,
            }
            (run_dir / "summary.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
            summaries.append(summary)
            docs.append(doc)
            if not quiet:
                tag = f" [{label}]" if label else ""
                print(
                    f"seed {seed}{tag}: clean {summary['final_clean_acc']:.4f} "
                    f"backdoor {summary['final_backdoor_acc']:.4f} -> {run_dir}"
                )
        if len(summaries) > 1 and not quiet:
            agg = aggregate_summaries(summaries)
            tag = f" [{label}]" if label else ""
            for key in ("final_clean_acc", "final_backdoor_acc"):
                s = agg[key]
                print(f"mean{tag} {key}: {s['mean']:.4f} +/- {s['stderr']:.4f} (1 s.e., n={agg['runs']})")
    return docs


def build_parser():
    p = argparse.ArgumentParser(prog="fedrare", description="Federated rare-embedding backdoor simulator")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run every seed and sweep value of a config")
    run.add_argument("config")
    run.add_argument("--out", default="runs", help="output directory (default: runs)")
    run.add_argument("--threads", type=int, default=1, help="benign clients trained concurrently")
    run.add_argument("--quiet", action="store_true")
    val = sub.add_parser("validate", help="check a config and print resolved settings")
    val.add_argument("config")
    val.add_argument("--quiet", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s %(message)s")
    try:
        cfg = cfgmod.load(args.config)
        if args.command == "validate":
            print("ok")
            if not args.quiet:
                print(cfgmod.resolved_text(cfg), end="")
            return EXIT_OK
        if args.threads < 1:
            raise cfgmod.ConfigError("--threads must be >= 1")
        run_config(cfg, Path(args.out), args.threads, args.quiet)
    except NumericError as err:
        print(f"error: {args.config}: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except FedRareError as err:
        print(f"error: {args.config}: {err}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
