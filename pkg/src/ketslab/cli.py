"""Command-line front end: run one experiment or sweep a single config key.

Every run writes ``metrics.csv``, ``trust.csv`` and ``summary.json`` into its
output directory. Files are written to a temporary name first and renamed, so
a reader never sees a half-written report.
"""

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path

from .config import FIELD_TYPES, parse_config
from .errors import ConfigError, KetsLabError
from .orchestrator import compute_metrics, run_experiment, select_attackers

log = logging.getLogger(__name__)

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2

METRICS_HEADER = ["round", "accuracy", "n_selected", "n_honest", "n_excluded_total"]
TRUST_HEADER = ["round", "client_id", "trust", "is_attacker"]


@dataclass
class ReportBundle:
    metrics_csv: Path
    trust_csv: Path
    summary_json: Path


def _fmt(x):
    return f"{x:.6f}"


def _round6(x):
    return None if x is None else round(float(x), 6)


def atomic_write(path, text):
    """Write ``text`` to ``path`` via a sibling temp file and an atomic rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def metrics_rows(reports):
    return [
        [r.round, _fmt(r.accuracy), len(r.selected), len(r.honest), r.n_excluded_total]
        for r in reports
    ]


def trust_rows(reports, attacker_ids):
    attackers = set(attacker_ids)
    return [
        [r.round, c, _fmt(r.trust[c]), int(c in attackers)]
        for r in reports
        for c in sorted(r.trust)
    ]


def summary_dict(cfg, reports, attacker_ids):
    m = compute_metrics(reports, attacker_ids)
    return {
        "final_accuracy": _round6(m["final_accuracy"]),
        "mean_accuracy": _round6(m["mean_accuracy"]),
        "tpr": _round6(m["tpr"]),
        "fpr": _round6(m["fpr"]),
        "rounds_to_exclusion": {str(a): v for a, v in m["rounds_to_exclusion"].items()},
        "mean_rounds_to_exclusion": _round6(m["mean_rounds_to_exclusion"]),
        "attacker_ids": list(attacker_ids),
        "config": cfg.to_flat(),
    }


def run_and_report(cfg, out_dir):
    """Run ``cfg`` and write the three report files into ``out_dir``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    reports = run_experiment(cfg)
    attackers = select_attackers(cfg)
    bundle = ReportBundle(out / "metrics.csv", out / "trust.csv", out / "summary.json")
    atomic_write(bundle.metrics_csv, _csv_text(METRICS_HEADER, metrics_rows(reports)))
    atomic_write(bundle.trust_csv, _csv_text(TRUST_HEADER, trust_rows(reports, attackers)))
    summary = summary_dict(cfg, reports, attackers)
    atomic_write(bundle.summary_json, json.dumps(summary, indent=2, sort_keys=True) + "\n")
    log.info("wrote %s (final accuracy %s)", out, summary["final_accuracy"])
    return bundle


def sweep(cfg, key, values, out_dir):
    """One bundle per value, each in ``out_dir/<key>=<value>``."""
    if key not in FIELD_TYPES:
        raise ConfigError("unknown sweep key", key=key)
    # validate every point before spending time on any run
    configs = [(v, cfg.replace(**{key: v})) for v in values]
    return [run_and_report(c, Path(out_dir) / f"{key}={v}") for v, c in configs]


def _load(args):
    try:
        cfg = parse_config(args.config)
    except OSError as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc.strerror or exc}") from None
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def build_parser():
    p = argparse.ArgumentParser(prog="ketslab", description="Federated poisoning experiments with trust segmentation.")
    p.add_argument("--seed", type=int, default=None, help="override the config's seed")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("--config", required=True)
    run.add_argument("--out", required=True)

    sw = sub.add_parser("sweep", help="run one experiment per value of a config key")
    sw.add_argument("--config", required=True)
    sw.add_argument("--key", required=True)
    sw.add_argument("--values", required=True, help="comma-separated values")
    sw.add_argument("--out", required=True)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _load(args)
        if args.command == "run":
            run_and_report(cfg, args.out)
        else:
            values = [v.strip() for v in args.values.split(",") if v.strip()]
            if not values:
                raise ConfigError("no sweep values given", key=args.key)
            sweep(cfg, args.key, values, args.out)
    except ConfigError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (KetsLabError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
