"""Command-line entry points.

Exit codes: 0 on success, 1 when validation fails (bad configuration,
arguments or rule files), 2 on runtime errors.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import famm, metrics, sim
from .config import ConfigError, RunConfig, load_config
from .fusion import StateCorrupt
from .kvfile import dump_kv, parse_value
from .pipeline import run_pipeline

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2

STEP_COLUMNS = "t,Px,Py,Pz,Rx,Ry,Rz,y_p,y_r,model_id,trace_Sigma"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _header(cfg: RunConfig, extra=()):
    return "".join(f"# {line}\n" for line in list(cfg.header_lines()) + list(extra))


def _overrides(args):
    out = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(item, "--set expects key=value")
        key, value = item.split("=", 1)
        out[key.strip()] = parse_value(value)
    for name, key in (("seed", "seed"), ("mode", "mode"), ("regime", "regime"), ("dataset", "dataset"),
                      ("sensors", "sensors"), ("scale", "scale")):
        value = getattr(args, name, None)
        if value is not None:
            out[key] = value
    if getattr(args, "out", None) is not None:
        out["out"] = args.out
    return out


def _config(path, args):
    return load_config(path, _overrides(args))


# ---------------------------------------------------------------------------
# commands


def cmd_generate(cfg: RunConfig, out_dir: str):
    """Write a dataset bundle for the configured regime."""
    ds = cfg.dataset()
    sim.write_bundle(ds, out_dir, cfg.header_lines())
    return ds


def write_run_outputs(cfg: RunConfig, report, out_dir, dataset=None):
    os.makedirs(out_dir, exist_ok=True)
    header = _header(cfg)
    table = report.steps_table()
    with open(os.path.join(out_dir, "steps.csv"), "w") as fh:
        fh.write(header)
        fh.write(STEP_COLUMNS + "\n")
        for row, model in zip(table, report.models):
            values = ",".join(repr(float(v)) for v in row[:9])
            fh.write(f"{values},{model},{float(row[10])!r}\n")
    summary = run_summary(cfg, report, dataset)
    with open(os.path.join(out_dir, "summary.txt"), "w") as fh:
        fh.write(header)
        fh.write(dump_kv(summary))
    for step, t, sigma in report.covariances:
        with open(os.path.join(out_dir, f"covariance_{step:06d}.csv"), "w") as fh:
            fh.write(header)
            fh.write(f"# step={step} t={t!r}\n")
            np.savetxt(fh, sigma, delimiter=",", fmt="%.17g")
    return summary


def run_summary(cfg: RunConfig, report, dataset=None):
    summary = metrics.summarize(report, cfg["warmup"])
    summary["dataset_size"] = len(report)
    if dataset is not None and len(dataset.truth.t) and len(report):
        summary["rms_position_error"] = metrics.rms_position_error(dataset, report, cfg["warmup"])
    return summary


def cmd_run(cfg: RunConfig, out_dir=None):
    """Run the pipeline; returns ``(report, summary)`` and writes outputs when ``out_dir`` is set."""
    dataset = cfg.dataset()
    report = run_pipeline(dataset, cfg.pipeline(), cfg.filter(), cfg.famm())
    if out_dir:
        summary = write_run_outputs(cfg, report, out_dir, dataset)
    else:
        summary = run_summary(cfg, report, dataset)
    return report, summary


def _arrow(delta):
    if delta > 0:
        return "↑"
    if delta < 0:
        return "↓"
    return ""


def cmd_compare(cfg_a: RunConfig, cfg_b: RunConfig):
    """Run both configurations on the same data; rows of (metric, a, b, delta, arrow)."""
    if cfg_a.dataset_identity() != cfg_b.dataset_identity():
        raise ConfigError("dataset", "the two configurations do not describe the same dataset")
    _, sa = cmd_run(cfg_a)
    _, sb = cmd_run(cfg_b) if cfg_b != cfg_a else (None, sa)
    rows = []
    for key in ("mean_error", "std_error", "rms_position_error", "final_trace"):
        if key in sa and key in sb:
            delta = sb[key] - sa[key]
            rows.append((key, sa[key], sb[key], delta, _arrow(delta)))
    return rows


def cmd_validate_rules(path):
    """Check a rule file; returns ``(ok, lines of report text)``."""
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise FileNotFoundError(f"cannot read rule file {path!r}: {exc.strerror}") from None
    report = famm.check_rule_lines(lines)
    out = [f"rules: {len(report.rules)}"]
    out += [f"error: {p}" for p in report.problems]
    if report.ok:
        rb = famm.RuleBase((r for _, r in report.rules), check_canonical=False)
        unreachable = rb.unreachable()
        out.append("unreachable consequents: " + (", ".join(m.name for m in unreachable) if unreachable else "none"))
        out.append("PASS")
    else:
        out.append("FAIL")
    return report.ok, out


# ---------------------------------------------------------------------------
# argument handling


def _common(p, out_required=False):
    p.add_argument("--config", help="key=value configuration file")
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=("cmm", "famm"), type=str.lower)
    p.add_argument("--out", required=out_required, help="output directory")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one configuration key")


def build_parser():
    parser = _Parser(prog="fammfusion", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write a synthetic dataset bundle")
    _common(p, out_required=True)
    p.add_argument("--regime", help=f"one of {', '.join(sim.REGIME_STEPS)} (or 1-5)")
    p.add_argument("--scale", type=float)

    p = sub.add_parser("run", help="run the fusion pipeline and write per-step records")
    _common(p)
    p.add_argument("--regime")
    p.add_argument("--dataset", help="dataset bundle directory")
    p.add_argument("--sensors", choices=("camera-gps-imu", "gps-imu", "gps"))
    p.add_argument("--scale", type=float)

    p = sub.add_parser("compare", help="run two configurations on the same data and compare")
    p.add_argument("config_a")
    p.add_argument("config_b")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="write the comparison table as CSV here")

    p = sub.add_parser("validate-rules", help="check a rule file")
    p.add_argument("rule_file", nargs="?", default=None, help="defaults to the packaged rule base")
    return parser


def _print_summary(summary, out):
    for key, value in summary.items():
        if isinstance(value, float):
            print(f"{key:>24s}  {value:.6g}", file=out)
        else:
            print(f"{key:>24s}  {value}", file=out)


def main(argv=None, out=None):
    out = out or sys.stdout
    err = sys.stderr
    try:
        args = build_parser().parse_args(argv)
        if args.command == "validate-rules":
            ok, lines = cmd_validate_rules(args.rule_file or str(famm.default_rule_path()))
            print("\n".join(lines), file=out)
            return EXIT_OK if ok else EXIT_INVALID
        if args.command == "generate":
            cfg = _config(args.config, args)
            cmd_generate(cfg, args.out)
            print(f"wrote bundle to {args.out}", file=out)
            return EXIT_OK
        if args.command == "run":
            cfg = _config(args.config, args)
            _, summary = cmd_run(cfg, cfg["out"] or None)
            _print_summary(summary, out)
            return EXIT_OK
        if args.command == "compare":
            extra = {"seed": args.seed} if args.seed is not None else {}
            cfg_a = load_config(args.config_a, extra)
            cfg_b = load_config(args.config_b, extra)
            rows = cmd_compare(cfg_a, cfg_b)
            print(f"{'metric':>20s} {'A':>12s} {'B':>12s} {'B-A':>12s}", file=out)
            for key, a, b, d, arrow in rows:
                print(f"{key:>20s} {a:12.6g} {b:12.6g} {d:12.6g} {arrow}", file=out)
            if args.out:
                os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
                with open(args.out, "w") as fh:
                    fh.write(_header(cfg_a, ["B:"] + cfg_b.header_lines()))
                    fh.write("metric,a,b,delta,arrow\n")
                    for key, a, b, d, arrow in rows:
                        fh.write(f"{key},{a!r},{b!r},{d!r},{arrow}\n")
            return EXIT_OK
    except (UsageError, ConfigError, famm.RuleBaseError) as exc:
        print(f"error: {exc}", file=err)
        return EXIT_INVALID
    except (OSError, StateCorrupt, famm.ControllerStall, RuntimeError, ValueError) as exc:
        print(f"runtime error: {exc}", file=err)
        return EXIT_RUNTIME
    return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
