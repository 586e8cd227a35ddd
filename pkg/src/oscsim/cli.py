"""Command line interface: run / steady / compare / sweep / plot."""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from . import scenario
from .bdf import IntegrationError


def _add_common(parser):
    parser.add_argument("config", help="scenario configuration file")
    parser.add_argument("--out-dir", default="out", help="output directory")
    parser.add_argument("--order-cap", type=int, choices=range(1, 6),
                        help="maximum BDF order")
    parser.add_argument("--rtol", type=float, help="integrator relative tolerance")
    parser.add_argument("--atol", type=float,
                        help="integrator absolute tolerance factor (times the "
                             "per-species variable scales)")
    parser.add_argument("--snapshots", type=str,
                        help="comma-separated snapshot times in seconds")
    parser.add_argument("--seed-free", action="store_true",
                        help="assert that the run involves no random numbers "
                             "(always true; the solvers are deterministic)")


def _load(args) -> scenario.ScenarioConfig:
    cfg = scenario.load_config(args.config)
    updates = {}
    if args.order_cap is not None:
        updates["order_cap"] = args.order_cap
    if args.rtol is not None:
        updates["rtol"] = args.rtol
    if args.atol is not None:
        updates["atol_factor"] = args.atol
    if args.snapshots:
        updates["snapshots"] = tuple(float(s) for s in args.snapshots.split(","))
    if updates:
        cfg = replace(cfg, **updates)
    return cfg


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="oscsim",
        description="1D transient drift-diffusion simulator for "
                    "bulk-heterojunction organic solar cells")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (("run", "integrate the configured model"),
                            ("steady", "stationary solve"),
                            ("compare", "paired full vs reduced transients"),
                            ("sweep", "Cartesian parameter sweep")):
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        if name == "sweep":
            p.add_argument("--workers", type=int, default=None,
                           help="worker processes (default: cpu count)")
        if name == "run":
            p.add_argument("--memory-diagnostics", action="store_true",
                           help="also compute the exact vs lumped memory "
                                "integral of the pair elimination (full "
                                "model run) and write memory.csv")

    p = sub.add_parser("plot", help="render CSV outputs as SVG")
    p.add_argument("csv", nargs="+", help="transient or fields CSV files")
    p.add_argument("--style", choices=("transient", "field", "density"),
                   default="transient")
    p.add_argument("-o", "--output", default="plot.svg")

    args = parser.parse_args(argv)

    try:
        if args.command == "plot":
            if args.style == "transient":
                records = [scenario.read_transient_csv(p) for p in args.csv]
            else:
                records = [scenario.read_fields_csv(p) for p in args.csv]
            from .plotting import emit_plot
            emit_plot(records, args.style, args.output, labels=args.csv)
            print(f"wrote {args.output}")
            return 0

        cfg = _load(args)
        if args.command == "run":
            result = scenario.run(cfg, args.out_dir)
            rec = result.record
            if getattr(args, "memory_diagnostics", False):
                diag, _ = scenario.run_memory_diagnostics(cfg)
                scenario.write_memory_csv(diag, f"{args.out_dir}/memory.csv")
            print(f"model={cfg.model} steps={rec.stats.get('steps', 0)} "
                  f"J_end={rec.J[-1]:.6g} A/m^2 -> {args.out_dir}/transient.csv")
        elif args.command == "steady":
            result = scenario.run(replace(cfg, model="steady"), args.out_dir)
            print(f"steady J={result.record.J[0]:.6g} A/m^2 "
                  f"-> {args.out_dir}/fields_steady.csv")
        elif args.command == "compare":
            res_full, res_red = scenario.compare(cfg, args.out_dir)
            from .plotting import emit_plot
            emit_plot([res_full.record, res_red.record], "transient",
                      f"{args.out_dir}/overlay.svg", labels=["full", "reduced"])
            print(f"J_inf full={res_full.record.J[-1]:.6g} "
                  f"reduced={res_red.record.J[-1]:.6g} -> {args.out_dir}/")
        elif args.command == "sweep":
            result = scenario.sweep(cfg, args.out_dir, workers=args.workers)
            n_ok = sum(1 for r in result.rows if "error" not in r)
            print(f"sweep: {n_ok}/{len(result.rows)} runs succeeded "
                  f"-> {args.out_dir}/sweep.csv")
            for row in result.rows:
                if "error" in row:
                    print(f"  FAILED {row}", file=sys.stderr)
        return 0
    except scenario.ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (IntegrationError, ValueError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
