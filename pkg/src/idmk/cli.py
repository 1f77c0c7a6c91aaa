"""``idmk`` command-line entry point.

Exit codes: 0 on success, 1 for usage or configuration errors, 2 for
runtime failures (missing or corrupt inputs, incompatible checkpoints,
failed gradient checks).
"""

from __future__ import annotations

import argparse
import sys

from . import pipeline
from .config import CONFIG_ENV_VAR, ConfigError, default_config_text, load_config

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    """argparse, but usage errors exit with status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class RuntimeFailure(RuntimeError):
    pass


def _float_list(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("expected at least one value")
    return vals


def _pair_list(text: str) -> list[tuple[float, float]]:
    """``0.5:2,1:4`` -> [(0.5, 2.0), (1.0, 4.0)]."""
    pairs = []
    for item in text.split(","):
        try:
            a, b = item.split(":")
            pairs.append((float(a), float(b)))
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected r_in:r_out pairs, got {item!r}")
    return pairs


def _add_rollout_flags(p):
    g = p.add_argument_group("rollout")
    g.add_argument("--strategy", choices=["static", "closest", "radius", "inner_outer"],
                   help="future selection strategy (config: selector.strategy)")
    g.add_argument("--K", type=int, help="frames skipped ahead of the selected index")
    g.add_argument("--r", type=float, help="radius for the radius strategy")
    g.add_argument("--r-in", type=float, dest="r_in", help="inner radius for inner_outer")
    g.add_argument("--r-out", type=float, dest="r_out", help="outer radius for inner_outer")
    g.add_argument("--sigma", type=float, help="environment noise during rollouts")
    g.add_argument("--n-seeds", type=int, dest="n_seeds", help="rollout seeds per reference")
    g.add_argument("--jobs", type=int, help="maximum concurrent rollouts")


def _rollout_overrides(args) -> dict:
    return {k: getattr(args, k) for k in ("strategy", "K", "r", "r_in", "r_out", "sigma", "n_seeds", "jobs")}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="idmk",
        description="Trajectory following with a future-conditioned inverse dynamics model.",
        epilog=f"The config file may also be given through ${CONFIG_ENV_VAR}. "
               "Run `idmk config` to print every default.",
    )
    parser.add_argument("--config", help=f"TOML run config (default: ${CONFIG_ENV_VAR} or built-in defaults)")
    parser.add_argument("--quiet", action="store_true", help="suppress progress output")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("gen-data", help="generate reference and training trajectories")
    p.add_argument("out_dir", help="output directory")
    p.add_argument("--seed", type=int, help="override the top-level seed")
    p.add_argument("--n-per-scenario", type=int, dest="n_per_scenario", help="training trajectories per scenario")

    p = sub.add_parser("train", help="train an IDM on a gen-data directory")
    p.add_argument("data_dir", help="gen-data output directory")
    p.add_argument("out_dir", help="directory for model.json, epochs.csv and the manifest")
    p.add_argument("--ablation", choices=sorted(pipeline.ABLATIONS),
                   help="train a window or modality variant instead of the configured model")
    p.add_argument("--grad-check", action="store_true", help="run a gradient check first and abort if it fails")
    p.add_argument("--epochs", type=int, help="override train.epochs")

    p = sub.add_parser("eval", help="roll out a trained model against the references")
    p.add_argument("model", help="model.json or a train output directory")
    p.add_argument("refs_dir", help="gen-data directory or a directory of reference JSONL files")
    p.add_argument("out_dir", help="output directory")
    _add_rollout_flags(p)
    p.add_argument("--sweep-radius", type=_float_list, dest="sweep_radius", metavar="R1,R2,...",
                   help="also run a radius sweep into OUT_DIR/sweep")
    p.add_argument("--dtw-aligned", action="store_true", help="also write AUC measured after DTW alignment")

    p = sub.add_parser("sweep", help="radius and inner-outer grid over a trained model")
    p.add_argument("model")
    p.add_argument("refs_dir")
    p.add_argument("out_dir")
    _add_rollout_flags(p)
    p.add_argument("--radii", type=_float_list, metavar="R1,R2,...", help="radius values (config: sweep.radii)")
    p.add_argument("--io-pairs", type=_pair_list, dest="io_pairs", metavar="RIN:ROUT,...",
                   help="inner-outer pairs (config: sweep.io_pairs)")

    p = sub.add_parser("report", help="summarise the runs under a directory")
    p.add_argument("run_dir")
    p.add_argument("--no-figures", action="store_true", help="write the summary and CSVs only")

    p = sub.add_parser("grad-check", help="compare backprop with central finite differences")
    p.add_argument("--samples", type=int, default=2, help="input rows in the probe batch")
    p.add_argument("--h", type=float, default=1e-5, help="finite-difference step")
    p.add_argument("--tol", type=float, default=1e-4, help="maximum allowed relative error")
    p.add_argument("--max-probes", type=int, dest="max_probes", help="cap on probed parameters")

    p = sub.add_parser("ablate", help="train and evaluate the window or modality variants")
    p.add_argument("kind", choices=["windows", "modality"])
    p.add_argument("data_dir")
    p.add_argument("refs_dir")
    p.add_argument("out_dir")

    sub.add_parser("config", help="print the default configuration as TOML")
    return parser


def _log(args, msg: str) -> None:
    if not args.quiet:
        print(msg, flush=True)


def _run(args) -> None:
    if args.command == "config":
        print(default_config_text(), end="")
        return
    cfg = load_config(args.config)
    cmd = args.command

    if cmd == "gen-data":
        cfg = cfg.with_overrides(data={"n_per_scenario": args.n_per_scenario})
        if args.seed is not None:
            data = cfg.to_dict()
            data["seed"] = args.seed
            cfg = type(cfg)(data)
        m = pipeline.cmd_gen_data(cfg, args.out_dir)
        _log(args, f"wrote {len(m['references'])} references and {len(m['train'])} training trajectories "
                   f"(config {m['config_hash']})")

    elif cmd == "train":
        cfg = cfg.with_overrides(train={"epochs": args.epochs})
        if args.grad_check:
            rep = pipeline.cmd_grad_check(pipeline.resolve_ablation(cfg, args.ablation), max_probes=200)
            _log(args, f"grad check: max rel error {rep.max_rel_error:.3e} over {rep.n_probes} probes")
            if not rep.passed:
                raise RuntimeFailure(f"gradient check failed (max rel error {rep.max_rel_error:.3e})")

        def progress(epoch, lb):
            _log(args, f"epoch {epoch:3d}  total {lb.total:.4f}  button {lb.button_loss:.4f}  "
                       f"sticks {lb.sticks_loss:.4f}  button_err {lb.button_error_rate:.3f}  "
                       f"sticks_err {lb.sticks_error_rate:.3f}")

        m = pipeline.cmd_train(cfg, args.data_dir, args.out_dir, args.ablation, progress=progress)
        _log(args, f"saved model to {args.out_dir} (config {m['config_hash']})")

    elif cmd == "eval":
        overrides = _rollout_overrides(args)
        m = pipeline.cmd_eval(cfg, args.model, args.refs_dir, args.out_dir, args.dtw_aligned, **overrides)
        rows = pipeline.read_csv(f"{args.out_dir}/metrics.csv")
        _log(args, f"strategy {m['strategy']}, seeds {m['seeds'][0]}..{m['seeds'][-1]}")
        for r in rows:
            if r["seed"] == "median":
                _log(args, f"  {r['trajectory']:<18} AUC {float(r['auc']):.3f}  FI {float(r['fi']):.3f}  "
                           f"DTW {float(r['dtw']):.2f}")
        if args.sweep_radius:
            pipeline.cmd_sweep(cfg, args.model, args.refs_dir, f"{args.out_dir}/sweep",
                               radii=args.sweep_radius, **overrides)
            _log(args, f"sweep written to {args.out_dir}/sweep/sweep.csv")

    elif cmd == "sweep":
        pipeline.cmd_sweep(cfg, args.model, args.refs_dir, args.out_dir, radii=args.radii,
                           io_pairs=args.io_pairs, **_rollout_overrides(args))
        for r in pipeline.read_csv(f"{args.out_dir}/sweep.csv"):
            if r["trajectory"] == "Mean":
                _log(args, f"  {r['strategy']:<32} mean AUC {float(r['auc']):.3f}")

    elif cmd == "report":
        text = pipeline.cmd_report(args.run_dir, figures=not args.no_figures)
        print(text)

    elif cmd == "grad-check":
        rep = pipeline.cmd_grad_check(cfg, args.samples, args.h, args.tol, args.max_probes)
        print(f"max relative error {rep.max_rel_error:.3e} over {rep.n_probes} probes "
              f"(tol {rep.tol:g}): {'PASS' if rep.passed else 'FAIL'}")
        if not rep.passed:
            raise RuntimeFailure("gradient check failed")

    elif cmd == "ablate":
        pipeline.cmd_ablate(cfg, args.data_dir, args.refs_dir, args.out_dir, args.kind)
        for r in pipeline.read_csv(f"{args.out_dir}/ablation.csv"):
            _log(args, f"  {r['config']:<14} {r['trajectory']:<18} AUC {float(r['auc']):.3f}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _run(args)
    except ConfigError as exc:
        print(f"idmk: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RuntimeFailure, OSError, ValueError, KeyError) as exc:
        print(f"idmk: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
