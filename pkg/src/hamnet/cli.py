"""Command-line front end.

Subcommands: validate, relax, retrieve, capacity, train, demo. Every
experiment is driven by a config file plus explicit seeds, so identical
invocations produce byte-identical CSV outputs. Set HAMNET_OUT_DIR to
redirect relative output paths into a different directory.

Exit codes: 0 success, 1 domain error (invalid network, numeric failure,
diverged training), 2 config error (unparseable config, unknown keys,
unreadable inputs).
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import serialization
from .config import ConfigError
from .dynamics import IntegratorConfig, NetworkState, relax, zero_state
from .memory import (
    NoiseModel,
    PatternSet,
    build_assembly_demo,
    capacity_sweep,
    corrupt,
    load_patterns_csv,
    load_pgm,
    retrieve,
    save_pgm,
    store_single_hidden,
)
from .topology import NetworkSpec, ShapeMismatchError
from .trainer import TrainingDiverged, train
from .trainer import save_loss_curve


class DomainError(RuntimeError):
    pass


def _out_path(path_text: str) -> Path:
    path = Path(path_text)
    base = os.environ.get("HAMNET_OUT_DIR")
    if base and not path.is_absolute():
        path = Path(base) / path
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _require_network(cfg) -> NetworkSpec:
    if cfg.network is None:
        raise ConfigError("this experiment requires [layer.N]/[connection.N] sections")
    problems = cfg.network.validate()
    if problems:
        raise DomainError("invalid network:\n  " + "\n  ".join(problems))
    return cfg.network


def _load_cue(path_text: str) -> np.ndarray:
    path = Path(path_text)
    try:
        if path.suffix.lower() == ".pgm":
            return load_pgm(path)
        pats = load_patterns_csv(path)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read cue {path}: {exc}") from exc
    if len(pats) != 1:
        raise ConfigError(f"cue file {path} must contain exactly one pattern, has {len(pats)}")
    return pats.patterns[0]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def cmd_validate(args) -> int:
    cfg = config_mod.load(args.config)
    if cfg.network is None:
        raise ConfigError("nothing to validate: config declares no network")
    problems = cfg.network.validate()
    if problems:
        for p in problems:
            print(p)
        return 1
    print(f"ok: {cfg.name or args.config} "
          f"({cfg.network.n_layers} layers, {len(cfg.network.connections)} connections)")
    return 0


def cmd_relax(args) -> int:
    cfg = config_mod.load(args.config)
    spec = _require_network(cfg)
    state = zero_state(spec)
    if cfg.relax_options["init"] == "gaussian":
        rng = np.random.default_rng(cfg.seed)
        state = NetworkState(
            [cfg.relax_options["scale"] * rng.normal(size=lay.shape) for lay in spec.layers]
        )
    final, trace, converged = relax(spec, state, cfg.integrator)
    path = _out_path(args.trace)
    trace.to_csv(path, include_breakdown=args.energy_breakdown)
    print(f"wrote {path} ({len(trace.rows)} rows, converged={converged})")
    if args.plot:
        from . import plots

        fig_path = path.with_suffix(".png")
        plots.plot_trace(trace, fig_path)
        print(f"wrote {fig_path}")
    return 0


def _retrieval_network(cfg):
    opts = cfg.retrieve_options
    if opts["patterns"]:
        corpus_path = cfg.base_dir / opts["patterns"]
        try:
            corpus = load_patterns_csv(corpus_path)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read patterns {corpus_path}: {exc}") from exc
        return store_single_hidden(
            corpus, beta=opts["beta"], tau_input=opts["tau_input"], tau_hidden=opts["tau_hidden"]
        )
    return _require_network(cfg)


def cmd_retrieve(args) -> int:
    cfg = config_mod.load(args.config)
    spec = _retrieval_network(cfg)
    clean = _load_cue(args.cue)
    try:
        clean = clean.reshape(spec.layers[0].shape)
    except ValueError:
        raise DomainError(
            f"cue has {clean.size} entries, input layer is {spec.layers[0].shape}"
        ) from None
    noise = cfg.retrieve_options["noise"]
    cue = corrupt(clean, noise) if noise is not None else clean
    retrieved, report = retrieve(
        spec, cue, cfg.integrator, target=clean, clamp_input=cfg.retrieve_options["clamp"]
    )
    path = _out_path(args.report)
    with open(path, "w", newline="") as fh:
        fh.write("overlap,bit_error,converged,steps,energy_initial,energy_final\n")
        fh.write(
            ",".join(
                [
                    _fmt(report.overlap),
                    _fmt(report.bit_error),
                    _fmt(report.converged),
                    _fmt(report.steps),
                    _fmt(report.energy_initial),
                    _fmt(report.energy_final),
                ]
            )
            + "\n"
        )
    print(f"wrote {path} (overlap={report.overlap:.6f}, converged={report.converged})")
    if args.save_retrieved:
        out = _out_path(args.save_retrieved)
        if out.suffix.lower() == ".pgm":
            save_pgm(out, retrieved)
        else:
            with open(out, "w", newline="") as fh:
                fh.write(",".join(repr(float(v)) for v in retrieved.ravel()) + "\n")
        print(f"wrote {out}")
    if args.plot:
        from . import plots

        fig_path = path.with_suffix(".png")
        plots.plot_retrieval(cue, retrieved, clean, fig_path)
        print(f"wrote {fig_path}")
    return 0


def cmd_capacity(args) -> int:
    cfg = config_mod.load(args.config)
    if not cfg.capacity_options:
        raise ConfigError("capacity experiments need a [capacity] section (kind = capacity)")
    opts = cfg.capacity_options
    table = capacity_sweep(
        n_input=opts["n_input"],
        k_list=opts["k_list"],
        beta_list=opts["beta_list"],
        noise=opts["noise"],
        trials=opts["trials"],
        seed=cfg.seed,
        tau_hidden=opts["tau_hidden"],
        cfg=opts["integrator"],
    )
    path = _out_path(args.out)
    table.to_csv(path)
    print(f"wrote {path} ({len(table.rows)} cells)")
    if args.plot:
        from . import plots

        fig_path = path.with_suffix(".png")
        plots.plot_capacity(table, fig_path)
        print(f"wrote {fig_path}")
    return 0


def cmd_train(args) -> int:
    cfg = config_mod.load(args.config)
    if not cfg.train_options:
        raise ConfigError("training needs a [train] section (kind = train)")
    spec = _require_network(cfg)
    corpus_path = cfg.base_dir / cfg.train_options["patterns"]
    try:
        corpus = load_patterns_csv(corpus_path, shape=spec.layers[0].shape)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read patterns {corpus_path}: {exc}") from exc
    curve_path = _out_path(args.curve)
    try:
        trained, history = train(spec, corpus, cfg.train_options["config"])
    except TrainingDiverged as exc:
        save_loss_curve(curve_path, exc.history)
        print(f"wrote {curve_path} (partial)", file=sys.stderr)
        raise DomainError(str(exc)) from exc
    model_path = _out_path(args.out)
    serialization.save(trained, model_path)
    save_loss_curve(curve_path, history)
    print(f"wrote {model_path}")
    print(f"wrote {curve_path} (final loss {history[-1]:.6g})")
    if args.plot:
        from . import plots

        fig_path = curve_path.with_suffix(".png")
        plots.plot_loss_curve(history, fig_path)
        print(f"wrote {fig_path}")
    return 0


def cmd_demo(args) -> int:
    if args.which != "assembly":
        raise ConfigError(f"unknown demo {args.which!r} (available: assembly)")
    spec, composites = build_assembly_demo()
    integrator = IntegratorConfig(dt=0.02, convergence_eps=1e-9)
    rows = []
    cues, outputs = [], []
    for i, comp in enumerate(composites.patterns):
        cue = corrupt(comp, NoiseModel("mask", fraction=0.5, seed=args.seed + i))
        retrieved, report = retrieve(spec, cue, integrator, target=comp)
        rows.append((i, report))
        cues.append(cue)
        outputs.append(retrieved)
        print(
            f"memory {i}: overlap={report.overlap:.6f} bit_error={report.bit_error} "
            f"steps={report.steps}"
        )
    path = _out_path(args.out)
    with open(path, "w", newline="") as fh:
        fh.write("memory,overlap,bit_error,converged,steps\n")
        for i, report in rows:
            fh.write(
                f"{i},{_fmt(report.overlap)},{_fmt(report.bit_error)},"
                f"{_fmt(report.converged)},{report.steps}\n"
            )
    print(f"wrote {path}")
    if args.plot:
        from . import plots

        fig_path = path.with_suffix(".png")
        plots.plot_assembly(composites.patterns, cues, outputs, fig_path)
        print(f"wrote {fig_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hamnet",
        description="Hierarchical associative memory experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a config's network spec")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("relax", help="relax to a fixed point, trace to CSV")
    p.add_argument("config")
    p.add_argument("--trace", required=True, help="output CSV path")
    p.add_argument("--energy-breakdown", action="store_true",
                   help="append per-layer/per-connection energy columns")
    p.add_argument("--plot", action="store_true", help="render a PNG next to the CSV")
    p.set_defaults(func=cmd_relax)

    p = sub.add_parser("retrieve", help="retrieve a pattern from a cue")
    p.add_argument("config")
    p.add_argument("--cue", required=True, help="cue file (CSV row or PGM)")
    p.add_argument("--report", required=True, help="output report CSV path")
    p.add_argument("--save-retrieved", help="write the retrieved tensor (CSV or .pgm)")
    p.add_argument("--plot", action="store_true", help="render a PNG next to the report")
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("capacity", help="recall-success sweep over (K, beta)")
    p.add_argument("config")
    p.add_argument("--out", required=True, help="output table CSV path")
    p.add_argument("--plot", action="store_true", help="render a PNG next to the table")
    p.set_defaults(func=cmd_capacity)

    p = sub.add_parser("train", help="denoising training through the unrolled dynamics")
    p.add_argument("config")
    p.add_argument("--out", required=True, help="trained network container path")
    p.add_argument("--curve", required=True, help="loss-curve CSV path")
    p.add_argument("--plot", action="store_true", help="render a PNG next to the curve")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("demo", help="built-in demonstrations")
    p.add_argument("which", help="demo name (assembly)")
    p.add_argument("--out", default="demo_assembly.csv", help="report CSV path")
    p.add_argument("--seed", type=int, default=11, help="mask seed")
    p.add_argument("--plot", action="store_true", help="render a PNG next to the report")
    p.set_defaults(func=cmd_demo)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ShapeMismatchError, FloatingPointError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
