"""Command-line front end.

Exactly one subcommand per invocation:

  train           fit the recurrent classifier, stream metrics CSV
  bench           time fused vs tape sweeps over a size grid
  gradcheck       run the gradient oracle suite, exit 0 iff within tolerance
  fit-unitary     fit a mesh to a random target unitary
  inspect         summarize a mesh/model checkpoint + unitarity residual
  export-metrics  re-emit a metrics CSV as clean CSV or JSON

Exit codes: 0 success, 1 runtime failure (divergence, bad data, over
tolerance), 2 usage errors (argparse).  --threads only reliably applies
to a fresh process: it sets the BLAS thread environment before numpy's
first import.
"""
from __future__ import annotations

import argparse
import json
import os
import sys


def _set_threads_env(threads: int) -> None:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(threads))


def _read_config_file(path: str) -> dict[str, str]:
    """Flat `key = value` lines; '#' starts a comment; keys match flag names."""
    out: dict[str, str] = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, value = line.split("=", 1)
            out[key.strip().replace("-", "_")] = value.strip()
    return out


_BOOLISH = {"1": True, "true": True, "yes": True, "0": False, "false": False, "no": False}


def _apply_config_defaults(parser: argparse.ArgumentParser, args: list[str]) -> None:
    """Pre-scan for --config and fold the file in as parser defaults."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(args)
    if not known.config:
        return
    raw = _read_config_file(known.config)
    defaults = {}
    for action in parser._actions:
        if action.dest in raw:
            value = raw[action.dest]
            if action.type is not None:
                defaults[action.dest] = action.type(value)
            elif isinstance(action.const, bool) or isinstance(action.default, bool):
                if value.lower() not in _BOOLISH:
                    raise ValueError(f"config key {action.dest}: not a boolean: {value!r}")
                defaults[action.dest] = _BOOLISH[value.lower()]
            else:
                defaults[action.dest] = value
    unknown = set(raw) - {a.dest for a in parser._actions}
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    parser.set_defaults(**defaults)


def _int_list(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _add_train_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--layers", type=int, default=4)
    p.add_argument("--basic-unit", choices=["psdc", "dcps"], default="psdc")
    p.add_argument("--with-diag", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--batch", type=int, default=100)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--downsample", type=int, choices=[1, 2, 4], default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=8)
    p.add_argument("--path", choices=["fused", "tape"], default="fused")
    p.add_argument("--data-dir", default=None)
    p.add_argument("--synthetic-train", type=int, default=60000)
    p.add_argument("--synthetic-test", type=int, default=10000)
    p.add_argument("--data-seed", type=int, default=12345)
    p.add_argument("--eta-in", type=float, default=1e-4)
    p.add_argument("--eta-out", type=float, default=1e-2)
    p.add_argument("--eta-hidden", type=float, default=1e-4)
    p.add_argument("--eta-act", type=float, default=1e-5)
    p.add_argument("--timer", choices=["wall", "off"], default="wall")
    p.add_argument("--out", default=None, help="directory for metrics.csv + model.ckpt")
    p.add_argument("--config", help="flat key = value file; flags override it")


def _cmd_train(args) -> int:
    from . import harness
    from .rnn import DivergenceError, RnnConfig, save_model

    cfg = harness.RunConfig(
        model=RnnConfig(
            hidden_size=args.hidden,
            fine_layers=args.layers,
            basic_unit=args.basic_unit,
            with_diag=args.with_diag,
            eta_in=args.eta_in,
            eta_out=args.eta_out,
            eta_hidden=args.eta_hidden,
            eta_act=args.eta_act,
            batch_size=args.batch,
            epochs=args.epochs,
            seed=args.seed,
        ),
        downsample=args.downsample,
        path=args.path,
        data_dir=args.data_dir,
        synthetic_train=args.synthetic_train,
        synthetic_test=args.synthetic_test,
        data_seed=args.data_seed,
        timer=args.timer,
        threads=args.threads,
    )
    train, test = harness.load_training_data(cfg)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        metrics_path = os.path.join(args.out, "metrics.csv")
        stream = open(metrics_path, "w")
    else:
        stream = sys.stdout
    try:
        result = harness.run_training(cfg, train, test, metrics_stream=stream)
    except DivergenceError as e:
        print(f"error: training diverged: {e}", file=sys.stderr)
        return 1
    finally:
        if args.out:
            stream.close()
    if args.out:
        with open(os.path.join(args.out, "model.ckpt"), "w") as f:
            save_model(result.model, f)
    return 0


def _cmd_bench(args) -> int:
    from . import harness

    paths = ["fused", "tape"] if args.path == "both" else [args.path]
    records = harness.run_benchmark(
        n_list=args.n_list,
        l_list=args.l_list,
        batch=args.batch,
        paths=paths,
        iters=args.iters,
        warmup=args.warmup,
        threads=args.threads,
        seed=args.seed,
    )
    if args.out:
        with open(args.out, "w") as f:
            harness.write_benchmark_csv(records, f)
    else:
        harness.write_benchmark_csv(records, sys.stdout)
    return 0


def _cmd_gradcheck(args) -> int:
    import math

    from . import harness

    report = harness.gradcheck_suite(
        n=args.n,
        fine_layers=args.layers,
        batch=args.batch,
        seed=args.seed,
        instances=args.instances,
        fd_step=args.fd_step,
    )
    for line in report.lines():
        print(line)
    # judge each bound separately so a failure names the one that tripped
    inf = math.inf
    bounds = {
        "rel": report.passed(tol_rel=args.tol, tol_abs=inf, tol_paths=inf),
        "abs": report.passed(tol_rel=inf, tol_abs=args.tol_abs, tol_paths=inf),
        "paths": report.passed(tol_rel=inf, tol_abs=inf, tol_paths=args.tol_paths),
    }
    ok = all(bounds.values())
    failed = "" if ok else " (" + ",".join(k for k, v in bounds.items() if not v) + ")"
    print(
        f"{'PASS' if ok else 'FAIL'}{failed} tolerance rel {args.tol:g} "
        f"abs {args.tol_abs:g} paths {args.tol_paths:g}"
    )
    return 0 if ok else 1


def _cmd_fit_unitary(args) -> int:
    from . import harness

    err = harness.fit_unitary_task(
        n=args.n,
        fine_layers=args.layers,
        with_diag=args.with_diag,
        target_seed=args.target_seed,
        iters=args.iters,
        fit_seed=args.fit_seed,
        restarts=args.restarts,
    )
    print(f"frobenius_error = {err:.6e}")
    return 0


def _cmd_inspect(args) -> int:
    import numpy as np

    from .mesh import load_mesh, mesh_to_matrix
    from .rnn import load_model

    with open(args.checkpoint) as f:
        first = f.readline()
    if first.startswith("rnn-model"):
        model = load_model(args.checkpoint)
        mesh = model.mesh
        cfg = model.config
        print(f"rnn-model: hidden={cfg.hidden_size} output={cfg.output_size} "
              f"fine_layers={cfg.fine_layers} basic_unit={cfg.basic_unit.value} "
              f"with_diag={int(cfg.with_diag)}")
        print(f"optimizer state entries: {len(model.opt.state)}")
    else:
        mesh = load_mesh(args.checkpoint)
        print(f"mesh: n={mesh.n} fine_layers={len(mesh.layers)} "
              f"basic_unit={mesh.basic_unit.value} with_diag={int(mesh.with_diag)}")
    kinds = ",".join(layer.kind.value for layer in mesh.layers)
    print(f"layer kinds: {kinds}")
    print(f"phases: {mesh.num_phases}")
    m = mesh_to_matrix(mesh)
    residual = np.linalg.norm(m.conj().T @ m - np.eye(mesh.n))
    print(f"unitarity residual: {residual:.3e}")
    return 0


def _cmd_export_metrics(args) -> int:
    rows = []
    config = {}
    with open(args.infile) as f:
        header = None
        for raw in f:
            line = raw.rstrip("\n")
            if line.startswith("#"):
                if "=" in line:
                    key, value = line[1:].split("=", 1)
                    config[key.strip()] = value.strip()
                continue
            if header is None:
                header = line.split(",")
                continue
            rows.append(line.split(","))
    if header is None:
        print("error: no header row found", file=sys.stderr)
        return 1
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        if args.format == "csv":
            out.write(",".join(header) + "\n")
            for row in rows:
                out.write(",".join(row) + "\n")
        else:
            payload = {
                "config": config,
                "rows": [dict(zip(header, row)) for row in rows],
            }
            json.dump(payload, out, indent=2)
            out.write("\n")
    finally:
        if args.out:
            out.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="finemesh",
        description="Fine-layered mesh linear units: training, benchmarks, checks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the recurrent classifier")
    _add_train_args(p)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("bench", help="time fused vs tape sweeps")
    p.add_argument("--n-list", type=_int_list, default=[128])
    p.add_argument("--l-list", type=_int_list, default=[4, 8, 12, 16, 20])
    p.add_argument("--batch", type=int, default=100)
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--threads", type=int, default=8)
    p.add_argument("--path", choices=["fused", "tape", "both"], default="both")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.add_argument("--config")
    p.set_defaults(fn=_cmd_bench)

    p = sub.add_parser("gradcheck", help="gradient oracle suite")
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--layers", type=int, default=6)
    p.add_argument("--batch", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--fd-step", type=float, default=1e-6)
    p.add_argument("--tol", type=float, default=1e-5,
                   help="relative bound vs finite differences")
    p.add_argument("--tol-abs", type=float, default=1e-8,
                   help="absolute bound on near-zero oracle entries")
    p.add_argument("--tol-paths", type=float, default=1e-12,
                   help="relative fused-vs-tape bound; on tiny grids a "
                        "near-zero entry can push this past the default")
    p.add_argument("--threads", type=int, default=8)
    p.add_argument("--config")
    p.set_defaults(fn=_cmd_gradcheck)

    p = sub.add_parser("fit-unitary", help="fit a mesh to a random unitary")
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--layers", type=int, default=8)
    p.add_argument("--with-diag", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--target-seed", type=int, default=0)
    p.add_argument("--fit-seed", type=int, default=1)
    p.add_argument("--iters", type=int, default=10000)
    p.add_argument("--restarts", type=int, default=1,
                   help="independent starts; the best error wins")
    p.add_argument("--threads", type=int, default=8)
    p.add_argument("--config")
    p.set_defaults(fn=_cmd_fit_unitary)

    p = sub.add_parser("inspect", help="summarize a checkpoint")
    p.add_argument("checkpoint")
    p.set_defaults(fn=_cmd_inspect, threads=1)

    p = sub.add_parser("export-metrics", help="re-emit a metrics CSV")
    p.add_argument("infile")
    p.add_argument("--format", choices=["csv", "json"], default="json")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_export_metrics, threads=1)

    return parser


def main(argv: list[str] | None = None) -> int:
    args_list = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    # thread env must be pinned before numpy's first import
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--threads", type=int, default=8)
    known, _ = pre.parse_known_args(args_list)
    _set_threads_env(known.threads)
    try:
        _apply_config_defaults_all(parser, args_list)
        args = parser.parse_args(args_list)
        return args.fn(args)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def _apply_config_defaults_all(parser: argparse.ArgumentParser, args: list[str]) -> None:
    """Find the active subparser and fold any --config file into its defaults."""
    if not args:
        return
    sub_actions = [a for a in parser._actions if isinstance(a, argparse._SubParsersAction)]
    if not sub_actions or args[0] not in sub_actions[0].choices:
        return
    _apply_config_defaults(sub_actions[0].choices[args[0]], args[1:])


if __name__ == "__main__":
    sys.exit(main())
