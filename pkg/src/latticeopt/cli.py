"""Command-line front end for the dataset -> surrogate -> annealing pipeline.

Every file-writing subcommand also writes `<out>.manifest.json` recording the
resolved parameters, input/output paths, artifact checksums, and wall clock;
re-running the recorded command reproduces the artifacts bit for bit.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
import time

import numpy as np

from . import anneal, data, fem, lattice, mlp
from .features import FeaturePipeline
from .lattice import GridSpec


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            h.update(block)
    return h.hexdigest()


def _write_manifest(subcommand: str, params: dict, inputs: list, outputs: list, started: float):
    doc = {
        "subcommand": subcommand,
        "parameters": params,
        "inputs": [str(p) for p in inputs],
        "outputs": {str(p): _sha256(p) for p in outputs},
        "wall_clock_s": time.time() - started,
    }
    manifest_path = f"{outputs[0]}.manifest.json"
    with open(manifest_path, "w", encoding="ascii", newline="\n") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    return manifest_path


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def _load_initial(init: str) -> lattice.UnitTopology:
    if init.startswith("ground:"):
        return lattice.ground(int(init.split(":", 1)[1]))
    return lattice.load_topology(init)


def cmd_gen_data(args) -> int:
    started = time.time()
    dataset = data.generate(args.m, args.count, args.seed, args.threshold, workers=args.workers)
    data.save_csv(dataset, args.out)
    st = data.stats(dataset)
    rate = 100.0 * len(dataset) / args.count
    print(f"retained {len(dataset)}/{args.count} samples ({rate:.1f}%)")
    print(
        f"volume    mean={st['volume_mean']:.5f} std={st['volume_std']:.5f} "
        f"ground={st['ground_volume']:.5f}"
    )
    print(
        f"compliance mean={st['compliance_mean']:.5f} std={st['compliance_std']:.5f} "
        f"ground={st['ground_compliance']:.5f}"
    )
    _write_manifest(
        "gen-data",
        {
            "m": args.m,
            "count": args.count,
            "seed": args.seed,
            "threshold": args.threshold,
            "workers": args.workers,
        },
        [],
        [args.out],
        started,
    )
    return 0


def cmd_train(args) -> int:
    started = time.time()
    dataset = data.load_csv(args.data)
    pipeline = FeaturePipeline(
        n_m=None if args.no_filter else args.nm,
        top_k=args.top_k,
        conv_weight=args.conv_weight,
    )
    cfg = mlp.TrainConfig(
        batch_size=args.batch,
        epochs=args.epochs,
        learning_rate=args.lr,
        split=args.split,
        seed=args.seed,
    )
    model, history = mlp.train(dataset, pipeline, cfg)
    mlp.save(model, args.out)
    outputs = [args.out]
    if args.loss_out:
        mlp.save_loss_history(history, args.loss_out)
        outputs.append(args.loss_out)
    if history:
        last = history[-1]
        print(
            f"epochs={len(history)} input_dim={model.meta.input_dim} "
            f"train_mse={last['train_mse']:.6g} test_mse={last['test_mse']:.6g}"
        )
    _write_manifest(
        "train",
        {
            "data": args.data,
            "nm": None if args.no_filter else args.nm,
            "no_filter": args.no_filter,
            "top_k": args.top_k,
            "conv_weight": args.conv_weight,
            "epochs": args.epochs,
            "batch": args.batch,
            "lr": args.lr,
            "split": args.split,
            "seed": args.seed,
        },
        [args.data],
        outputs,
        started,
    )
    return 0


def cmd_optimize(args) -> int:
    started = time.time()
    initial = _load_initial(args.init)
    surrogate = None
    if args.model:
        surrogate = mlp.load(args.model)
    gate = args.gate == "on"
    if gate and surrogate is None:
        raise ValueError("--gate on requires --model")
    cfg = anneal.SAConfig(
        lam=args.lam,
        v_c=args.vc,
        a=args.cool,
        n_s=args.steps,
        p=args.period,
        n_v=args.nv,
        w_d=args.wd,
        w_i=args.wi,
        seed=args.seed,
        gate=gate,
        mode=args.mode,
        threshold=args.threshold,
    )
    result = anneal.run(initial, cfg, surrogate=surrogate)
    anneal.save_result(result, args.out)
    history_out = args.history_out or f"{args.out.rsplit('.', 1)[0]}_history.csv"
    anneal.save_history(result, history_out)
    bf = result.best_feasible
    if bf is not None:
        print(f"best_feasible compliance={bf.compliance:.6g} volume={bf.volume:.6g}")
    else:
        print("best_feasible none")
    bp = result.best_penalized
    print(f"best_penalized g={bp.penalized:.6g} compliance={bp.compliance:.6g} volume={bp.volume:.6g}")
    print(f"analyses={result.analysis_count} iterations={result.iteration_count}")
    _write_manifest(
        "optimize",
        {
            "model": args.model,
            "init": args.init,
            "mode": args.mode,
            "gate": args.gate,
            "vc": args.vc,
            "lambda": args.lam,
            "cool": args.cool,
            "steps": args.steps,
            "period": args.period,
            "nv": args.nv,
            "wd": args.wd,
            "wi": args.wi,
            "seed": args.seed,
            "threshold": args.threshold,
        },
        [p for p in (args.model, args.init) if p],
        [args.out, history_out],
        started,
    )
    return 0


def cmd_analyze(args) -> int:
    x = lattice.load_topology(args.infile)
    volume, result = fem.analyze(x, GridSpec(x.m), threshold=args.threshold)
    comp = result.compliance if result.stable else float("nan")
    print(f"{volume:.17g},{comp:.17g},{result.status}")
    return 0


def cmd_predict(args) -> int:
    model = mlp.load(args.model)
    if args.conv_weight is not None:
        model.meta = dataclasses.replace(model.meta, conv_weight=args.conv_weight)
    x = lattice.load_topology(args.infile)
    print(f"{mlp.predict(model, x):.17g}")
    return 0


def cmd_refine(args) -> int:
    started = time.time()
    x = lattice.load_topology(args.infile)
    lattice.save_topology(lattice.refine(x), args.out)
    _write_manifest("refine", {"in": args.infile}, [args.infile], [args.out], started)
    return 0


def cmd_stats(args) -> int:
    st = data.stats(data.load_csv(args.data))
    print(
        f"{st['count']},{st['volume_mean']:.17g},{st['volume_std']:.17g},"
        f"{st['compliance_mean']:.17g},{st['compliance_std']:.17g},"
        f"{st['ground_volume']:.17g},{st['ground_compliance']:.17g}"
    )
    return 0


def cmd_eval(args) -> int:
    model = mlp.load(args.model)
    if args.conv_weight is not None:
        model.meta = dataclasses.replace(model.meta, conv_weight=args.conv_weight)
    dataset = data.load_csv(args.data)
    preds = mlp.predict_batch(model, dataset.bits, dataset.m)
    mse = float(np.mean((preds - dataset.compliances) ** 2))
    print(f"{len(dataset)},{mse:.17g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latticeopt",
        description="Periodic-lattice topology datasets, compliance surrogates, "
        "and surrogate-gated annealing.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("gen-data", help="sample and screen random topologies")
    p.add_argument("--m", type=_positive_int, default=4)
    p.add_argument("--count", type=_positive_int, default=20000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=float, default=fem.DEFAULT_THRESHOLD)
    p.add_argument("--workers", type=_positive_int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the compliance surrogate")
    p.add_argument("--data", required=True)
    p.add_argument("--nm", type=int, default=2, help="filter combination size")
    p.add_argument("--no-filter", action="store_true", help="feed raw member bits")
    p.add_argument("--top-k", type=_positive_int, default=None)
    p.add_argument("--conv-weight", type=float, default=0.25)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch", type=_positive_int, default=200)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--split", type=float, default=0.75)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--loss-out", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("optimize", help="surrogate-gated simulated annealing")
    p.add_argument("--model", default=None)
    p.add_argument("--init", required=True, help="topology file or ground:<m>")
    p.add_argument("--mode", choices=(anneal.MODE_SA, anneal.MODE_LOCAL), default=anneal.MODE_SA)
    p.add_argument("--gate", choices=("on", "off"), default="on")
    p.add_argument("--vc", type=float, default=0.26)
    p.add_argument("--lambda", dest="lam", type=float, default=10.0)
    p.add_argument("--cool", type=float, default=0.88)
    p.add_argument("--steps", type=_positive_int, default=25)
    p.add_argument("--period", type=_positive_int, default=160)
    p.add_argument("--nv", type=_positive_int, default=3)
    p.add_argument("--wd", type=float, default=0.001)
    p.add_argument("--wi", type=float, default=0.0003)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=float, default=fem.DEFAULT_THRESHOLD)
    p.add_argument("--out", required=True)
    p.add_argument("--history-out", default=None)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("analyze", help="volume/compliance/status of one topology")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--threshold", type=float, default=fem.DEFAULT_THRESHOLD)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("predict", help="surrogate compliance prediction for one topology")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--conv-weight", type=float, default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("refine", help="double the grid by duplicating each member into 4")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("stats", help="dataset summary statistics")
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("eval", help="surrogate MSE over a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--conv-weight", type=float, default=None)
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # single-line diagnostic, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
