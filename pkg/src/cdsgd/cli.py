"""Experiment runner: train, costmodel, bench-codec, and compare subcommands.

Every command is non-interactive and exits nonzero on validation or runtime
failures (2 for bad configuration, 3 for training divergence, 1 for other
runtime errors).
"""

from __future__ import annotations

import argparse
import csv
import json
import statistics
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import codec, costmodel, engine, protocol
from .config import ExperimentConfig, build_datasets, parse_config, serialize_config
from .engine import (
    HyperParams,
    IterationRecord,
    ServerNode,
    TrainingDiverged,
    Worker,
    run_training,
    serve_socket,
    socket_worker_loop,
)
from .numcore import ConfigError, init_rng, worker_rngs
from .svgplot import write_line_chart

METRICS_COLUMNS = ("iter", "epoch", "loss", "grad_norm", "bytes", "compressed", "wall_micros")


def write_metrics_csv(path, records: list[IterationRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
        for r in records:
            writer.writerow(
                [
                    r.iteration,
                    r.epoch,
                    repr(r.train_loss),
                    repr(r.grad_norm),
                    r.bytes_pushed,
                    int(r.compressed),
                    r.wall_micros,
                ]
            )


def read_metrics_csv(path) -> list[IterationRecord]:
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != METRICS_COLUMNS:
            raise ConfigError(f"{path}: unexpected metrics header {header!r}")
        for row in reader:
            records.append(
                IterationRecord(
                    iteration=int(row[0]),
                    epoch=int(row[1]),
                    train_loss=float(row[2]),
                    grad_norm=float(row[3]),
                    bytes_pushed=int(row[4]),
                    compressed=bool(int(row[5])),
                    wall_micros=int(row[6]),
                )
            )
    return records


def _write_weights_csv(path, weights) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["key", "name", "index", "value"])
        for span in weights.layout.spans:
            block = weights.key(span.key)
            for i, v in enumerate(block):
                writer.writerow([span.key, span.name, i, repr(float(v))])


def _write_loss_chart(outdir: Path, records, label: str, baseline_dir: str | None) -> None:
    series = [(label, [r.iteration for r in records], [r.train_loss for r in records])]
    if baseline_dir:
        base = read_metrics_csv(Path(baseline_dir) / "metrics.csv")
        series.append(("baseline", [r.iteration for r in base], [r.train_loss for r in base]))
    write_line_chart(
        outdir / "loss.svg", series, title="training loss", xlabel="iteration", ylabel="loss"
    )


def _train_local(cfg: ExperimentConfig, baseline: str | None) -> int:
    model = cfg.model_spec()
    dataset, eval_set = build_datasets(cfg)
    result = run_training(
        cfg.hyperparams(), model, dataset, transport=cfg.transport, eval_set=eval_set
    )
    outdir = Path(cfg.out)
    outdir.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(outdir / "metrics.csv", result.records)
    (outdir / "summary.json").write_text(json.dumps(asdict(result.summary), indent=2) + "\n")
    (outdir / "config.cfg").write_text(serialize_config(cfg))
    _write_weights_csv(outdir / "weights.csv", result.weights)
    _write_loss_chart(outdir, result.records, cfg.algo, baseline)
    acc = result.summary.test_accuracy
    acc_text = f" test_acc={acc:.4f}" if acc is not None else ""
    print(
        f"{cfg.algo}: {result.summary.total_iterations} iterations, "
        f"final_loss={result.summary.final_train_loss:.6g},{acc_text} "
        f"bytes={result.summary.total_bytes_pushed}, out={outdir}"
    )
    return 0


def _parse_address(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise ConfigError(f"address must be host:port, got {text!r}")
    return host, int(port)


def _train_listen(cfg: ExperimentConfig, address: str) -> int:
    """Run only the server side of a socket deployment."""
    host, port = _parse_address(address)
    model = cfg.model_spec()
    dataset, _ = build_datasets(cfg)
    hp = cfg.hyperparams()
    init_weights = model.init_weights(init_rng(hp.seed))
    server = ServerNode(init_weights, hp)
    listener = protocol.SocketListener(host=host, port=port)
    print(f"server listening on {listener.host}:{listener.port} for {hp.workers} workers")
    started = time.perf_counter()
    try:
        serve_socket(server, listener)
    finally:
        listener.close()
    outdir = Path(cfg.out)
    outdir.mkdir(parents=True, exist_ok=True)
    _write_weights_csv(outdir / "weights.csv", server.weights)
    (outdir / "server-summary.json").write_text(
        json.dumps(
            {
                "rounds": server.committed_rounds,
                "wall_seconds": time.perf_counter() - started,
                "config": asdict(cfg),
            },
            indent=2,
        )
        + "\n"
    )
    print(f"server committed {server.committed_rounds} rounds, out={outdir}")
    return 0


def _train_connect(cfg: ExperimentConfig, address: str, worker_id: int | None) -> int:
    """Run only one worker of a socket deployment."""
    if worker_id is None:
        raise ConfigError("socket workers need --worker-id")
    host, port = _parse_address(address)
    model = cfg.model_spec()
    dataset, _ = build_datasets(cfg)
    hp = cfg.hyperparams()
    if not 0 <= worker_id < hp.workers:
        raise ConfigError(f"worker-id must be in 0..{hp.workers - 1}")
    dataset = dataset.with_shards(hp.workers)
    init_weights = model.init_weights(init_rng(hp.seed))
    worker = Worker(
        worker_id, model, dataset, hp, init_weights, worker_rngs(hp.seed, hp.workers)[worker_id]
    )
    total_iters = hp.iters if hp.iters is not None else hp.epochs * worker.batcher.batches_per_epoch
    ep = protocol.connect(host, port)
    steps = socket_worker_loop(worker, ep, total_iters)
    outdir = Path(cfg.out)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / f"metrics-worker{worker_id}.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter", "epoch", "loss", "bytes", "compressed", "wall_micros"])
        for s in steps:
            writer.writerow(
                [s.iteration, s.epoch, repr(s.loss), s.bytes_pushed, int(s.compressed), s.wall_micros]
            )
    print(f"worker {worker_id} finished {len(steps)} iterations, out={outdir}")
    return 0


def cmd_train(args) -> int:
    overrides = {
        "algo": args.algo,
        "workers": args.workers,
        "k": args.k,
        "alpha": args.alpha,
        "eta_global": args.eta_global,
        "eta_local": args.eta_local,
        "warmup_n": args.warmup_n,
        "batch_size": args.batch_size,
        "epochs": args.epochs,
        "iters": args.iters,
        "seed": args.seed,
        "model": args.model,
        "dataset": args.dataset,
        "transport": args.transport,
        "out": args.out,
    }
    cfg = parse_config(args.config, overrides)
    if args.listen:
        return _train_listen(cfg, args.listen)
    if args.connect:
        return _train_connect(cfg, args.connect, args.worker_id)
    return _train_local(cfg, args.baseline)


def cmd_costmodel(args) -> int:
    p = costmodel.CostParams(tau=args.tau, phi=args.phi, psi=args.psi, delta=args.delta, k=args.k)
    horizon = args.horizon if args.horizon is not None else p.k
    rows = costmodel.timeline(p, horizon)
    averages = {
        "ssgd": costmodel.t_ssgd(p),
        "lusgd": costmodel.t_loc(p),
        "bitsgd": costmodel.t_bit(p),
        "cdsgd": costmodel.avg_cd(p),
    }
    print(f"regime: {costmodel.classify_regime(p)}")
    print("algo      avg_iter_time")
    for algo, value in averages.items():
        print(f"{algo:<9} {value:.6g}")
    print("iter  saving_vs_lusgd  saving_vs_bitsgd")
    for i in range(1, horizon + 1):
        print(
            f"{i:<5} {costmodel.saving_vs_loc(i, p):<16.6g} {costmodel.saving_vs_bit(i, p):.6g}"
        )
    if args.out:
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        with open(outdir / "timeline.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iter", "algo", "time", "cumulative"])
            for row in rows:
                writer.writerow([row[0], row[1], repr(row[2]), repr(row[3])])
        print(f"timeline written to {outdir / 'timeline.csv'}")
    return 0


def cmd_bench_codec(args) -> int:
    n, reps = args.n, args.reps
    if n < 0 or reps < 1:
        raise ConfigError("bench-codec needs n ≥ 0 and reps ≥ 1")
    rng = np.random.default_rng(0)
    grads = rng.standard_normal(n)
    residual = codec.ResidualState.zeros(n)
    payload, _ = codec.quantize(residual, grads, 0.5)
    packed_bytes = int(payload.words.nbytes)
    if packed_bytes != codec.payload_bytes(n):
        raise RuntimeError(
            f"packed payload is {packed_bytes} bytes, accounting says {codec.payload_bytes(n)}"
        )
    started = time.perf_counter()
    for _ in range(reps):
        p, _ = codec.quantize(residual, grads, 0.5)
        blob = p.to_bytes()
    encode_s = time.perf_counter() - started
    started = time.perf_counter()
    for _ in range(reps):
        codec.dequantize(codec.QuantizedPayload.from_bytes(blob))
    decode_s = time.perf_counter() - started
    enc_rate = n * reps / encode_s if encode_s > 0 else float("inf")
    dec_rate = n * reps / decode_s if decode_s > 0 else float("inf")
    print(f"elements: {n}")
    print(f"packed bytes: {packed_bytes} (serialized {payload.nbytes})")
    print(f"compression ratio vs 4-byte baseline: {codec.compression_ratio(n):.3g}")
    print(f"encode: {enc_rate:.4g} elements/s")
    print(f"decode: {dec_rate:.4g} elements/s")
    return 0


def cmd_compare(args) -> int:
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    if not seeds:
        raise ConfigError("compare needs at least one seed")
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    table = []
    curves = []
    for config_path in args.configs:
        per_seed = []
        first_records = None
        label = None
        for seed in seeds:
            cfg = parse_config(config_path, {"seed": seed, "transport": args.transport})
            label = label or cfg.algo
            dataset, eval_set = build_datasets(cfg)
            result = run_training(
                cfg.hyperparams(), cfg.model_spec(), dataset,
                transport=cfg.transport, eval_set=eval_set,
            )
            if first_records is None:
                first_records = result.records
            per_seed.append(result.summary)
        accs = [s.test_accuracy for s in per_seed if s.test_accuracy is not None]
        table.append(
            {
                "config": Path(config_path).name,
                "algo": label,
                "final_loss": statistics.median(s.final_train_loss for s in per_seed),
                "accuracy": statistics.median(accs) if accs else float("nan"),
                "bytes": statistics.median(s.total_bytes_pushed for s in per_seed),
                "wall_seconds": statistics.median(s.wall_seconds for s in per_seed),
            }
        )
        curves.append(
            (
                f"{label} ({Path(config_path).stem})",
                [r.iteration for r in first_records],
                [r.train_loss for r in first_records],
            )
        )
    with open(outdir / "compare.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["config", "algo", "final_loss", "accuracy", "bytes", "wall_seconds"])
        for row in table:
            writer.writerow(
                [
                    row["config"],
                    row["algo"],
                    repr(row["final_loss"]),
                    repr(row["accuracy"]),
                    row["bytes"],
                    repr(row["wall_seconds"]),
                ]
            )
    write_line_chart(
        outdir / "compare.svg", curves, title="training loss (first seed)",
        xlabel="iteration", ylabel="loss",
    )
    print(f"{'config':<28} {'algo':<8} {'final_loss':<14} {'accuracy':<10} {'bytes':<12} wall_s")
    for row in table:
        print(
            f"{row['config']:<28} {row['algo']:<8} {row['final_loss']:<14.6g} "
            f"{row['accuracy']:<10.4f} {int(row['bytes']):<12} {row['wall_seconds']:.3f}"
        )
    print(f"outputs in {outdir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cdsgd", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run one training job")
    train.add_argument("--config", default=None, help="flat key = value config file")
    train.add_argument("--out", default=None)
    train.add_argument("--seed", type=int, default=None)
    train.add_argument("--algo", default=None, choices=engine.ALGORITHMS)
    train.add_argument("--k", type=int, default=None)
    train.add_argument("--alpha", type=float, default=None)
    train.add_argument("--workers", type=int, default=None)
    train.add_argument("--eta-global", dest="eta_global", type=float, default=None)
    train.add_argument("--eta-local", dest="eta_local", type=float, default=None)
    train.add_argument("--warmup-n", dest="warmup_n", type=int, default=None)
    train.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    train.add_argument("--epochs", type=int, default=None)
    train.add_argument("--iters", type=int, default=None)
    train.add_argument("--model", default=None)
    train.add_argument("--dataset", default=None)
    train.add_argument("--transport", default=None, choices=("inprocess", "socket"))
    train.add_argument("--listen", default=None, metavar="ADDR", help="run only the server side")
    train.add_argument("--connect", default=None, metavar="ADDR", help="run only one worker")
    train.add_argument("--worker-id", dest="worker_id", type=int, default=None)
    train.add_argument("--baseline", default=None, help="overlay a previous run's loss curve")
    train.set_defaults(func=cmd_train)

    cm = sub.add_parser("costmodel", help="analytic per-iteration time model")
    cm.add_argument("--tau", type=float, required=True)
    cm.add_argument("--phi", type=float, required=True)
    cm.add_argument("--psi", type=float, required=True)
    cm.add_argument("--delta", type=float, required=True)
    cm.add_argument("--k", type=int, default=5)
    cm.add_argument("--horizon", type=int, default=None)
    cm.add_argument("--out", default=None)
    cm.set_defaults(func=cmd_costmodel)

    bench = sub.add_parser("bench-codec", help="codec throughput and payload sizes")
    bench.add_argument("--n", type=int, default=16384)
    bench.add_argument("--reps", type=int, default=50)
    bench.set_defaults(func=cmd_bench_codec)

    comp = sub.add_parser("compare", help="run several configs over a seed list")
    comp.add_argument("--configs", nargs="+", required=True)
    comp.add_argument("--seeds", default="1,2,3")
    comp.add_argument("--out", default="runs/compare")
    comp.add_argument("--transport", default=None, choices=("inprocess", "socket"))
    comp.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, ValueError, protocol.ProtocolError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
