"""Synchronous parameter-server engine and the four training algorithms.

Algorithms
----------
ssgd    every worker computes at the freshly pulled global weights and pushes
        full-precision gradients; the server averages and updates.
lusgd   local-update baseline: each worker keeps a local weight copy one
        gradient step ahead of the last pulled global weights, so the next
        iteration's compute does not wait on the current communication.
        Pushes stay full precision.
bitsgd  ssgd plus 2-bit threshold quantization of every push, with per-key
        residual error feedback. No warm-up, no local weights.
cdsgd   lusgd's local-update mechanics plus bitsgd's codec, with a k-step
        correction: in every period of k formal iterations, k-1 push
        quantized gradients and the k-th pushes full precision. A warm-up of
        plain ssgd iterations seeds the local weight slots first.

Local-slot choreography (cdsgd/lusgd)
-------------------------------------
Each worker holds two parity-indexed slots. At formal iteration t, slot[t%2]
holds the local weights consumed by compute; slot[(t+1)%2] holds the last
pulled global weights. The local update overwrites that pending slot in
place (base minus eta_local times the fresh gradient), and the pull at the
end of iteration t overwrites slot[t%2], whose old content has already been
consumed. The double buffer guarantees compute at iteration t reads only
state derived from the pull of iteration t-2 plus one local gradient step,
never from iteration t-1's still-in-flight push.

The lock-step scheduler (transport="inprocess") drives all workers and the
server round-robin in one thread over queue endpoints and is the reference
for determinism. transport="socket" runs the same worker and server code in
threads over real TCP sockets; trajectories are bitwise identical because
the server always folds contributions in ascending worker-id order.
"""

from __future__ import annotations

import queue
import threading
import time
from collections import defaultdict
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import __version__
from .codec import QuantizedPayload, ResidualState, dequantize, quantize
from .numcore import (
    ConfigError,
    Dataset,
    KeyedVector,
    Layout,
    LayoutError,
    ModelSpec,
    ShardBatcher,
    accuracy,
    batch_loss,
    init_rng,
    loss_and_grad,
    worker_rngs,
)
from .protocol import (
    Message,
    PullRequest,
    PushFull,
    PushQuantized,
    Shutdown,
    SocketListener,
    TransportTimeout,
    Weights,
    connect,
    in_process_pair,
)

ALGORITHMS = ("ssgd", "lusgd", "bitsgd", "cdsgd")

DIVERGENCE_LOSS_LIMIT = 1e6


class ProtocolViolation(RuntimeError):
    """The synchronous push/pull contract was broken."""


class SchedulingError(RuntimeError):
    """A worker needed state that its pull had not produced yet."""


class TrainingDiverged(RuntimeError):
    def __init__(self, iteration: int, loss: float):
        super().__init__(f"training diverged at iteration {iteration}: loss={loss!r}")
        self.iteration = iteration
        self.loss = loss


@dataclass
class HyperParams:
    """Training configuration.

    eta_local defaults to eta_global when unset. alpha and k only matter for
    the quantizing algorithms; warmup_n and eta_local only for the
    local-update ones (bitsgd runs without warm-up by construction, so it
    ignores both). iters, when set, caps the total number of iterations and
    overrides epochs.
    """

    algo: str
    workers: int = 1
    eta_global: float = 0.1
    eta_local: Optional[float] = None
    k: int = 5
    alpha: float = 0.5
    warmup_n: int = 5
    batch_size: int = 32
    epochs: int = 1
    iters: Optional[int] = None
    seed: int = 0

    def validate(self) -> "HyperParams":
        if self.algo not in ALGORITHMS:
            raise ConfigError(f"algo must be one of {', '.join(ALGORITHMS)}; got {self.algo!r}")
        if self.workers < 1:
            raise ConfigError("workers must be ≥ 1")
        if self.eta_global <= 0:
            raise ConfigError("eta_global must be > 0")
        if self.eta_local is not None and self.eta_local <= 0:
            raise ConfigError("eta_local must be > 0")
        if self.k < 1:
            raise ConfigError("k must be ≥ 1")
        if self.alpha <= 0:
            raise ConfigError("alpha must be > 0")
        if self.warmup_n < 0:
            raise ConfigError("warmup_n must be ≥ 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be ≥ 1")
        if self.iters is None and self.epochs < 1:
            raise ConfigError("epochs must be ≥ 1")
        if self.iters is not None and self.iters < 1:
            raise ConfigError("iters must be ≥ 1")
        return self

    @property
    def local_lr(self) -> float:
        return self.eta_global if self.eta_local is None else self.eta_local


@dataclass
class IterationRecord:
    """One committed global round.

    bytes_pushed counts message payload bytes across all workers and keys
    (serialized codec payloads when compressed, 8 bytes per element when
    full). wall_micros is measured elapsed time in socket mode and 0 in the
    deterministic in-process mode, where per-iteration wall time is
    simulated by the cost model rather than measured.
    """

    iteration: int
    epoch: int
    train_loss: float
    grad_norm: float
    bytes_pushed: int
    compressed: bool
    wall_micros: int


@dataclass
class RunSummary:
    final_train_loss: float
    test_accuracy: Optional[float]
    total_iterations: int
    total_bytes_pushed: int
    compressed_iteration_fraction: float
    wall_seconds: float
    config: dict
    version: str


@dataclass
class TrainResult:
    weights: KeyedVector
    records: list[IterationRecord]
    summary: RunSummary


class RunTrace:
    """Opt-in instrumentation for the invariants the tests assert.

    Per-round server captures are keyed by round; per-worker captures by
    (round, worker). Everything stored is a copy taken at capture time.
    """

    def __init__(
        self,
        weights: bool = False,
        grads: bool = False,
        compute: bool = False,
        emissions: bool = False,
        means: bool = False,
    ):
        self.capture_weights = weights
        self.capture_grads = grads
        self.capture_compute = compute
        self.capture_emissions = emissions
        self.capture_means = means
        self.weights_after: dict[int, np.ndarray] = {}
        self.committed_means: dict[int, np.ndarray] = {}
        self.raw_grads: dict[tuple[int, int], np.ndarray] = {}
        self.compute_weights: dict[tuple[int, int], np.ndarray] = {}
        self.pulled: dict[tuple[int, int], np.ndarray] = {}
        self.emitted: dict[tuple[int, int, int], np.ndarray] = {}
        self.compressed_rounds: dict[int, bool] = {}
        self.slot_log: dict[int, list[tuple[int, int, str]]] = defaultdict(list)
        self.final_residuals: dict[tuple[int, int], np.ndarray] = {}


def should_compress(count: int, k: int) -> bool:
    """True on the k-1 compressing iterations of each period: count % k != 0."""
    if k < 1:
        raise ConfigError("k must be ≥ 1")
    if count < 1:
        raise ConfigError("count must be ≥ 1")
    return count % k != 0


def server_aggregate(
    contributions: dict[int, tuple[str, object]],
    n_workers: int,
    iteration: int = 0,
    key: int = 0,
) -> np.ndarray:
    """Average one round's contributions for one key.

    Quantized contributions are decoded first; the vectors are then summed in
    ascending worker-id order and divided by the worker count. Mixing full
    and quantized contributions within one (iteration, key) is a protocol
    violation.
    """
    if len(contributions) != n_workers:
        raise ProtocolViolation(
            f"iteration {iteration} key {key}: {len(contributions)} contributions, "
            f"expected {n_workers}"
        )
    kinds = {kind for kind, _ in contributions.values()}
    if len(kinds) > 1:
        raise ProtocolViolation(
            f"iteration {iteration} key {key}: mixed full and quantized contributions"
        )
    total: np.ndarray | None = None
    for wid in sorted(contributions):
        kind, item = contributions[wid]
        vec = dequantize(item) if kind == "quant" else np.asarray(item, dtype=np.float64)
        total = vec.copy() if total is None else total + vec
    assert total is not None
    return total / n_workers


def global_update(weights: KeyedVector, mean_grad: KeyedVector, eta_global: float) -> None:
    """Apply W <- W - eta * mean_grad in place, key by key."""
    if weights.layout != mean_grad.layout:
        raise LayoutError("mean gradient layout does not match the global weights")
    if eta_global < 0:
        raise ConfigError("eta_global must be ≥ 0")
    for key in weights.layout.keys:
        weights.key(key)[:] -= eta_global * mean_grad.key(key)


def local_update(base_weights: KeyedVector, local_grad: KeyedVector, eta_local: float) -> KeyedVector:
    """Next local weights: last pulled global base minus one local gradient step."""
    if base_weights.layout != local_grad.layout:
        raise LayoutError("local gradient layout does not match the base weights")
    if eta_local < 0:
        raise ConfigError("eta_local must be ≥ 0")
    return KeyedVector(base_weights.values - eta_local * local_grad.values, base_weights.layout)


@dataclass
class StepResult:
    iteration: int
    epoch: int
    loss: float
    bytes_pushed: int
    compressed: bool
    msgs: list
    wall_micros: int = 0


class Worker:
    """One worker node: batching, compute, local slots, residuals, pushes."""

    def __init__(
        self,
        wid: int,
        model: ModelSpec,
        dataset: Dataset,
        hp: HyperParams,
        init_weights: KeyedVector,
        rng: np.random.Generator,
        trace: RunTrace | None = None,
        force_compress: bool = False,
        bypass_local: bool = False,
    ):
        self.wid = wid
        self.model = model
        self.hp = hp
        self.layout = init_weights.layout
        self.batcher = ShardBatcher(dataset, dataset.shards[wid], hp.batch_size, rng)
        self.trace = trace
        self.force_compress = force_compress
        self.uses_local = hp.algo in ("lusgd", "cdsgd") and not bypass_local
        self.bypass_local = bypass_local
        self.quantizes = hp.algo in ("bitsgd", "cdsgd")
        # bitsgd has no warm-up; its every push is quantized.
        self.n_warmup = hp.warmup_n if hp.algo in ("lusgd", "cdsgd") else 0
        self.t = 0
        self.current_global = init_weights.copy()
        self.slots: list[KeyedVector | None] = [None, None]
        if self.uses_local and self.n_warmup == 0:
            self.slots[0] = init_weights.copy()
            self.slots[1] = init_weights.copy()
            self._log_slot(0, "init")
            self._log_slot(1, "init")
        self.residuals = {
            key: ResidualState.zeros(self.layout.spans[key].length, owner=(wid, key))
            for key in self.layout.keys
        }

    def _log_slot(self, slot: int, source: str) -> None:
        if self.trace is not None and self.trace.capture_compute:
            self.trace.slot_log[self.wid].append((self.t, slot, source))

    def _in_warmup(self) -> bool:
        return self.uses_local and self.t < self.n_warmup

    def _compute_weights(self) -> KeyedVector:
        if self.uses_local and not self._in_warmup():
            w = self.slots[self.t % 2]
            if w is None:
                raise SchedulingError(
                    f"worker {self.wid}: local slot for iteration {self.t} was never written"
                )
            return w
        return self.current_global

    def _push_compressed(self) -> bool:
        if self._in_warmup():
            return False
        if self.hp.algo == "bitsgd":
            return True
        if self.hp.algo == "cdsgd":
            if self.force_compress:
                return True
            count = self.t - self.n_warmup + 1
            return should_compress(count, self.hp.k)
        return False

    def compute_push(self) -> StepResult:
        """One iteration's compute side: loss, gradient, local update, pushes."""
        t = self.t
        weights = self._compute_weights()
        X, y = self.batcher.next_batch()
        epoch = t // self.batcher.batches_per_epoch
        loss, grad = loss_and_grad(self.model, weights, X, y)
        if not np.isfinite(loss) or loss > DIVERGENCE_LOSS_LIMIT:
            raise TrainingDiverged(t, loss)

        if self.trace is not None:
            if self.trace.capture_compute:
                self.trace.compute_weights[(t, self.wid)] = weights.values.copy()
            if self.trace.capture_grads:
                self.trace.raw_grads[(t, self.wid)] = grad.values.copy()

        if self.uses_local:
            if self._in_warmup():
                if t == self.n_warmup - 1:
                    # Final warm-up iteration: the seeded slot takes its one
                    # local gradient step. With a single warm-up iteration
                    # there was no earlier pull to seed from, so the base is
                    # the weights compute just used.
                    slot = self.n_warmup % 2
                    base = self.slots[slot] if self.slots[slot] is not None else weights
                    self.slots[slot] = local_update(base, grad, self.hp.local_lr)
                    self._log_slot(slot, "warmup-local-update")
            else:
                pending = (t + 1) % 2
                base = self.slots[pending]
                if base is None:
                    raise SchedulingError(
                        f"worker {self.wid}: pull for iteration {t} never completed"
                    )
                self.slots[pending] = local_update(base, grad, self.hp.local_lr)
                self._log_slot(pending, "local-update")

        compressed = self._push_compressed()
        msgs: list[Message] = []
        bytes_pushed = 0
        for key in self.layout.keys:
            g = grad.key(key)
            if compressed:
                payload, _ = quantize(self.residuals[key], g, self.hp.alpha)
                msgs.append(PushQuantized(self.wid, t, key, payload))
                bytes_pushed += payload.nbytes
                if self.trace is not None and self.trace.capture_emissions:
                    self.trace.emitted[(t, self.wid, key)] = dequantize(payload)
            else:
                msgs.append(PushFull(self.wid, t, key, g.copy()))
                bytes_pushed += 8 * g.shape[0]
        return StepResult(t, epoch, loss, bytes_pushed, compressed, msgs)

    def apply_pull(self, new_values: np.ndarray) -> None:
        """Complete iteration t with the freshly pulled global weights."""
        t = self.t
        pulled = KeyedVector(np.array(new_values, dtype=np.float64, copy=True), self.layout)
        self.current_global = pulled
        if self.trace is not None and self.trace.capture_compute:
            self.trace.pulled[(t, self.wid)] = pulled.values.copy()
        if self.uses_local:
            if self._in_warmup():
                if t == self.n_warmup - 2:
                    slot = self.n_warmup % 2
                    self.slots[slot] = pulled.copy()
                    self._log_slot(slot, "warmup-seed")
                if t == self.n_warmup - 1:
                    slot = (self.n_warmup + 1) % 2
                    self.slots[slot] = pulled.copy()
                    self._log_slot(slot, "pull")
            else:
                self.slots[t % 2] = pulled.copy()
                self._log_slot(t % 2, "pull")
        self.t += 1

    def snapshot_residuals(self, trace: RunTrace) -> None:
        for key, state in self.residuals.items():
            trace.final_residuals[(self.wid, key)] = state.residual.copy()


class ServerNode:
    """Message-driven parameter server.

    Contributions are collected per (round, key); a key commits only once all
    workers contributed, and the round closes only when every key committed.
    Pull requests for a round answer after it closes. A push for any round
    other than the open one is a protocol violation, which is exactly the
    synchrony guarantee: round t+1 cannot start before round t is consumed.
    """

    def __init__(self, init_weights: KeyedVector, hp: HyperParams, trace: RunTrace | None = None):
        self.weights = init_weights.copy()
        self.layout = init_weights.layout
        self.n_workers = hp.workers
        self.eta = hp.eta_global
        self.trace = trace
        self.committed_rounds = 0
        self.grad_norms: list[float] = []
        self._contribs: dict[int, dict[int, tuple[str, object]]] = defaultdict(dict)
        self._round_mean = np.zeros(self.layout.total)
        self._committed_keys: set[int] = set()
        self._round_compressed: set[bool] = set()
        self._waiting_pulls: list[tuple[int, int]] = []
        self._live_workers = hp.workers

    def handle(self, msg: Message) -> list[tuple[int, Message]]:
        """Process one message; return (worker-id, reply) pairs to deliver."""
        if isinstance(msg, (PushFull, PushQuantized)):
            return self._handle_push(msg)
        if isinstance(msg, PullRequest):
            return self._handle_pull(msg)
        if isinstance(msg, Shutdown):
            self._live_workers -= 1
            return []
        raise ProtocolViolation(f"server cannot handle {type(msg).__name__}")

    @property
    def done(self) -> bool:
        return self._live_workers <= 0

    def _handle_push(self, msg) -> list[tuple[int, Message]]:
        t = self.committed_rounds
        if msg.iteration != t:
            raise ProtocolViolation(
                f"worker {msg.worker} pushed for round {msg.iteration} while round {t} is open"
            )
        if not 0 <= msg.key < len(self.layout):
            raise ProtocolViolation(f"push for unknown key {msg.key}")
        if msg.key in self._committed_keys:
            raise ProtocolViolation(f"round {t} key {msg.key} already committed")
        bucket = self._contribs[msg.key]
        if msg.worker in bucket:
            raise ProtocolViolation(
                f"round {t} key {msg.key}: duplicate contribution from worker {msg.worker}"
            )
        span = self.layout.spans[msg.key]
        if isinstance(msg, PushFull):
            if msg.values.shape[0] != span.length:
                raise ProtocolViolation(
                    f"round {t} key {msg.key}: got {msg.values.shape[0]} values, "
                    f"expected {span.length}"
                )
            bucket[msg.worker] = ("full", msg.values)
            self._round_compressed.add(False)
        else:
            if msg.payload.length != span.length:
                raise ProtocolViolation(
                    f"round {t} key {msg.key}: payload length {msg.payload.length}, "
                    f"expected {span.length}"
                )
            bucket[msg.worker] = ("quant", msg.payload)
            self._round_compressed.add(True)
        if len(bucket) == self.n_workers:
            mean = server_aggregate(bucket, self.n_workers, iteration=t, key=msg.key)
            self.weights.key(msg.key)[:] -= self.eta * mean
            self._round_mean[self.layout.slice(msg.key)] = mean
            self._committed_keys.add(msg.key)
            del self._contribs[msg.key]
        if len(self._committed_keys) == len(self.layout):
            return self._finalize_round()
        return []

    def _finalize_round(self) -> list[tuple[int, Message]]:
        t = self.committed_rounds
        self.grad_norms.append(float(np.linalg.norm(self._round_mean)))
        if self.trace is not None:
            if self.trace.capture_weights:
                self.trace.weights_after[t] = self.weights.values.copy()
            if self.trace.capture_means:
                self.trace.committed_means[t] = self._round_mean.copy()
            self.trace.compressed_rounds[t] = self._round_compressed == {True}
        self.committed_rounds += 1
        self._committed_keys.clear()
        self._round_compressed.clear()
        self._round_mean = np.zeros(self.layout.total)
        replies = []
        still_waiting = []
        for wid, want in self._waiting_pulls:
            if want < self.committed_rounds:
                replies.extend(self._weights_reply(wid))
            else:
                still_waiting.append((wid, want))
        self._waiting_pulls = still_waiting
        return replies

    def _handle_pull(self, msg: PullRequest) -> list[tuple[int, Message]]:
        if msg.iteration > self.committed_rounds:
            raise ProtocolViolation(
                f"worker {msg.worker} pulled for round {msg.iteration} ahead of "
                f"round {self.committed_rounds}"
            )
        if msg.iteration < self.committed_rounds:
            return self._weights_reply(msg.worker)
        self._waiting_pulls.append((msg.worker, msg.iteration))
        return []

    def _weights_reply(self, wid: int) -> list[tuple[int, Message]]:
        version = self.committed_rounds
        return [
            (wid, Weights(version, key, self.weights.key(key).copy()))
            for key in self.layout.keys
        ]


def _total_iterations(hp: HyperParams, batches_per_epoch: int) -> int:
    if hp.iters is not None:
        return hp.iters
    return hp.epochs * batches_per_epoch


def _build_workers(
    hp: HyperParams,
    model: ModelSpec,
    dataset: Dataset,
    init_weights: KeyedVector,
    trace: RunTrace | None,
    force_compress: bool,
    bypass_local: bool,
) -> list[Worker]:
    rngs = worker_rngs(hp.seed, hp.workers)
    return [
        Worker(
            wid,
            model,
            dataset,
            hp,
            init_weights,
            rngs[wid],
            trace=trace,
            force_compress=force_compress,
            bypass_local=bypass_local,
        )
        for wid in range(hp.workers)
    ]


def _make_record(
    t: int, step_results: list[StepResult], server: ServerNode, wall_micros: int
) -> IterationRecord:
    flags = {r.compressed for r in step_results}
    if len(flags) != 1:
        raise ProtocolViolation(f"round {t}: workers disagree on compression")
    loss = float(np.mean([r.loss for r in step_results]))
    rec = IterationRecord(
        iteration=t,
        epoch=step_results[0].epoch,
        train_loss=loss,
        grad_norm=server.grad_norms[t],
        bytes_pushed=sum(r.bytes_pushed for r in step_results),
        compressed=flags.pop(),
        wall_micros=wall_micros,
    )
    if not np.isfinite(rec.train_loss) or rec.train_loss > DIVERGENCE_LOSS_LIMIT:
        raise TrainingDiverged(t, rec.train_loss)
    return rec


def _run_lockstep(
    server: ServerNode,
    workers: list[Worker],
    total_iters: int,
    layout: Layout,
) -> list[list[StepResult]]:
    """Reference single-thread scheduler: compute, push, commit, pull, repeat."""
    pairs = [in_process_pair(f"worker{w.wid}", "server") for w in workers]
    worker_eps = [p[0] for p in pairs]
    server_eps = [p[1] for p in pairs]
    rounds: list[list[StepResult]] = []
    for t in range(total_iters):
        step_results = []
        for w in workers:
            res = w.compute_push()
            step_results.append(res)
            for m in res.msgs:
                worker_eps[w.wid].send(m)
            worker_eps[w.wid].send(PullRequest(w.wid, t))
        replies: dict[int, list[Message]] = defaultdict(list)
        for ep in server_eps:
            while True:
                try:
                    msg = ep.recv(timeout=0.0)
                except TransportTimeout:
                    break
                for wid, reply in server.handle(msg):
                    replies[wid].append(reply)
        if server.committed_rounds != t + 1:
            raise ProtocolViolation(f"round {t} never committed: a key was skipped")
        for wid, msgs in replies.items():
            for m in msgs:
                server_eps[wid].send(m)
        for w in workers:
            values = np.empty(layout.total)
            got = 0
            while True:
                try:
                    msg = worker_eps[w.wid].recv(timeout=0.0)
                except TransportTimeout:
                    break
                if not isinstance(msg, Weights):
                    raise ProtocolViolation(f"worker {w.wid} expected weights, got {msg}")
                values[layout.slice(msg.key)] = msg.values
                got += 1
            if got != len(layout):
                raise ProtocolViolation(f"worker {w.wid} pulled {got} of {len(layout)} keys")
            w.apply_pull(values)
        rounds.append(step_results)
    return rounds


def serve_socket(server: ServerNode, listener: SocketListener, recv_timeout: float = 120.0) -> None:
    """Accept one connection per worker and serve until every worker shuts down.

    Per-connection reader threads feed a single inbox; the server state
    machine itself runs in the calling thread, so handling stays serialized.
    """
    inbox: "queue.SimpleQueue" = queue.SimpleQueue()
    endpoints: dict[int, object] = {}

    def reader(ep):
        while True:
            try:
                msg = ep.recv(timeout=recv_timeout)
            except Exception as exc:  # noqa: BLE001 - reader reports and exits
                inbox.put(("error", exc, ep))
                return
            inbox.put(("msg", msg, ep))
            if isinstance(msg, Shutdown):
                return

    def acceptor():
        try:
            for _ in range(server.n_workers):
                ep = listener.accept(timeout=recv_timeout)
                threading.Thread(target=reader, args=(ep,), daemon=True).start()
        except Exception as exc:  # noqa: BLE001
            inbox.put(("error", exc, None))

    threading.Thread(target=acceptor, daemon=True).start()
    while not server.done:
        kind, msg, ep = inbox.get(timeout=recv_timeout)
        if kind == "error":
            raise msg
        wid = getattr(msg, "worker", None)
        if wid is not None and wid not in endpoints:
            endpoints[wid] = ep
        for target, reply in server.handle(msg):
            endpoints[target].send(reply)


def socket_worker_loop(worker: Worker, ep, total_iters: int) -> list[StepResult]:
    """Drive one worker's rounds over an open endpoint, then send Shutdown."""
    layout = worker.layout
    out = []
    for t in range(total_iters):
        started = time.perf_counter()
        res = worker.compute_push()
        for m in res.msgs:
            ep.send(m)
        ep.send(PullRequest(worker.wid, t))
        values = np.empty(layout.total)
        for _ in layout.keys:
            msg = ep.recv(timeout=120.0)
            if not isinstance(msg, Weights):
                raise ProtocolViolation(f"worker {worker.wid} expected weights, got {msg}")
            values[layout.slice(msg.key)] = msg.values
        worker.apply_pull(values)
        res.wall_micros = int((time.perf_counter() - started) * 1e6)
        out.append(res)
    ep.send(Shutdown())
    ep.close()
    return out


def _run_socket(
    server: ServerNode,
    workers: list[Worker],
    total_iters: int,
    layout: Layout,
    host: str,
) -> list[list[StepResult]]:
    """Same logic as lock-step, over TCP: worker threads plus a server thread."""
    listener = SocketListener(host=host)
    errors: list[BaseException] = []
    results: list[list[StepResult]] = [[] for _ in workers]

    def server_thread():
        try:
            serve_socket(server, listener)
        except Exception as exc:  # noqa: BLE001
            errors.append(exc)

    def worker_thread(w: Worker):
        try:
            ep = connect(listener.host, listener.port)
            results[w.wid] = socket_worker_loop(w, ep, total_iters)
        except Exception as exc:  # noqa: BLE001
            errors.append(exc)

    serve = threading.Thread(target=server_thread, daemon=True)
    threads = [threading.Thread(target=worker_thread, args=(w,), daemon=True) for w in workers]
    serve.start()
    for th in threads:
        th.start()
    for th in threads:
        th.join(timeout=300.0)
    serve.join(timeout=60.0)
    listener.close()
    if errors:
        raise errors[0]
    return [list(per_round) for per_round in zip(*results)]


def run_training(
    hp: HyperParams,
    model: ModelSpec,
    dataset: Dataset,
    *,
    transport: str = "inprocess",
    eval_set: tuple[np.ndarray, np.ndarray] | None = None,
    trace: RunTrace | None = None,
    force_compress: bool = False,
    bypass_local: bool = False,
    host: str = "127.0.0.1",
) -> TrainResult:
    """Run one full training job and return weights, records, and a summary.

    With transport="inprocess" the run is deterministic: the same
    (hp, model, dataset) produce bit-identical weight trajectories.
    """
    hp.validate()
    if transport not in ("inprocess", "socket"):
        raise ConfigError(f"transport must be inprocess or socket, got {transport!r}")
    if len(dataset.shards) != hp.workers:
        dataset = dataset.with_shards(hp.workers)
    init_weights = model.init_weights(init_rng(hp.seed))
    layout = init_weights.layout
    server = ServerNode(init_weights, hp, trace=trace)
    workers = _build_workers(hp, model, dataset, init_weights, trace, force_compress, bypass_local)
    total_iters = _total_iterations(hp, workers[0].batcher.batches_per_epoch)

    started = time.perf_counter()
    if transport == "inprocess":
        rounds = _run_lockstep(server, workers, total_iters, layout)
    else:
        rounds = _run_socket(server, workers, total_iters, layout, host)
    wall_seconds = time.perf_counter() - started

    records = []
    for t, step_results in enumerate(rounds):
        wall = step_results[0].wall_micros if transport == "socket" else 0
        records.append(_make_record(t, step_results, server, wall))

    if trace is not None:
        for w in workers:
            w.snapshot_residuals(trace)

    final = server.weights.copy()
    test_accuracy = None
    if eval_set is not None and model.is_classifier:
        test_accuracy = accuracy(model, final, eval_set[0], eval_set[1])
    summary = RunSummary(
        final_train_loss=batch_loss(model, final, dataset.features, dataset.targets),
        test_accuracy=test_accuracy,
        total_iterations=len(records),
        total_bytes_pushed=sum(r.bytes_pushed for r in records),
        compressed_iteration_fraction=(
            float(np.mean([r.compressed for r in records])) if records else 0.0
        ),
        wall_seconds=wall_seconds,
        config={**asdict(hp), "transport": transport},
        version=__version__,
    )
    return TrainResult(weights=final, records=records, summary=summary)
