"""Simulated client/server protocol.

Every round the server samples ``Z`` of the ``K`` clients, broadcasts the
global particles, each scheduled client rebuilds the KDE prior and refines its
own particles with SVGD, uploads them, and the server replaces the global
particles by the Wasserstein barycenter of the uploads.

All particle traffic goes through :class:`MessageBus`, which serializes every
message to the binary wire format and parses it back, so the 32-bit payload
rounding is part of every run.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import metrics
from .barycenter import AggregationConfig, aggregate, parameter_average
from .data import ClientShard
from .kde import DEFAULT_BANDWIDTH, GlobalPrior, grad_log_density
from .model import MlpShape, grad_log_likelihood
from .numerics import make_rng, split_rng
from .ot import w2_distance
from .svgd import SvgdConfig, run_svgd

log = logging.getLogger(__name__)

WIRE_MAGIC = b"FWBA"
WIRE_VERSION = 1
HEADER = struct.Struct("<4sHIIII")  # magic, version, round, client_id, n, m
CHECKSUM = struct.Struct("<Q")
SERVER_ID = 0xFFFFFFFF
AGGREGATORS = ("wba", "param-avg")
CSV_COLUMNS = ("round", "client_id", "scheduled", "accuracy", "ece",
               "mean_w2_client_to_global", "comm_bytes")
CSV_VERSION = 1


class WireError(ValueError):
    pass


@dataclass(frozen=True)
class BroadcastMsg:
    round: int
    particles: np.ndarray


@dataclass(frozen=True)
class UploadMsg:
    round: int
    client_id: int
    particles: np.ndarray


def message_size(n: int, m: int) -> int:
    """Bytes on the wire for one message carrying ``n`` particles of dim ``m``."""
    return HEADER.size + 4 * n * m + CHECKSUM.size


def _checksum(payload: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


def encode_particles(round_: int, client_id: int, particles) -> bytes:
    particles = np.asarray(particles, dtype=np.float64)
    if particles.ndim != 2:
        raise WireError("particles must be a 2-D array")
    n, m = particles.shape
    payload = particles.astype("<f4").tobytes()
    header = HEADER.pack(WIRE_MAGIC, WIRE_VERSION, round_, client_id, n, m)
    return header + payload + CHECKSUM.pack(_checksum(payload))


def decode_particles(data: bytes):
    """Parse one wire message into ``(round, client_id, particles)``.

    Particles are widened to float64.
    """
    if len(data) < HEADER.size + CHECKSUM.size:
        raise WireError(f"message too short: {len(data)} bytes")
    magic, version, round_, client_id, n, m = HEADER.unpack_from(data, 0)
    if magic != WIRE_MAGIC:
        raise WireError(f"bad magic {magic!r}")
    if version != WIRE_VERSION:
        raise WireError(f"unsupported wire version {version}")
    if len(data) != message_size(n, m):
        raise WireError(f"expected {message_size(n, m)} bytes for {n}x{m}, got {len(data)}")
    payload = data[HEADER.size:HEADER.size + 4 * n * m]
    (checksum,) = CHECKSUM.unpack_from(data, HEADER.size + 4 * n * m)
    if checksum != _checksum(payload):
        raise WireError("checksum mismatch")
    particles = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(n, m)
    return round_, client_id, particles


def encode(msg) -> bytes:
    if isinstance(msg, BroadcastMsg):
        return encode_particles(msg.round, SERVER_ID, msg.particles)
    return encode_particles(msg.round, msg.client_id, msg.particles)


def decode(data: bytes):
    round_, client_id, particles = decode_particles(data)
    if client_id == SERVER_ID:
        return BroadcastMsg(round_, particles)
    return UploadMsg(round_, client_id, particles)


class MessageBus:
    """In-process transport that round-trips every message through bytes."""

    def __init__(self):
        self.bytes_sent = 0
        self.messages_sent = 0

    def transmit(self, msg):
        data = encode(msg)
        self.bytes_sent += len(data)
        self.messages_sent += 1
        return decode(data)


def save_ensemble(path, particles, round_: int = 0, client_id: int = SERVER_ID) -> None:
    Path(path).write_bytes(encode_particles(round_, client_id, particles))


def load_ensemble(path) -> np.ndarray:
    return decode_particles(Path(path).read_bytes())[2]


@dataclass(frozen=True)
class FederationConfig:
    num_clients: int = 10
    sample_size: int = 2
    rounds: int = 50
    particles: int = 10
    hidden_dim: int = 100
    svgd: SvgdConfig = field(default_factory=SvgdConfig)
    aggregation: AggregationConfig = field(default_factory=AggregationConfig)
    kde_bandwidth: float = DEFAULT_BANDWIDTH
    init_scale: float = 0.1
    seed: int = 0
    aggregator: str = "wba"
    use_prior: bool = True
    client_weighting: str = "uniform"
    eval_mode: str = "local"
    workers: Optional[int] = None

    def __post_init__(self):
        if self.num_clients < 1:
            raise ValueError("num_clients must be >= 1")
        if not 1 <= self.sample_size <= self.num_clients:
            raise ValueError(
                f"sample_size must lie in [1, num_clients={self.num_clients}], "
                f"got {self.sample_size}")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.particles < 1:
            raise ValueError("particles must be >= 1")
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be >= 1")
        if not self.kde_bandwidth > 0:
            raise ValueError("kde_bandwidth must be positive")
        if self.init_scale < 0:
            raise ValueError("init_scale must be >= 0")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.aggregator not in AGGREGATORS:
            raise ValueError(f"aggregator must be one of {AGGREGATORS}")
        if self.client_weighting not in ("uniform", "data_size"):
            raise ValueError("client_weighting must be 'uniform' or 'data_size'")
        if self.eval_mode not in ("local", "global"):
            raise ValueError("eval_mode must be 'local' or 'global'")
        if self.workers is not None and self.workers < 1:
            raise ValueError("workers must be >= 1")

    def comm_bytes_per_round(self, dim: int) -> int:
        return 2 * self.sample_size * message_size(self.particles, dim)

    def comm_bytes_total(self, dim: int) -> int:
        return self.rounds * self.comm_bytes_per_round(dim)


@dataclass
class ClientState:
    client_id: int
    shard: ClientShard
    particles: np.ndarray
    rng: np.random.Generator
    participations: int = 0


@dataclass
class ServerState:
    shape: MlpShape
    global_particles: np.ndarray
    rng: np.random.Generator
    bus: MessageBus = field(default_factory=MessageBus)
    round: int = 0


@dataclass(frozen=True)
class RoundReport:
    round: int
    scheduled_clients: tuple
    per_client_accuracy: tuple
    per_client_ece: tuple
    mean_w2_client_to_global: float
    comm_bytes: int
    wall_ms: float
    missing_clients: tuple = ()

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.per_client_accuracy))

    @property
    def mean_ece(self) -> float:
        return float(np.mean(self.per_client_ece))

    @property
    def scheduled_mean_accuracy(self) -> float:
        return float(np.mean([self.per_client_accuracy[k] for k in self.scheduled_clients]))

    @property
    def scheduled_mean_ece(self) -> float:
        return float(np.mean([self.per_client_ece[k] for k in self.scheduled_clients]))

    def csv_rows(self):
        scheduled = set(self.scheduled_clients)
        for k, (acc, e) in enumerate(zip(self.per_client_accuracy, self.per_client_ece)):
            yield (self.round, k, int(k in scheduled), repr(float(acc)), repr(float(e)),
                   repr(float(self.mean_w2_client_to_global)), self.comm_bytes)


def model_shape(config: FederationConfig, shards) -> MlpShape:
    dims = {s.train.input_dim for s in shards}
    classes = {s.train.classes for s in shards}
    if len(dims) != 1 or len(classes) != 1:
        raise ValueError("all shards must share input dimension and class count")
    return MlpShape(dims.pop(), config.hidden_dim, classes.pop())


def init_run(config: FederationConfig, shards):
    """Draw initial global and local particles from ``N(0, init_scale^2 I)``."""
    if len(shards) != config.num_clients:
        raise ValueError(f"expected {config.num_clients} shards, got {len(shards)}")
    shape = model_shape(config, shards)
    master = make_rng(config.seed)
    init_rng, schedule_rng, *client_rngs = split_rng(master, 2 + config.num_clients)
    size = (config.particles, shape.flat_len)
    global_particles = config.init_scale * init_rng.standard_normal(size)
    clients = [
        ClientState(k, shard, config.init_scale * init_rng.standard_normal(size), client_rngs[k])
        for k, shard in enumerate(shards)
    ]
    server = ServerState(shape, global_particles, schedule_rng)
    return server, clients


def local_target(shape: MlpShape, shard: ClientShard, prior: Optional[GlobalPrior],
                 minibatch: Optional[int] = None):
    """Log-posterior gradient for a client: KDE prior term plus data term.

    With ``minibatch`` the likelihood gradient is estimated on a uniform
    sample and scaled by ``|D_k| / minibatch``.
    """
    X, y = shard.train.features, shard.train.labels
    size = len(y)

    def grad(particles, rng):
        if minibatch is not None and minibatch < size:
            idx = rng.choice(size, minibatch, replace=False)
            g = grad_log_likelihood(shape, particles, X[idx], y[idx]) * (size / minibatch)
        else:
            g = grad_log_likelihood(shape, particles, X, y)
        if prior is not None:
            g = g + grad_log_density(prior, particles)
        return g

    return grad


def client_update(client: ClientState, broadcast: BroadcastMsg, shape: MlpShape,
                  config: FederationConfig) -> UploadMsg:
    prior = (GlobalPrior(broadcast.particles, config.kde_bandwidth)
             if config.use_prior else None)
    target = local_target(shape, client.shard, prior, config.svgd.minibatch)
    client.particles = run_svgd(client.particles, target, config.svgd, rng=client.rng)
    client.participations += 1
    return UploadMsg(broadcast.round, client.client_id, client.particles)


def _evaluate(particles, shard, shape):
    probs = metrics.predict_ensemble(particles, shard.test.features, shape)
    acc = metrics.accuracy_from_probs(probs, shard.test.labels)
    e, _ = metrics.ece_from_probs(probs, shard.test.labels)
    return acc, e


def _client_weights(config, clients, received):
    if config.client_weighting == "uniform":
        return None
    sizes = np.array([len(clients[k].shard.train) for k in received], dtype=np.float64)
    w = sizes / sizes.sum()
    w[-1] = 1.0 - w[:-1].sum()
    return tuple(w)


def run_round(server: ServerState, clients, config: FederationConfig, rng=None,
              executor=None) -> RoundReport:
    """Execute one communication round and report metrics for every client."""
    start = time.perf_counter()
    rng = server.rng if rng is None else rng
    bytes_before = server.bus.bytes_sent
    round_ = server.round + 1
    scheduled = tuple(int(k) for k in np.sort(
        rng.choice(config.num_clients, config.sample_size, replace=False)))

    broadcasts = {k: server.bus.transmit(BroadcastMsg(round_, server.global_particles))
                  for k in scheduled}

    def work(k):
        try:
            return client_update(clients[k], broadcasts[k], server.shape, config)
        except Exception:  # a failed client is reported as a missing upload
            log.exception("client %d failed in round %d", k, round_)
            return None

    if executor is not None and len(scheduled) > 1:
        results = list(executor.map(work, scheduled))
    else:
        results = [work(k) for k in scheduled]

    uploads = {}
    for k, msg in zip(scheduled, results):  # consumed in client-id order
        if msg is not None:
            uploads[k] = server.bus.transmit(msg).particles
    missing = tuple(k for k in scheduled if k not in uploads)
    if not uploads:
        raise RuntimeError(f"round {round_}: no client uploads received")
    received = sorted(uploads)
    ensembles = [uploads[k] for k in received]
    weights = _client_weights(config, clients, received)
    if config.aggregator == "wba":
        agg = AggregationConfig(config.aggregation.fixed_point_iters, weights)
        server.global_particles = aggregate(server.global_particles, ensembles, agg)
    else:
        server.global_particles = parameter_average(ensembles, weights)
    server.round = round_

    mean_w2 = float(np.mean([w2_distance(e, server.global_particles) for e in ensembles]))
    accs, eces = [], []
    for client in clients:
        particles = (client.particles if config.eval_mode == "local"
                     else server.global_particles)
        acc, e = _evaluate(particles, client.shard, server.shape)
        accs.append(acc)
        eces.append(e)
    return RoundReport(
        round=round_, scheduled_clients=scheduled, per_client_accuracy=tuple(accs),
        per_client_ece=tuple(eces), mean_w2_client_to_global=mean_w2,
        comm_bytes=server.bus.bytes_sent - bytes_before,
        wall_ms=1000.0 * (time.perf_counter() - start), missing_clients=missing)


@dataclass
class ExperimentResult:
    config: FederationConfig
    reports: list
    global_particles: np.ndarray
    client_particles: list
    comm_bytes_total: int
    shape: MlpShape

    def summary(self) -> dict:
        last = self.reports[-1]
        return {
            "final_mean_acc": last.mean_accuracy,
            "final_mean_ece": last.mean_ece,
            "final_scheduled_mean_acc": last.scheduled_mean_accuracy,
            "final_scheduled_mean_ece": last.scheduled_mean_ece,
            "rounds": len(self.reports),
            "comm_bytes_total": self.comm_bytes_total,
            "message_bytes": message_size(self.config.particles, self.shape.flat_len),
            "wall_ms_total": float(sum(r.wall_ms for r in self.reports)),
        }


def write_round_csv(reports, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for report in reports:
            writer.writerows(report.csv_rows())


def run_experiment(config: FederationConfig, shards, out_dir=None,
                   on_round=None) -> ExperimentResult:
    """Run ``config.rounds`` rounds; optionally persist artifacts to ``out_dir``.

    Artifacts: ``rounds.csv`` (one row per round per client), ``summary.json``,
    ``timing.json`` and ``ensembles/{global,client_XXX}.fwba`` in the wire
    format. Wall times are kept out of the CSV so reruns are byte-identical.
    """
    server, clients = init_run(config, shards)
    reports = []
    workers = config.workers or 1
    executor = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for _ in range(config.rounds):
            report = run_round(server, clients, config, executor=executor)
            reports.append(report)
            log.info("round %d: mean acc %.4f, mean ece %.4f, %.0f ms", report.round,
                     report.mean_accuracy, report.mean_ece, report.wall_ms)
            if on_round is not None:
                on_round(report)
    finally:
        if executor is not None:
            executor.shutdown()
    result = ExperimentResult(config, reports, server.global_particles,
                              [c.particles for c in clients], server.bus.bytes_sent,
                              server.shape)
    if out_dir is not None:
        persist(result, out_dir)
    return result


def persist(result: ExperimentResult, out_dir) -> dict:
    out = Path(out_dir)
    ens = out / "ensembles"
    ens.mkdir(parents=True, exist_ok=True)
    write_round_csv(result.reports, out / "rounds.csv")
    rounds = len(result.reports)
    save_ensemble(ens / "global.fwba", result.global_particles, rounds)
    for k, particles in enumerate(result.client_particles):
        save_ensemble(ens / f"client_{k:03d}.fwba", particles, rounds, k)
    (out / "summary.json").write_text(json.dumps(result.summary(), indent=2, sort_keys=True))
    timing = [{"round": r.round, "wall_ms": r.wall_ms,
               "missing_clients": list(r.missing_clients)} for r in result.reports]
    (out / "timing.json").write_text(json.dumps(timing, indent=2))
    return {"rounds_csv": str(out / "rounds.csv"), "summary": str(out / "summary.json"),
            "ensembles": str(ens)}


def config_to_dict(config: FederationConfig) -> dict:
    return asdict(config)
