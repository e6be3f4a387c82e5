"""Deterministic in-process multi-party simulator and measurement rig.

Runs whole sessions of the two protocols over an observed message bus,
recording every message with its exact serialized size, driving the epoch
schedule, and producing:

* a session report with round counts, per-party traffic split by protocol,
  measured aggregate-error statistics, and traffic-inflation ratios against
  both a 16-bit-quantized and a 32-bit-float upload baseline;
* a transcript that can be dumped as a binary log and replayed or audited;
* colluder-view audits: what a coalition of the server plus up to N-2
  clients can reconstruct from its joint view (exactly the honest clients'
  update sum, nothing finer), plus chi-square uniformity smoke tests on the
  honest parties' masked uploads -- statistical evidence of masking, not a
  security proof;
* a toy federated-averaging trainer (logistic regression on synthetic
  blobs) comparing plain aggregation against the full masked pipeline;
* benchmark grids over mask-generator settings and model sizes.

Everything is deterministic under a fixed master seed except wall-clock
timings, which reports keep in a separate field so comparisons can drop it.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import bfv, codec, mkbfv, protocol, ring, shprg
from .protocol import SERVER, SessionConfig

# ---------------------------------------------------------------------------
# Transcript
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TranscriptEntry:
    index: int
    round_index: int
    round_label: str
    msg_type: str
    tag: int
    sender: int
    receivers: tuple[int, ...]
    run_id: int
    epoch: int
    n_bytes: int
    secure: bool
    data: bytes | None
    msg: object


@dataclass
class ClientViewLog:
    """Per-client ground truth the harness retains for audits."""

    updates: dict[int, np.ndarray] = field(default_factory=dict)
    seeds: dict[int, tuple[shprg.Seed, shprg.Seed]] = field(default_factory=dict)


class Transcript:
    """Append-only record of every message, with exact serialized sizes."""

    def __init__(self, config: SessionConfig, keep_payloads: bool = True):
        self.config = config
        self.keep_payloads = keep_payloads
        self.entries: list[TranscriptEntry] = []
        self.round_labels: list[str] = []
        self.views: dict[int, ClientViewLog] = {}
        self._digest = hashlib.blake2b(digest_size=32)

    # -- bus interface -------------------------------------------------------

    def start_round(self, label: str) -> None:
        self.round_labels.append(label)
        self._digest.update(b"round:" + label.encode())

    def send(self, msg, receivers: Sequence[int]) -> None:
        data = msg.to_bytes()
        self._digest.update(data)
        self.entries.append(
            TranscriptEntry(
                index=len(self.entries),
                round_index=len(self.round_labels) - 1,
                round_label=self.round_labels[-1] if self.round_labels else "",
                msg_type=type(msg).__name__,
                tag=msg.TAG,
                sender=msg.sender,
                receivers=tuple(receivers),
                run_id=msg.run_id,
                epoch=msg.epoch,
                n_bytes=len(data),
                secure=msg.SECURE,
                data=data if self.keep_payloads else None,
                msg=msg,
            )
        )

    # -- accounting ------------------------------------------------------------

    @property
    def rounds_total(self) -> int:
        return len(self.round_labels)

    def digest_hex(self) -> str:
        return self._digest.hexdigest()

    @staticmethod
    def _category(tag: int) -> str:
        return "hma" if tag in (protocol.MaskedUpload.TAG, protocol.MaskedAggBroadcast.TAG) else "msa"

    def party_traffic(self) -> dict[int, dict[str, int]]:
        """Per-party byte totals: uploads/downloads split by protocol plus secure channel."""
        parties = [SERVER] + list(range(self.config.n_clients))
        out = {
            p: {"hma_up": 0, "hma_down": 0, "msa_up": 0, "msa_down": 0, "secure_up": 0, "secure_down": 0}
            for p in parties
        }
        for e in self.entries:
            if e.secure:
                out[e.sender]["secure_up"] += e.n_bytes
                for r in e.receivers:
                    out[r]["secure_down"] += e.n_bytes
                continue
            cat = self._category(e.tag)
            out[e.sender][f"{cat}_up"] += e.n_bytes
            for r in e.receivers:
                out[r][f"{cat}_down"] += e.n_bytes
        return out

    def message_bytes(self, msg_type: str, sender: int | None = None) -> list[int]:
        return [
            e.n_bytes
            for e in self.entries
            if e.msg_type == msg_type and (sender is None or e.sender == sender)
        ]

    def dump(self, path: str) -> None:
        """Binary log: length-prefixed (envelope + payload) records for replay."""
        with open(path, "wb") as fh:
            fh.write(b"SAGGLOG1")
            fh.write(struct.pack("<I", len(self.entries)))
            for e in self.entries:
                if e.data is None:
                    raise ValueError("transcript was captured without payloads; cannot dump")
                fh.write(struct.pack("<iB", e.round_index, 1 if e.secure else 0))
                fh.write(struct.pack("<iH", e.sender, len(e.receivers)))
                for r in e.receivers:
                    fh.write(struct.pack("<i", r))
                fh.write(struct.pack("<I", len(e.data)))
                fh.write(e.data)


def load_transcript_dump(path: str, config: SessionConfig) -> list[tuple[int, bool, int, tuple, object]]:
    """Parse a transcript dump back into (round, secure, sender, receivers, message)."""
    records = []
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != b"SAGGLOG1":
            raise ValueError("not a transcript dump")
        (count,) = struct.unpack("<I", fh.read(4))
        for _ in range(count):
            round_index, secure = struct.unpack("<iB", fh.read(5))
            sender, n_recv = struct.unpack("<iH", fh.read(6))
            receivers = tuple(struct.unpack("<i", fh.read(4))[0] for _ in range(n_recv))
            (size,) = struct.unpack("<I", fh.read(4))
            msg = protocol.parse_message(fh.read(size), config)
            records.append((round_index, bool(secure), sender, receivers, msg))
    return records


# ---------------------------------------------------------------------------
# Session report
# ---------------------------------------------------------------------------


@dataclass
class SessionReport:
    master_seed: int
    n_clients: int
    model_size: int
    epochs: int
    tau: int
    setting: str | None
    p: int
    w: int
    rounds_total: int
    per_party: dict
    total_bytes: int
    hma_client_upload_bytes_per_epoch: int
    msa_round2_upload_bytes_per_client: int
    msa_client_bytes_per_run: int
    msa_runs: int
    inflation: dict
    error_histogram: dict
    e0_max_abs: int
    clip_rate: float
    transcript_digest: str
    timings: dict

    def to_dict(self, exclude_timings: bool = False) -> dict:
        d = {k: v for k, v in self.__dict__.items()}
        if exclude_timings:
            d.pop("timings", None)
        return d

    def to_json(self, exclude_timings: bool = False) -> str:
        return json.dumps(self.to_dict(exclude_timings), indent=2, sort_keys=True)


class SyntheticUpdateSource:
    """Per-epoch random update vectors in [low, high), deterministic per seed."""

    def __init__(self, n_clients: int, model_size: int, seed: int = 0, low: float = -1.0, high: float = 1.0):
        self.n_clients = n_clients
        self.model_size = model_size
        self.seed = seed
        self.low = low
        self.high = high

    def updates_for_epoch(self, epoch: int) -> list[np.ndarray]:
        rng = np.random.default_rng(np.random.SeedSequence(entropy=(self.seed, epoch)))
        return [
            rng.uniform(self.low, self.high, self.model_size) for _ in range(self.n_clients)
        ]

    def receive_aggregate(self, epoch: int, aggregate: np.ndarray) -> None:
        pass


def run_session(
    config: SessionConfig,
    update_source,
    master_seed: int = 0,
    keep_payloads: bool = True,
    min_parties: int = 2,
) -> tuple[SessionReport, Transcript]:
    """Execute the full schedule and account every byte and round.

    ``update_source`` must provide ``updates_for_epoch(epoch) -> list of N
    float vectors``; it may also expose ``receive_aggregate(epoch, m0)`` to
    close a training loop.  Deterministic under (config, master_seed).
    """
    config.validate(min_parties=min_parties)
    transcript = Transcript(config, keep_payloads=keep_payloads)
    seed_seq = np.random.SeedSequence(entropy=(master_seed, 0xA66))
    children = seed_seq.spawn(config.n_clients)
    cache = shprg.MatrixCache(config.shprg_params)
    clients = [
        protocol.ClientState(i, config, np.random.default_rng(children[i]), cache)
        for i in range(config.n_clients)
    ]
    server = protocol.ServerState(config)
    transcript.views = {c.id: ClientViewLog() for c in clients}

    plan = protocol.schedule(config)
    qp = config.quant_params
    histogram: dict[int, int] = {}
    e0_max = 0
    clipped = 0
    total_entries = 0
    timings = {"msa_s": 0.0, "hma_s": 0.0}

    for step in plan.steps:
        if step.kind == "msa":
            t0 = time.perf_counter()
            protocol.msa_run(clients, server, step.run_id, bus=transcript)
            timings["msa_s"] += time.perf_counter() - t0
        else:
            updates = update_source.updates_for_epoch(step.epoch)
            t0 = time.perf_counter()
            m0s = protocol.hma_epoch(clients, server, step.epoch, updates, bus=transcript)
            timings["hma_s"] += time.perf_counter() - t0
            x_true = sum(codec.quantize(u, qp).astype(np.int64) for u in updates)
            e0 = clients[0].last_raw_aggregate - x_true
            for v, c in zip(*np.unique(e0, return_counts=True)):
                histogram[int(v)] = histogram.get(int(v), 0) + int(c)
            e0_max = max(e0_max, int(np.max(np.abs(e0))))
            for c, u in zip(clients, updates):
                transcript.views[c.id].updates[step.epoch] = np.asarray(u, dtype=np.float64)
                clipped += c.clip_counts[step.epoch]
                total_entries += config.model_size
            for c in clients:
                transcript.views[c.id].seeds[step.epoch] = c.audit_log[step.epoch]
            if hasattr(update_source, "receive_aggregate"):
                update_source.receive_aggregate(step.epoch, m0s[0])

    timings["total_s"] = timings["msa_s"] + timings["hma_s"]
    report = _build_report(config, transcript, plan, master_seed, histogram, e0_max,
                           clipped / total_entries if total_entries else 0.0, timings)
    return report, transcript


def _build_report(
    config: SessionConfig,
    transcript: Transcript,
    plan: protocol.RunPlan,
    master_seed: int,
    histogram: dict,
    e0_max: int,
    clip_rate: float,
    timings: dict,
) -> SessionReport:
    traffic = transcript.party_traffic()
    total_bytes = sum(e.n_bytes for e in transcript.entries if not e.secure)
    # cross-check: per-entry sums must equal per-party upload totals exactly
    assert total_bytes == sum(v["hma_up"] + v["msa_up"] for v in traffic.values())

    hma_uploads = sorted(set(transcript.message_bytes("MaskedUpload")))
    msa_round2 = sorted(set(transcript.message_bytes("SeedCiphertexts")))
    msa_runs = sum(1 for s in plan.steps if s.kind == "msa")
    client0 = traffic[0]
    msa_client_per_run = (client0["msa_up"] + client0["msa_down"]) // max(msa_runs, 1)

    p = config.shprg_params.p
    log2p = p.bit_length() - 1
    m_bits = config.model_size
    baseline16_bits = 2 * m_bits * 16  # up + down, 16-bit quantized entries
    baseline32_bits = 2 * m_bits * 32
    hma_payload_bits = 2 * m_bits * log2p
    round2_bits = 8 * (msa_round2[0] if msa_round2 else 0)
    msa_share = round2_bits / (config.tau * baseline16_bits)
    hma_wire = (
        (hma_uploads[0] if hma_uploads else 0)
        + (transcript.message_bytes("MaskedAggBroadcast") or [0])[0]
    )
    wire_per_epoch = 8 * hma_wire + 8 * msa_client_per_run / config.tau
    inflation = {
        "bits_vs_quant16": hma_payload_bits / baseline16_bits + msa_share,
        "msa_amortized_share": msa_share,
        "wire_vs_quant16": wire_per_epoch / baseline16_bits,
        "wire_vs_float32": wire_per_epoch / baseline32_bits,
    }

    return SessionReport(
        master_seed=master_seed,
        n_clients=config.n_clients,
        model_size=config.model_size,
        epochs=config.epochs,
        tau=config.tau,
        setting=config.shprg_params.setting_label,
        p=p,
        w=config.w,
        rounds_total=transcript.rounds_total,
        per_party={str(k): v for k, v in traffic.items()},
        total_bytes=total_bytes,
        hma_client_upload_bytes_per_epoch=hma_uploads[0] if hma_uploads else 0,
        msa_round2_upload_bytes_per_client=msa_round2[0] if msa_round2 else 0,
        msa_client_bytes_per_run=msa_client_per_run,
        msa_runs=msa_runs,
        inflation=inflation,
        error_histogram={str(k): v for k, v in sorted(histogram.items())},
        e0_max_abs=e0_max,
        clip_rate=clip_rate,
        transcript_digest=transcript.digest_hex(),
        timings=timings,
    )


# ---------------------------------------------------------------------------
# Colluder-view audit
# ---------------------------------------------------------------------------


@dataclass
class AuditReport:
    colluders: list
    honest_clients: list[int]
    epochs_audited: list[int]
    reconstruction_exact: bool
    reconstruction_digest: str
    approx_residual_max: int | None
    approx_within_bound: bool | None
    uniformity: dict
    server_structurally_blind: bool

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True)


def audit_colluding_view(transcript: Transcript, colluders: Sequence) -> AuditReport:
    """What a coalition's joint view yields, checked against ground truth.

    ``colluders`` mixes the string ``"server"`` with client ids.  The audit
    (a) reconstructs the honest clients' summed quantized update from the
    coalition's view combined with the honest-mask sum that the ideal
    functionality leaks anyway, asserting exact agreement with ground truth;
    (b) when a colluding client is present, repeats the reconstruction using
    only coalition knowledge (the demasking seed), whose residual is bounded
    by the homomorphism error; and (c) runs a chi-square uniformity smoke
    test over the honest clients' masked uploads.
    """
    config = transcript.config
    colluding_clients = sorted(c for c in colluders if c != "server")
    server_colludes = "server" in colluders
    for c in colluding_clients:
        if not 0 <= c < config.n_clients:
            raise ValueError(f"colluder {c} is not a client id")
    if len(colluding_clients) > config.n_clients - 2:
        raise ValueError(
            f"{len(colluding_clients)} colluding clients exceeds the N-2 = "
            f"{config.n_clients - 2} bound the scheme defends against"
        )
    honest = [c for c in range(config.n_clients) if c not in colluding_clients]
    epochs = sorted({e.epoch for e in transcript.entries if e.msg_type == "MaskedUpload"})

    uploads: dict[tuple[int, int], np.ndarray] = {}
    broadcasts: dict[int, np.ndarray] = {}
    for e in transcript.entries:
        if e.msg_type == "MaskedUpload":
            uploads[(e.sender, e.epoch)] = e.msg.values
        elif e.msg_type == "MaskedAggBroadcast":
            broadcasts[e.epoch] = e.msg.values

    p = config.shprg_params.p
    qp = config.quant_params
    recon_exact = bool(epochs) and bool(colluders)
    digest = hashlib.blake2b(digest_size=16)
    approx_max: int | None = None
    if not colluders:
        recon_exact = False
    for t in epochs if colluders else []:
        if server_colludes:
            y_honest = sum(uploads[(u, t)].astype(np.uint64) for u in honest) % np.uint64(p)
        else:
            # client-only coalition: subtract own uploads from the broadcast sum
            y_honest = broadcasts[t].astype(np.int64) - sum(
                uploads[(u, t)].astype(np.int64) for u in colluding_clients
            )
            y_honest = (y_honest % p).astype(np.uint64)
        z_g = np.zeros(config.model_size, dtype=np.uint64)
        for u in honest:
            k_u = transcript.views[u].seeds[t][0]
            g = shprg.expand(k_u, config.model_size, config.shprg_params)
            z_g = (z_g + g) % np.uint64(p)
        recon = codec.unmask(y_honest, z_g, qp)
        truth = sum(
            codec.quantize(transcript.views[u].updates[t], qp).astype(np.int64) for u in honest
        )
        if not np.array_equal(recon, truth):
            recon_exact = False
        digest.update(recon.astype("<i8").tobytes())

        if colluding_clients:
            k0 = transcript.views[colluding_clients[0]].seeds[t][1]
            z_k = [
                int(k0.entries[j])
                - sum(int(transcript.views[u].seeds[t][0].entries[j]) for u in colluding_clients)
                for j in range(config.shprg_params.mu)
            ]
            g_zk = shprg.expand(
                shprg.reduce_seed(z_k, config.shprg_params), config.model_size, config.shprg_params
            )
            approx = codec.unmask(y_honest, g_zk, qp)
            residual = int(np.max(np.abs(approx - truth)))
            approx_max = residual if approx_max is None else max(approx_max, residual)

    chi2, p_value, samples = _masked_upload_uniformity(uploads, honest, epochs, p)

    server_safe = all(
        e.tag in protocol.SERVER_SAFE_TAGS
        for e in transcript.entries
        if not e.secure and SERVER in e.receivers
    ) and all(SERVER not in e.receivers for e in transcript.entries if e.secure)

    return AuditReport(
        colluders=list(colluders),
        honest_clients=honest,
        epochs_audited=epochs if colluders else [],
        reconstruction_exact=recon_exact,
        reconstruction_digest=digest.hexdigest() if colluders else "",
        approx_residual_max=approx_max,
        approx_within_bound=None if approx_max is None else approx_max <= len(honest) - 1,
        uniformity={
            "chi2": chi2,
            "p_value": p_value,
            "buckets": 256,
            "samples": samples,
            "passed": p_value >= 1e-3,
        },
        server_structurally_blind=server_safe,
    )


def _masked_upload_uniformity(uploads, honest, epochs, p) -> tuple[float, float, int]:
    from scipy.stats import chisquare

    pooled = [uploads[(u, t)] for u in honest for t in epochs if (u, t) in uploads]
    if not pooled:
        return 0.0, 1.0, 0
    values = np.concatenate(pooled)
    shift = np.uint64(p.bit_length() - 1 - 8)
    buckets = np.bincount((values >> shift).astype(np.int64), minlength=256)
    stat = chisquare(buckets)
    return float(stat.statistic), float(stat.pvalue), int(values.size)


# ---------------------------------------------------------------------------
# Toy federated averaging
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainerConfig:
    n_clients: int = 10
    n_features: int = 20
    n_train: int = 2000
    n_test: int = 1000
    separation: float = 5.0
    local_steps: int = 5
    lr: float = 0.5
    epochs: int = 20
    tau: int = 20
    setting: str = "A"
    data_seed: int = 1234
    m_min: float = -2.0  # update clip bounds; local deltas stay well inside
    m_max: float = 2.0


def _make_blobs(cfg: TrainerConfig):
    rng = np.random.default_rng(cfg.data_seed)
    d = cfg.n_features
    center = np.full(d, cfg.separation / (2.0 * math.sqrt(d)))
    total = cfg.n_train + cfg.n_test
    labels = rng.integers(0, 2, size=total)
    x = rng.normal(size=(total, d)) + np.where(labels[:, None] == 1, center, -center)
    return (x[: cfg.n_train], labels[: cfg.n_train]), (x[cfg.n_train :], labels[cfg.n_train :])


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(z, -30, 30)))


class _FedAvgTrainer:
    """Logistic regression via federated averaging of local update deltas."""

    def __init__(self, cfg: TrainerConfig):
        self.cfg = cfg
        (self.x, self.y), (self.xt, self.yt) = _make_blobs(cfg)
        shard = len(self.x) // cfg.n_clients
        self.shards = [
            (self.x[i * shard : (i + 1) * shard], self.y[i * shard : (i + 1) * shard])
            for i in range(cfg.n_clients)
        ]
        self.weights = np.zeros(cfg.n_features + 1)
        self.accuracies: list[float] = []

    def _local_update(self, shard_x, shard_y) -> np.ndarray:
        w = self.weights.copy()
        xb = np.hstack([shard_x, np.ones((len(shard_x), 1))])
        for _ in range(self.cfg.local_steps):
            pred = _sigmoid(xb @ w)
            grad = xb.T @ (pred - shard_y) / len(shard_y)
            w -= self.cfg.lr * grad
        return w - self.weights

    def updates_for_epoch(self, epoch: int) -> list[np.ndarray]:
        return [self._local_update(sx, sy) for sx, sy in self.shards]

    def receive_aggregate(self, epoch: int, m0: np.ndarray) -> None:
        self.weights = self.weights + m0 / self.cfg.n_clients
        self.accuracies.append(self.test_accuracy())

    def test_accuracy(self) -> float:
        xb = np.hstack([self.xt, np.ones((len(self.xt), 1))])
        pred = (xb @ self.weights) > 0
        return float(np.mean(pred == self.yt))


def toy_fedavg(
    trainer_cfg: TrainerConfig, mode: str = "plain", master_seed: int = 0
) -> list[float]:
    """Per-epoch held-out accuracy for plain or fully masked aggregation."""
    trainer = _FedAvgTrainer(trainer_cfg)
    if mode == "plain":
        for epoch in range(trainer_cfg.epochs):
            updates = trainer.updates_for_epoch(epoch)
            trainer.receive_aggregate(epoch, np.sum(updates, axis=0))
        return trainer.accuracies
    if mode != "secure":
        raise ValueError(f"unknown mode {mode!r}; use 'plain' or 'secure'")
    config = protocol.make_session_config(
        n_clients=trainer_cfg.n_clients,
        model_size=trainer_cfg.n_features + 1,
        epochs=trainer_cfg.epochs,
        tau=trainer_cfg.tau,
        setting=trainer_cfg.setting,
        m_min=trainer_cfg.m_min,
        m_max=trainer_cfg.m_max,
        crs_seed=master_seed,
    )
    run_session(config, trainer, master_seed=master_seed, keep_payloads=False, min_parties=1)
    return trainer.accuracies


# ---------------------------------------------------------------------------
# Benchmarks
# ---------------------------------------------------------------------------

BENCH_COLUMNS = [
    "setting",
    "model_size",
    "n_clients",
    "tau",
    "repeats",
    "mask_expand_ms",
    "msa_client_keygen_ms",
    "msa_client_enc_ms",
    "msa_client_pks_ms",
    "msa_client_dec_ms",
    "msa_client_total_ms",
    "msa_server_total_ms",
    "hma_upload_bytes",
    "msa_round2_upload_bytes",
]


def _median_ms(fn: Callable[[], object], repeats: int) -> float:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1000.0)
    return float(np.median(times))


def default_repeats(model_size: int) -> int:
    if model_size <= 10_000:
        return 30
    if model_size <= 100_000:
        return 5
    return 3


def bench_mask_expand(setting: str, model_size: int, repeats: int | None = None, seed: int = 0) -> tuple[float, int]:
    """Median wall time of one full mask expansion (matrix derived on the fly)."""
    crs = hashlib.blake2b(b"bench" + seed.to_bytes(4, "little"), digest_size=32).digest()
    params = shprg.params_for_setting(setting, crs)
    rng = np.random.default_rng(seed)
    s = shprg.sample_seed(params, rng)
    reps = repeats or default_repeats(model_size)
    ms = _median_ms(lambda: shprg.expand(s, model_size, params), reps)
    return ms, reps


def bench_msa_phases(
    setting: str, n_clients: int, tau: int, repeats: int = 10, seed: int = 0
) -> dict[str, float]:
    """Median per-phase client and server times for one agreement run."""
    config = protocol.make_session_config(
        n_clients=n_clients, model_size=1, epochs=1, tau=tau, setting=setting, crs_seed=seed
    )
    rp = config.ring_params
    crs_a = config.ring_crs()
    rng = np.random.default_rng(seed)
    count = config.ciphertexts_per_client
    # timing depends only on the ciphertext count, so random payloads suffice
    arrays = [rng.integers(0, 1 << 64, size=rp.n, dtype=np.uint64) for _ in range(count)]

    results: dict[str, list[float]] = {k: [] for k in ("keygen", "enc", "pks", "dec", "server")}
    for _ in range(repeats):
        t0 = time.perf_counter()
        sk, pk = bfv.keygen(rp, crs_a, rng, config.sampler)
        t1 = time.perf_counter()
        others = [bfv.keygen(rp, crs_a, rng, config.sampler) for _ in range(n_clients - 1)]
        rkp = mkbfv.gen_reenc_keypair(rp, crs_a, rng, config.sampler)
        t2 = time.perf_counter()
        cpk = mkbfv.combine_public_keys([pk] + [o[1] for o in others])
        t3 = time.perf_counter()
        cts = [bfv.encrypt(cpk, bfv.encode(a, rp), rng, config.sampler) for a in arrays]
        t4 = time.perf_counter()
        other_cts = [
            [bfv.encrypt(cpk, bfv.encode(a, rp), rng, config.sampler) for a in arrays]
            for _ in range(n_clients - 1)
        ]
        t5 = time.perf_counter()
        agg = [bfv.sum_ciphertexts([cts[i]] + [oc[i] for oc in other_cts]) for i in range(count)]
        t6 = time.perf_counter()
        shares = [mkbfv.pks_share(sk, ct, rkp.pk_r, rng, 0, config.sampler) for ct in agg]
        t7 = time.perf_counter()
        other_shares = [
            [mkbfv.pks_share(o[0], ct, rkp.pk_r, rng, j + 1, config.sampler) for ct in agg]
            for j, o in enumerate(others)
        ]
        t8 = time.perf_counter()
        merged = [
            mkbfv.pks_merge(ct, [shares[i]] + [os[i] for os in other_shares], range(n_clients))
            for i, ct in enumerate(agg)
        ]
        t9 = time.perf_counter()
        for ct in merged:
            bfv.decrypt(rkp.sk_r, ct)
        t10 = time.perf_counter()
        results["keygen"].append((t1 - t0) * 1e3)
        results["enc"].append((t4 - t3) * 1e3)
        results["pks"].append((t7 - t6) * 1e3)
        results["dec"].append((t10 - t9) * 1e3)
        results["server"].append(((t3 - t2) + (t6 - t5) + (t9 - t8)) * 1e3)
    return {k: float(np.median(v)) for k, v in results.items()}


def bench(
    settings: Sequence[str] = ("A", "B", "C", "D"),
    sizes: Sequence[int] = (10_000, 100_000, 1_000_000),
    n_clients: int = 10,
    tau: int = 100,
    repeats: int | None = None,
    msa_repeats: int = 10,
    seed: int = 0,
) -> list[dict]:
    """Grid of mask-expansion and agreement-phase timings; one dict per cell."""
    rows = []
    msa_cache: dict[str, dict[str, float]] = {}
    for setting in settings:
        info = shprg.SETTINGS[setting]
        if setting not in msa_cache:
            msa_cache[setting] = bench_msa_phases(setting, n_clients, tau, msa_repeats, seed)
        msa = msa_cache[setting]
        for m in sizes:
            expand_ms, reps = bench_mask_expand(setting, m, repeats, seed)
            width = protocol.mask_byte_width(info.p)
            n_ring = ring.default_ring_params().n
            ct_bytes = bfv.Ciphertext.serialized_size(ring.default_ring_params())
            count = codec.ciphertext_count(info.mu, tau, n_ring)
            rows.append(
                {
                    "setting": setting,
                    "model_size": m,
                    "n_clients": n_clients,
                    "tau": tau,
                    "repeats": reps,
                    "mask_expand_ms": round(expand_ms, 3),
                    "msa_client_keygen_ms": round(msa["keygen"], 3),
                    "msa_client_enc_ms": round(msa["enc"], 3),
                    "msa_client_pks_ms": round(msa["pks"], 3),
                    "msa_client_dec_ms": round(msa["dec"], 3),
                    "msa_client_total_ms": round(
                        msa["keygen"] + msa["enc"] + msa["pks"] + msa["dec"], 3
                    ),
                    "msa_server_total_ms": round(msa["server"], 3),
                    "hma_upload_bytes": m * width + protocol.ENVELOPE_BYTES,
                    "msa_round2_upload_bytes": 2
                    + count * ct_bytes
                    + protocol.ENVELOPE_BYTES,
                }
            )
    return rows


def bench_to_csv(rows: Sequence[dict]) -> str:
    import csv
    import io

    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=BENCH_COLUMNS)
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()
