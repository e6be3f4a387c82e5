"""Party state machines, message schema, and the epoch schedule.

Two protocols compose a training session:

* **seed agreement** (3 communication rounds): clients generate fresh BFV
  key pairs against the session reference polynomial and upload public-key
  shares; the server combines them into a common public key.  Clients
  encrypt tau epochs' worth of masking seeds under it; the server folds the
  ciphertexts and broadcasts the encrypted seed sum.  Clients then produce
  key-switch shares that re-encrypt the sum toward a re-encryption key the
  leader client distributed over a secure channel, and decrypt the result to
  learn the demasking seeds.  The server never sees a seed or a usable key.

* **masked aggregation** (1 round per epoch): clients upload quantized
  updates hidden under masks expanded from that epoch's seed; the server
  adds them mod p and broadcasts the masked sum, which every client unmasks
  with the epoch's demasking seed.

A session interleaves them as: one agreement run before epochs 1, tau+1,
2*tau+1, ..., giving T + 3*ceil(T/tau) rounds for T epochs.

State machines are single-threaded and deterministic given their rng
streams; the driver owns all scheduling.  Within a round, messages are
accepted in any arrival order (sorted internally by sender).
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import bfv, codec, mkbfv, ring, shprg

SERVER = -1  # party id of the aggregator; clients are 0..N-1

_ENVELOPE = struct.Struct("<B3xIII")  # tag, sender, run id, epoch
ENVELOPE_BYTES = _ENVELOPE.size


class ProtocolError(Exception):
    """A protocol violation or abort; carries the phase it happened in."""

    def __init__(self, message: str, phase: str = ""):
        super().__init__(message)
        self.phase = phase


# ---------------------------------------------------------------------------
# Session configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SessionConfig:
    """Everything every party must agree on before a session starts."""

    n_clients: int
    model_size: int
    epochs: int
    tau: int
    w: int
    m_min: float
    m_max: float
    shprg_params: shprg.ShprgParams
    ring_params: ring.RingParams
    sampler: ring.SamplerConfig
    leader: int = 0
    crs: bytes = b""

    def validate(self, min_parties: int = 2) -> None:
        label = self.shprg_params.setting_label
        if label is not None and label in shprg.SETTINGS:
            cap = shprg.SETTINGS[label].max_clients
            if self.n_clients > cap:
                raise ValueError(
                    f"{self.n_clients} clients exceeds the maximum number of clients "
                    f"({cap}) for setting {label}"
                )
        qp_bound = self.n_clients * ((1 << self.w) - 1)
        if self.shprg_params.p <= qp_bound:
            raise ValueError(
                f"p = {self.shprg_params.p} <= N(2^w - 1) = {qp_bound}: aggregate would overflow"
            )
        codec.check_modulus_compat(self.shprg_params.q, self.ring_params.t)
        if self.shprg_params.mu * self.tau <= 0:
            raise ValueError("mu * tau must be positive")
        if self.n_clients < min_parties:
            raise ValueError(f"need at least {min_parties} parties, got {self.n_clients}")
        if not 0 <= self.leader < self.n_clients:
            raise ValueError(f"leader id {self.leader} out of range")
        if self.epochs < 1:
            raise ValueError("need at least one epoch")

    @property
    def quant_params(self) -> codec.QuantParams:
        return codec.QuantParams(
            w=self.w,
            m_min=self.m_min,
            m_max=self.m_max,
            n_parties=self.n_clients,
            p=self.shprg_params.p,
        )

    @property
    def mask_width(self) -> int:
        return mask_byte_width(self.shprg_params.p)

    @property
    def ciphertexts_per_client(self) -> int:
        return codec.ciphertext_count(self.shprg_params.mu, self.tau, self.ring_params.n)

    def ring_crs(self) -> ring.RingElement:
        """The shared uniform reference polynomial, derived from the session crs."""
        rng = np.random.default_rng(
            np.random.SeedSequence(list(hashlib.blake2b(self.crs + b"ring-a").digest()[:16]))
        )
        return ring.sample_uniform(self.ring_params, rng).to_ntt()


def make_session_config(
    n_clients: int,
    model_size: int,
    epochs: int,
    tau: int = 100,
    setting: str = "A",
    w: int = 16,
    m_min: float = -1.0,
    m_max: float = 1.0,
    p: int | None = None,
    leader: int = 0,
    crs_seed: int = 0,
    ring_n: int = 4096,
    ring_log2_q: int = 109,
    ring_t: int = 1 << 64,
) -> SessionConfig:
    """Build a SessionConfig from a named mask-generator setting plus overrides."""
    crs = hashlib.blake2b(
        b"session-crs" + int(crs_seed).to_bytes(8, "little", signed=True), digest_size=32
    ).digest()
    sp = shprg.params_for_setting(setting, crs, p_override=p)
    rp = ring.default_ring_params(ring_n, ring_log2_q, ring_t)
    return SessionConfig(
        n_clients=n_clients,
        model_size=model_size,
        epochs=epochs,
        tau=tau,
        w=w,
        m_min=m_min,
        m_max=m_max,
        shprg_params=sp,
        ring_params=rp,
        sampler=ring.SamplerConfig(),
        leader=leader,
        crs=crs,
    )


# ---------------------------------------------------------------------------
# Value packing for masked vectors
# ---------------------------------------------------------------------------


def mask_byte_width(p: int) -> int:
    """Bytes per masked entry on the wire: ceil(log2(p) / 8)."""
    return math.ceil((p.bit_length() - 1) / 8)


def pack_values(values: np.ndarray, width: int) -> bytes:
    """Little-endian fixed-width packing of values < 2**(8*width)."""
    as64 = np.ascontiguousarray(values, dtype="<u8")
    return as64.view(np.uint8).reshape(-1, 8)[:, :width].tobytes()


def unpack_values(data: bytes, width: int) -> np.ndarray:
    trimmed = np.frombuffer(data, dtype=np.uint8).reshape(-1, width)
    full = np.zeros((trimmed.shape[0], 8), dtype=np.uint8)
    full[:, :width] = trimmed
    return full.view("<u8").reshape(-1).astype(np.uint64)


# ---------------------------------------------------------------------------
# Messages
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Msg:
    sender: int
    run_id: int
    epoch: int

    TAG = 0
    SECURE = False  # True: client-to-client channel the server cannot observe

    def payload_bytes(self) -> bytes:
        raise NotImplementedError

    def to_bytes(self) -> bytes:
        return (
            _ENVELOPE.pack(self.TAG, self.sender & 0xFFFFFFFF, self.run_id, self.epoch)
            + self.payload_bytes()
        )


def _pack_ct_list(cts: Sequence[bfv.Ciphertext]) -> bytes:
    return struct.pack("<H", len(cts)) + b"".join(ct.to_bytes() for ct in cts)


def _unpack_ct_list(data: bytes, params: ring.RingParams) -> tuple[bfv.Ciphertext, ...]:
    (count,) = struct.unpack_from("<H", data, 0)
    cts = []
    off = 2
    for _ in range(count):
        ct, used = bfv.Ciphertext.from_bytes(data[off:], params)
        cts.append(ct)
        off += used
    return tuple(cts)


@dataclass(frozen=True)
class PkShare(_Msg):
    pk: bfv.PublicKey = None
    TAG = 1

    def payload_bytes(self) -> bytes:
        return self.pk.to_bytes()


@dataclass(frozen=True)
class CpkBroadcast(_Msg):
    cpk: mkbfv.CommonPublicKey = None
    TAG = 2

    def payload_bytes(self) -> bytes:
        return self.cpk.to_bytes()


@dataclass(frozen=True)
class ReEncKeyDeliver(_Msg):
    receiver: int = -1
    keypair: mkbfv.ReEncKeyPair = None
    TAG = 3
    SECURE = True

    def payload_bytes(self) -> bytes:
        kp = self.keypair
        return kp.sk_r.s.to_bytes() + kp.pk_r.to_bytes()


@dataclass(frozen=True)
class SeedCiphertexts(_Msg):
    cts: tuple = ()
    TAG = 4

    def payload_bytes(self) -> bytes:
        return _pack_ct_list(self.cts)


@dataclass(frozen=True)
class AggCiphertextBroadcast(_Msg):
    cts: tuple = ()
    TAG = 5

    def payload_bytes(self) -> bytes:
        return _pack_ct_list(self.cts)


@dataclass(frozen=True)
class KeySwitchShareMsg(_Msg):
    shares: tuple = ()
    TAG = 6

    def payload_bytes(self) -> bytes:
        return struct.pack("<H", len(self.shares)) + b"".join(s.to_bytes() for s in self.shares)


@dataclass(frozen=True)
class ReEncCtBroadcast(_Msg):
    cts: tuple = ()
    TAG = 7

    def payload_bytes(self) -> bytes:
        return _pack_ct_list(self.cts)


@dataclass(frozen=True)
class MaskedUpload(_Msg):
    values: np.ndarray = None
    width: int = 3
    TAG = 8

    def payload_bytes(self) -> bytes:
        return pack_values(self.values, self.width)


@dataclass(frozen=True)
class MaskedAggBroadcast(_Msg):
    values: np.ndarray = None
    width: int = 3
    TAG = 9

    def payload_bytes(self) -> bytes:
        return pack_values(self.values, self.width)


MESSAGE_TYPES = {
    cls.TAG: cls
    for cls in (
        PkShare,
        CpkBroadcast,
        ReEncKeyDeliver,
        SeedCiphertexts,
        AggCiphertextBroadcast,
        KeySwitchShareMsg,
        ReEncCtBroadcast,
        MaskedUpload,
        MaskedAggBroadcast,
    )
}

# message types a blind server is allowed to receive
SERVER_SAFE_TAGS = {PkShare.TAG, SeedCiphertexts.TAG, KeySwitchShareMsg.TAG, MaskedUpload.TAG}


def parse_message(data: bytes, config: SessionConfig):
    """Reconstruct a message object from its wire form (for replay/audit)."""
    tag, sender32, run_id, epoch = _ENVELOPE.unpack_from(data, 0)
    sender = SERVER if sender32 == 0xFFFFFFFF else sender32
    body = data[ENVELOPE_BYTES:]
    rp = config.ring_params
    if tag == PkShare.TAG:
        pk, _ = bfv.PublicKey.from_bytes(body, rp)
        return PkShare(sender, run_id, epoch, pk)
    if tag == CpkBroadcast.TAG:
        pk, _ = bfv.PublicKey.from_bytes(body, rp)
        return CpkBroadcast(sender, run_id, epoch, mkbfv.CommonPublicKey(pk.p0, pk.p1))
    if tag == ReEncKeyDeliver.TAG:
        s, off = ring.RingElement.from_bytes(body, rp)
        pk, _ = bfv.PublicKey.from_bytes(body[off:], rp)
        return ReEncKeyDeliver(sender, run_id, epoch, -1, mkbfv.ReEncKeyPair(bfv.SecretKey(s), pk))
    if tag in (SeedCiphertexts.TAG, AggCiphertextBroadcast.TAG, ReEncCtBroadcast.TAG):
        cts = _unpack_ct_list(body, rp)
        cls = MESSAGE_TYPES[tag]
        return cls(sender, run_id, epoch, cts)
    if tag == KeySwitchShareMsg.TAG:
        (count,) = struct.unpack_from("<H", body, 0)
        off = 2
        shares = []
        for _ in range(count):
            sh, used = mkbfv.KeySwitchShare.from_bytes(body[off:], rp)
            shares.append(sh)
            off += used
        return KeySwitchShareMsg(sender, run_id, epoch, tuple(shares))
    if tag in (MaskedUpload.TAG, MaskedAggBroadcast.TAG):
        width = mask_byte_width(config.shprg_params.p)
        vals = unpack_values(body, width)
        cls = MESSAGE_TYPES[tag]
        return cls(sender, run_id, epoch, vals, width)
    raise ValueError(f"unknown message tag {tag}")


# ---------------------------------------------------------------------------
# Client state machine
# ---------------------------------------------------------------------------


class ClientState:
    """One data owner: key material, seed banks, and phase bookkeeping.

    The driver calls :meth:`start_msa` / :meth:`start_epoch` to open a round
    and :meth:`step` with the round's inbound messages.  Consumed seeds are
    erased from the banks; when ``retain_audit_log`` is set, copies go to
    ``audit_log`` so the harness can verify freshness and leakage claims.
    """

    def __init__(
        self,
        client_id: int,
        config: SessionConfig,
        rng: np.random.Generator,
        matrix_cache: shprg.MatrixCache | None = None,
        retain_audit_log: bool = True,
    ):
        self.id = client_id
        self.config = config
        self.rng = rng
        self.cache = matrix_cache
        self.retain_audit_log = retain_audit_log
        self.phase = "idle"
        self.run_id = -1
        self.epoch = -1
        self.sk: bfv.SecretKey | None = None
        self.cpk: mkbfv.CommonPublicKey | None = None
        self.reenc: mkbfv.ReEncKeyPair | None = None
        self.seed_bank: dict[int, shprg.Seed] = {}
        self.demask_bank: dict[int, shprg.Seed] = {}
        self.results: dict[int, np.ndarray] = {}
        self.clip_counts: dict[int, int] = {}
        self.audit_log: dict[int, tuple[shprg.Seed, shprg.Seed]] = {}
        self.last_raw_aggregate: np.ndarray | None = None  # pre-dequantization sum
        self._crs_a = config.ring_crs()

    @property
    def is_leader(self) -> bool:
        return self.id == self.config.leader

    # -- seed agreement ------------------------------------------------------

    def start_msa(self, run_id: int) -> list[_Msg]:
        """Open an agreement run: fresh keys, fresh seeds, emit the pk share."""
        if self.phase != "idle":
            raise ProtocolError(f"client {self.id} asked to start a run in phase {self.phase}", "msa")
        cfg = self.config
        self.run_id = run_id
        base = run_id * cfg.tau
        for t in range(cfg.tau):
            self.seed_bank[base + t] = shprg.sample_seed(cfg.shprg_params, self.rng)
        self.sk, pk = bfv.keygen(cfg.ring_params, self._crs_a, self.rng, cfg.sampler)
        out: list[_Msg] = [PkShare(self.id, run_id, base, pk)]
        if self.is_leader:
            self.reenc = mkbfv.gen_reenc_keypair(cfg.ring_params, self._crs_a, self.rng, cfg.sampler)
            for other in range(cfg.n_clients):
                if other != self.id:
                    out.append(ReEncKeyDeliver(self.id, run_id, base, other, self.reenc))
        self.phase = "msa-await-cpk"
        return out

    def start_epoch(self, epoch: int, update: np.ndarray) -> list[_Msg]:
        """Quantize and mask this epoch's update; emit the upload."""
        if self.phase != "idle":
            raise ProtocolError(f"client {self.id} asked to start an epoch in phase {self.phase}", "hma")
        if epoch not in self.demask_bank:
            raise ProtocolError(
                f"client {self.id} has no demasking seed for epoch {epoch}", "hma"
            )
        cfg = self.config
        if len(update) != cfg.model_size:
            raise ProtocolError(
                f"client {self.id} got an update of length {len(update)}, expected {cfg.model_size}",
                "hma",
            )
        qp = cfg.quant_params
        self.epoch = epoch
        self.clip_counts[epoch] = codec.clipped_entry_count(update, qp)
        x = codec.quantize(update, qp)
        g = shprg.expand(self.seed_bank[epoch], cfg.model_size, cfg.shprg_params, self.cache)
        y = codec.mask(x, g, cfg.shprg_params.p)
        self.phase = "hma-await-agg"
        return [MaskedUpload(self.id, self.run_id, epoch, y, mask_byte_width(cfg.shprg_params.p))]

    def step(self, inbox: Sequence[_Msg]) -> list[_Msg]:
        handler = {
            "msa-await-cpk": self._on_key_setup,
            "msa-await-agg": self._on_agg_ct,
            "msa-await-reenc": self._on_reenc_ct,
            "hma-await-agg": self._on_masked_agg,
        }.get(self.phase)
        if handler is None:
            raise ProtocolError(f"client {self.id} stepped in phase {self.phase}", self.phase)
        return handler(sorted(inbox, key=lambda m: m.sender))

    def _expect_one(self, inbox: Sequence[_Msg], cls, allow_key_delivery: bool = False) -> _Msg:
        picked = [m for m in inbox if isinstance(m, cls)]
        allowed = (cls, ReEncKeyDeliver) if allow_key_delivery else cls
        stray = [m for m in inbox if not isinstance(m, allowed)]
        if stray:
            raise ProtocolError(
                f"client {self.id} in phase {self.phase} got out-of-phase "
                f"{type(stray[0]).__name__}",
                self.phase,
            )
        if len(picked) != 1:
            raise ProtocolError(
                f"client {self.id} in phase {self.phase} expected one "
                f"{cls.__name__}, got {len(picked)}",
                self.phase,
            )
        return picked[0]

    def _on_key_setup(self, inbox: Sequence[_Msg]) -> list[_Msg]:
        cfg = self.config
        cpk_msg = self._expect_one(inbox, CpkBroadcast, allow_key_delivery=True)
        if not self.is_leader:
            delivered = [m for m in inbox if isinstance(m, ReEncKeyDeliver)]
            if len(delivered) != 1:
                raise ProtocolError(
                    f"client {self.id} expected the re-encryption key, got {len(delivered)} deliveries",
                    "msa-key-setup",
                )
            self.reenc = delivered[0].keypair
        if not mkbfv.verify_reenc(self.reenc, self.rng):
            raise ProtocolError(
                f"client {self.id}: re-encryption key pair failed validation", "msa-key-setup"
            )
        self.cpk = cpk_msg.cpk
        base = self.run_id * cfg.tau
        seeds = [self.seed_bank[base + t] for t in range(cfg.tau)]
        arrays = codec.pack_seeds(seeds, cfg.ring_params.n)
        cts = tuple(
            bfv.encrypt(self.cpk, bfv.encode(a, cfg.ring_params), self.rng, cfg.sampler)
            for a in arrays
        )
        self.phase = "msa-await-agg"
        return [SeedCiphertexts(self.id, self.run_id, base, cts)]

    def _on_agg_ct(self, inbox: Sequence[_Msg]) -> list[_Msg]:
        msg = self._expect_one(inbox, AggCiphertextBroadcast)
        shares = tuple(
            mkbfv.pks_share(self.sk, ct, self.reenc.pk_r, self.rng, self.id, self.config.sampler)
            for ct in msg.cts
        )
        self.phase = "msa-await-reenc"
        return [KeySwitchShareMsg(self.id, self.run_id, self.run_id * self.config.tau, shares)]

    def _on_reenc_ct(self, inbox: Sequence[_Msg]) -> list[_Msg]:
        cfg = self.config
        msg = self._expect_one(inbox, ReEncCtBroadcast)
        arrays = [bfv.decrypt(self.reenc.sk_r, ct).coeffs for ct in msg.cts]
        seeds = codec.unpack_seeds(arrays, cfg.shprg_params.mu, cfg.tau)
        base = self.run_id * cfg.tau
        for t, s in enumerate(seeds):
            # sums arrive mod t; the mask generator lives mod q, and q | t
            self.demask_bank[base + t] = shprg.reduce_seed(s.entries, cfg.shprg_params)
        self.phase = "idle"
        return []

    # -- masked aggregation ----------------------------------------------------

    def _on_masked_agg(self, inbox: Sequence[_Msg]) -> list[_Msg]:
        cfg = self.config
        msg = self._expect_one(inbox, MaskedAggBroadcast)
        epoch = self.epoch
        g0 = shprg.expand(self.demask_bank[epoch], cfg.model_size, cfg.shprg_params, self.cache)
        x0 = codec.unmask(msg.values, g0, cfg.quant_params)
        self.results[epoch] = codec.dequantize(x0, cfg.quant_params)
        self.last_raw_aggregate = x0
        if self.retain_audit_log:
            self.audit_log[epoch] = (self.seed_bank[epoch], self.demask_bank[epoch])
        del self.seed_bank[epoch]  # seeds are single-use
        del self.demask_bank[epoch]
        self.phase = "idle"
        return []


# ---------------------------------------------------------------------------
# Server state machine
# ---------------------------------------------------------------------------


class ServerState:
    """The aggregator: folds uploads, never holds seeds or secret keys.

    By construction this class has no fields for seeds, secret keys, or
    unmasked updates; everything it stores came in over the star topology.
    """

    def __init__(self, config: SessionConfig):
        self.config = config
        self.phase = "idle"
        self.run_id = -1
        self.epoch = -1
        self._agg_cts: tuple | None = None

    def expect(self, phase: str, run_id: int = -1, epoch: int = -1) -> None:
        """The driver announces what traffic the next round carries."""
        self.phase = phase
        self.run_id = run_id
        self.epoch = epoch

    def step(self, inbox: Sequence[_Msg]) -> list[_Msg]:
        inbox = sorted(inbox, key=lambda m: m.sender)
        self._check_complete(inbox)
        if self.phase == "msa-pk-shares":
            self._require(inbox, PkShare)
            cpk = mkbfv.combine_public_keys([m.pk for m in inbox])
            self.phase = "idle"
            return [CpkBroadcast(SERVER, self.run_id, self.epoch, cpk)]
        if self.phase == "msa-ciphertexts":
            self._require(inbox, SeedCiphertexts)
            count = self.config.ciphertexts_per_client
            for m in inbox:
                if len(m.cts) != count:
                    raise ProtocolError(
                        f"client {m.sender} uploaded {len(m.cts)} ciphertexts, expected {count}",
                        self.phase,
                    )
            agg = tuple(
                bfv.sum_ciphertexts([m.cts[i] for m in inbox]) for i in range(count)
            )
            self._agg_cts = agg
            self.phase = "idle"
            return [AggCiphertextBroadcast(SERVER, self.run_id, self.epoch, agg)]
        if self.phase == "msa-ks-shares":
            self._require(inbox, KeySwitchShareMsg)
            parties = range(self.config.n_clients)
            merged = tuple(
                mkbfv.pks_merge(ct, [m.shares[i] for m in inbox], parties)
                for i, ct in enumerate(self._agg_cts)
            )
            self._agg_cts = None
            self.phase = "idle"
            return [ReEncCtBroadcast(SERVER, self.run_id, self.epoch, merged)]
        if self.phase == "hma-uploads":
            self._require(inbox, MaskedUpload)
            p = np.uint64(self.config.shprg_params.p)
            total = np.zeros(self.config.model_size, dtype=np.uint64)
            for m in inbox:
                total = (total + m.values) % p
            width = mask_byte_width(self.config.shprg_params.p)
            self.phase = "idle"
            return [MaskedAggBroadcast(SERVER, self.run_id, self.epoch, total, width)]
        raise ProtocolError(f"server stepped in phase {self.phase}", self.phase)

    def _require(self, inbox: Sequence[_Msg], cls) -> None:
        for m in inbox:
            if not isinstance(m, cls):
                raise ProtocolError(
                    f"server in phase {self.phase} got out-of-phase {type(m).__name__}",
                    self.phase,
                )

    def _check_complete(self, inbox: Sequence[_Msg]) -> None:
        senders = {m.sender for m in inbox}
        expected = set(range(self.config.n_clients))
        missing = expected - senders
        if missing:
            raise ProtocolError(
                f"server round incomplete: no message from client {sorted(missing)[0]}",
                self.phase,
            )
        if len(inbox) != len(senders):
            dup = max(senders, key=lambda s: sum(1 for m in inbox if m.sender == s))
            raise ProtocolError(f"duplicate message from client {dup}", self.phase)


# ---------------------------------------------------------------------------
# Round drivers
# ---------------------------------------------------------------------------


class NullBus:
    """Observer interface for traffic accounting; this one ignores everything."""

    def start_round(self, label: str) -> None:
        pass

    def send(self, msg: _Msg, receivers: Sequence[int]) -> None:
        pass


def _route_to_server(bus, server: ServerState, msgs: Iterable[_Msg]) -> list[_Msg]:
    """Record all client emissions on the bus; return the server-bound ones."""
    server_inbox = []
    for m in msgs:
        if isinstance(m, ReEncKeyDeliver):
            bus.send(m, [m.receiver])
        else:
            bus.send(m, [SERVER])
            server_inbox.append(m)
    return server_inbox


def _broadcast(bus, msg: _Msg, clients: Sequence[ClientState]) -> None:
    bus.send(msg, [c.id for c in clients])


def msa_run(
    clients: Sequence[ClientState],
    server: ServerState,
    run_id: int,
    bus: NullBus | None = None,
) -> dict[int, dict[int, shprg.Seed]]:
    """Drive one 3-round seed-agreement run; returns each client's new seeds.

    The return value is a read-only convenience for callers; the protocol
    output proper is the demask bank each client now holds.
    """
    bus = bus or NullBus()
    cfg = clients[0].config
    base = run_id * cfg.tau

    bus.start_round(f"msa-{run_id}-keys")
    server.expect("msa-pk-shares", run_id, base)
    emissions: list[_Msg] = []
    for c in clients:
        emissions.extend(c.start_msa(run_id))
    deliveries = [m for m in emissions if isinstance(m, ReEncKeyDeliver)]
    server_inbox = _route_to_server(bus, server, emissions)
    (cpk_bcast,) = server.step(server_inbox)
    _broadcast(bus, cpk_bcast, clients)

    bus.start_round(f"msa-{run_id}-encrypt")
    server.expect("msa-ciphertexts", run_id, base)
    emissions = []
    for c in clients:
        inbox: list[_Msg] = [cpk_bcast] + [d for d in deliveries if d.receiver == c.id]
        emissions.extend(c.step(inbox))
    (agg_bcast,) = server.step(_route_to_server(bus, server, emissions))
    _broadcast(bus, agg_bcast, clients)

    bus.start_round(f"msa-{run_id}-keyswitch")
    server.expect("msa-ks-shares", run_id, base)
    emissions = []
    for c in clients:
        emissions.extend(c.step([agg_bcast]))
    (reenc_bcast,) = server.step(_route_to_server(bus, server, emissions))
    _broadcast(bus, reenc_bcast, clients)
    for c in clients:
        c.step([reenc_bcast])

    return {c.id: {base + t: c.demask_bank[base + t] for t in range(cfg.tau)} for c in clients}


def hma_epoch(
    clients: Sequence[ClientState],
    server: ServerState,
    epoch: int,
    updates: Sequence[np.ndarray],
    bus: NullBus | None = None,
) -> list[np.ndarray]:
    """Drive one masked-aggregation round; returns each client's aggregate."""
    bus = bus or NullBus()
    if len(updates) != len(clients):
        raise ProtocolError(f"epoch {epoch}: {len(updates)} updates for {len(clients)} clients", "hma")
    bus.start_round(f"hma-{epoch}")
    server.expect("hma-uploads", clients[0].run_id, epoch)
    emissions: list[_Msg] = []
    for c, update in zip(clients, updates):
        emissions.extend(c.start_epoch(epoch, update))
    (agg_bcast,) = server.step(_route_to_server(bus, server, emissions))
    _broadcast(bus, agg_bcast, clients)
    for c in clients:
        c.step([agg_bcast])
    return [c.results.pop(epoch) for c in clients]


# ---------------------------------------------------------------------------
# Schedule
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PlanStep:
    kind: str  # "msa" or "hma"
    run_id: int
    epoch: int  # -1 for msa steps
    rounds: int


@dataclass(frozen=True)
class RunPlan:
    steps: tuple[PlanStep, ...]
    total_rounds: int


def schedule(config: SessionConfig, epochs: int | None = None) -> RunPlan:
    """Interleave agreement runs and epochs: one run before epochs 1, tau+1, ...

    Total communication rounds come to T + 3 * ceil(T / tau).
    """
    T = config.epochs if epochs is None else epochs
    if T < 1:
        raise ValueError("need at least one epoch")
    steps: list[PlanStep] = []
    for run_id in range(math.ceil(T / config.tau)):
        steps.append(PlanStep("msa", run_id, -1, 3))
        for t in range(run_id * config.tau, min((run_id + 1) * config.tau, T)):
            steps.append(PlanStep("hma", run_id, t, 1))
    total = sum(s.rounds for s in steps)
    assert total == T + 3 * math.ceil(T / config.tau)
    return RunPlan(tuple(steps), total)
