"""Simulator: accounting exactness, determinism, audits, trainer, bench."""

import json

import numpy as np
import pytest

from secureagg import harness, protocol


def tiny_session(n_clients=3, model_size=64, epochs=3, tau=2, seed=99, **kw):
    cfg = protocol.make_session_config(
        n_clients=n_clients, model_size=model_size, epochs=epochs, tau=tau,
        crs_seed=seed, **kw
    )
    src = harness.SyntheticUpdateSource(n_clients, model_size, seed=seed, low=-0.9, high=0.9)
    return harness.run_session(cfg, src, master_seed=seed)


# ---------------------------------------------------------------------------
# Round counts and accounting
# ---------------------------------------------------------------------------


def test_round_count_small_model():
    report, _ = tiny_session(epochs=10, tau=100, model_size=16)
    assert report.rounds_total == 10 + 3


def test_hma_upload_bytes_exact():
    report, _ = tiny_session(model_size=64)
    assert report.hma_client_upload_bytes_per_epoch == 64 * 3 + 16


def test_accounting_exactness():
    report, transcript = tiny_session()
    per_entry = sum(e.n_bytes for e in transcript.entries if not e.secure)
    per_party_up = sum(
        v["hma_up"] + v["msa_up"] for v in transcript.party_traffic().values()
    )
    assert per_entry == per_party_up == report.total_bytes
    # downloads: every receiver of every non-secure message counts once
    per_party_down = sum(
        v["hma_down"] + v["msa_down"] for v in transcript.party_traffic().values()
    )
    assert per_party_down == sum(
        e.n_bytes * len(e.receivers) for e in transcript.entries if not e.secure
    )


def test_transcript_byte_lengths_match_serialization():
    _, transcript = tiny_session()
    for e in transcript.entries:
        assert e.n_bytes == len(e.data)
        assert e.n_bytes == len(e.msg.to_bytes())


def test_msa_round2_upload_within_one_percent_of_formula():
    from secureagg import ring

    report, _ = tiny_session(tau=2)  # 1 ciphertext per client per run
    params = ring.default_ring_params()
    formula = 2 * 1 * ring.RingElement.serialized_size(params)
    measured = report.msa_round2_upload_bytes_per_client
    assert abs(measured - formula) / formula < 0.01


def test_e0_histogram_within_theorem_bound():
    report, _ = tiny_session(n_clients=3)
    assert report.e0_max_abs <= 2
    assert sum(report.error_histogram.values()) == 3 * 64  # epochs * model_size


def test_secure_channel_not_counted_in_protocol_traffic():
    report, transcript = tiny_session()
    secure_entries = [e for e in transcript.entries if e.secure]
    assert secure_entries, "leader key delivery should be on the secure channel"
    assert all(e.msg_type == "ReEncKeyDeliver" for e in secure_entries)
    server_traffic = report.per_party[str(protocol.SERVER)]
    assert server_traffic["secure_up"] == 0 and server_traffic["secure_down"] == 0


# ---------------------------------------------------------------------------
# Determinism
# ---------------------------------------------------------------------------


def test_identical_master_seed_reproduces_everything():
    rep1, tr1 = tiny_session(seed=123)
    rep2, tr2 = tiny_session(seed=123)
    assert tr1.digest_hex() == tr2.digest_hex()
    assert rep1.to_json(exclude_timings=True) == rep2.to_json(exclude_timings=True)
    for a, b in zip(tr1.entries, tr2.entries):
        assert a.data == b.data


def test_different_master_seed_changes_transcript():
    _, tr1 = tiny_session(seed=123)
    _, tr2 = tiny_session(seed=124)
    assert tr1.digest_hex() != tr2.digest_hex()


def test_synthetic_source_deterministic():
    a = harness.SyntheticUpdateSource(3, 16, seed=5).updates_for_epoch(2)
    b = harness.SyntheticUpdateSource(3, 16, seed=5).updates_for_epoch(2)
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


# ---------------------------------------------------------------------------
# Transcript dump / replay
# ---------------------------------------------------------------------------


def test_transcript_dump_roundtrip(tmp_path):
    _, transcript = tiny_session()
    path = tmp_path / "session.log"
    transcript.dump(str(path))
    records = harness.load_transcript_dump(str(path), transcript.config)
    assert len(records) == len(transcript.entries)
    for (rnd, secure, sender, receivers, msg), e in zip(records, transcript.entries):
        assert rnd == e.round_index
        assert secure == e.secure
        assert sender == e.sender
        assert receivers == e.receivers
        if not secure:
            assert msg.to_bytes() == e.data


# ---------------------------------------------------------------------------
# Colluder audits
# ---------------------------------------------------------------------------


def test_audit_server_plus_clients_reconstructs_honest_sum():
    _, transcript = tiny_session(n_clients=5, model_size=32, epochs=2, tau=2)
    report = harness.audit_colluding_view(transcript, ["server", 1, 3, 4])
    assert report.honest_clients == [0, 2]
    assert report.reconstruction_exact
    assert report.approx_within_bound
    assert report.approx_residual_max <= 1  # H - 1 with 2 honest clients
    assert report.server_structurally_blind


def test_audit_server_only_uniformity():
    _, transcript = tiny_session(n_clients=3, model_size=4096, epochs=2, tau=2)
    report = harness.audit_colluding_view(transcript, ["server"])
    assert report.honest_clients == [0, 1, 2]
    assert report.uniformity["samples"] == 3 * 4096 * 2
    assert report.uniformity["passed"]
    assert report.reconstruction_exact  # the aggregate itself is what the protocol reveals


def test_audit_empty_coalition():
    _, transcript = tiny_session()
    report = harness.audit_colluding_view(transcript, [])
    assert report.epochs_audited == []
    assert not report.reconstruction_exact
    assert report.uniformity["passed"]


def test_audit_rejects_oversized_coalition():
    _, transcript = tiny_session(n_clients=3)
    with pytest.raises(ValueError, match="N-2"):
        harness.audit_colluding_view(transcript, ["server", 0, 1])


def test_audit_client_only_coalition():
    _, transcript = tiny_session(n_clients=4, model_size=32)
    report = harness.audit_colluding_view(transcript, [0, 1])
    assert report.reconstruction_exact
    assert report.approx_within_bound


# ---------------------------------------------------------------------------
# Toy federated averaging
# ---------------------------------------------------------------------------


def test_toy_fedavg_plain_vs_secure():
    tc = harness.TrainerConfig(n_clients=4, epochs=8, tau=8, n_train=800, n_test=400)
    plain = harness.toy_fedavg(tc, "plain", master_seed=3)
    secure = harness.toy_fedavg(tc, "secure", master_seed=3)
    assert len(plain) == len(secure) == 8
    assert plain[-1] >= 0.95 and secure[-1] >= 0.95
    assert abs(plain[-1] - secure[-1]) <= 0.01


def test_toy_fedavg_single_client_matches_plain_up_to_quantization():
    tc = harness.TrainerConfig(n_clients=1, epochs=6, tau=6, n_train=400, n_test=200)
    plain = harness.toy_fedavg(tc, "plain", master_seed=4)
    secure = harness.toy_fedavg(tc, "secure", master_seed=4)
    # with one party the mask cancels exactly, so only quantization differs
    assert np.allclose(plain, secure, atol=0.005)


def test_toy_fedavg_rejects_unknown_mode():
    with pytest.raises(ValueError, match="unknown mode"):
        harness.toy_fedavg(harness.TrainerConfig(), "hybrid")


# ---------------------------------------------------------------------------
# Bench
# ---------------------------------------------------------------------------


def test_bench_rows_and_csv():
    rows = harness.bench(settings=("A",), sizes=(2000, 4000), repeats=2, msa_repeats=1)
    assert len(rows) == 2
    for row in rows:
        assert row["mask_expand_ms"] > 0
        assert row["msa_client_total_ms"] > 0
        assert set(row) == set(harness.BENCH_COLUMNS)
    csv_text = harness.bench_to_csv(rows)
    header = csv_text.splitlines()[0]
    assert header == ",".join(harness.BENCH_COLUMNS)
    assert len(csv_text.splitlines()) == 3


def test_report_json_is_valid_and_excludes_timings():
    report, _ = tiny_session()
    full = json.loads(report.to_json())
    assert "timings" in full
    stripped = json.loads(report.to_json(exclude_timings=True))
    assert "timings" not in stripped
    assert stripped["rounds_total"] == report.rounds_total
