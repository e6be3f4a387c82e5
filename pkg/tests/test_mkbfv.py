"""Compact multi-key layer: joint keys, key switching, re-encryption checks."""

import numpy as np
import pytest

from secureagg import bfv, mkbfv, ring


def random_plaintext(params, rng):
    return bfv.Plaintext(rng.integers(0, params.t, size=params.n, dtype=np.uint64), params.t)


def run_pipeline(n_parties, default_params, default_crs, seed):
    """Full pipeline: keygen -> cpk -> enc -> agg -> key switch -> decrypt."""
    rng = np.random.default_rng(seed)
    keys = [bfv.keygen(default_params, default_crs, rng) for _ in range(n_parties)]
    cpk = mkbfv.combine_public_keys([pk for _, pk in keys])
    ms = [random_plaintext(default_params, rng) for _ in range(n_parties)]
    agg = bfv.sum_ciphertexts([bfv.encrypt(cpk, m, rng) for m in ms])
    rkp = mkbfv.gen_reenc_keypair(default_params, default_crs, rng)
    shares = [mkbfv.pks_share(keys[i][0], agg, rkp.pk_r, rng, i) for i in range(n_parties)]
    switched = mkbfv.pks_merge(agg, shares, range(n_parties))
    got = bfv.decrypt(rkp.sk_r, switched)
    want = sum(m.coeffs.astype(object) for m in ms) % default_params.t
    return got, want, keys, agg, switched


# ---------------------------------------------------------------------------
# Common public key
# ---------------------------------------------------------------------------


def test_single_party_degenerates_to_plain_bfv(default_params, default_crs, rng):
    sk, pk = bfv.keygen(default_params, default_crs, rng)
    cpk = mkbfv.combine_public_keys([pk])
    assert cpk.to_bytes() == pk.to_bytes()
    m = random_plaintext(default_params, rng)
    assert np.array_equal(bfv.decrypt(sk, bfv.encrypt(cpk, m, rng)).coeffs, m.coeffs)


def test_joint_secret_decrypts_cpk_encryption(default_params, default_crs, rng):
    keys = [bfv.keygen(default_params, default_crs, rng) for _ in range(3)]
    cpk = mkbfv.combine_public_keys([pk for _, pk in keys])
    joint = bfv.SecretKey(ring.sum_elements([sk.s for sk, _ in keys]))
    m = random_plaintext(default_params, rng)
    assert np.array_equal(bfv.decrypt(joint, bfv.encrypt(cpk, m, rng)).coeffs, m.coeffs)


def test_combine_is_order_invariant(default_params, default_crs, rng):
    pks = [bfv.keygen(default_params, default_crs, rng)[1] for _ in range(4)]
    base = mkbfv.combine_public_keys(pks).to_bytes()
    assert mkbfv.combine_public_keys(pks[::-1]).to_bytes() == base
    assert mkbfv.combine_public_keys([pks[2], pks[0], pks[3], pks[1]]).to_bytes() == base


def test_combine_rejects_mismatched_reference(default_params, default_crs, rng):
    _, pk1 = bfv.keygen(default_params, default_crs, rng)
    other_crs = ring.sample_uniform(default_params, rng).to_ntt()
    _, pk2 = bfv.keygen(default_params, other_crs, rng)
    with pytest.raises(ValueError, match="different reference polynomial"):
        mkbfv.combine_public_keys([pk1, pk2])


def test_combine_rejects_empty():
    with pytest.raises(ValueError, match="at least one"):
        mkbfv.combine_public_keys([])


# ---------------------------------------------------------------------------
# Key switch shares
# ---------------------------------------------------------------------------


def test_share_with_zero_randomness_is_s_times_c1(default_params, default_crs, rng):
    sk, pk = bfv.keygen(default_params, default_crs, rng)
    ct = bfv.encrypt(pk, random_plaintext(default_params, rng), rng)
    rkp = mkbfv.gen_reenc_keypair(default_params, default_crs, rng)
    zero = ring.zero(default_params, is_ntt=True)
    share = mkbfv._pks_share_parts(sk, ct, rkp.pk_r, zero, zero, zero, party=0)
    assert share.h0 == ring.negacyclic_mul(sk.s, ct.c1.to_ntt())
    assert share.h1 == zero


def test_shares_differ_across_rng_seeds(default_params, default_crs, rng):
    sk, pk = bfv.keygen(default_params, default_crs, rng)
    ct = bfv.encrypt(pk, random_plaintext(default_params, rng), rng)
    rkp = mkbfv.gen_reenc_keypair(default_params, default_crs, rng)
    s1 = mkbfv.pks_share(sk, ct, rkp.pk_r, np.random.default_rng(1), 0)
    s2 = mkbfv.pks_share(sk, ct, rkp.pk_r, np.random.default_rng(2), 0)
    assert s1.to_bytes() != s2.to_bytes()


def test_share_serialization_roundtrip(default_params, default_crs, rng):
    sk, pk = bfv.keygen(default_params, default_crs, rng)
    ct = bfv.encrypt(pk, random_plaintext(default_params, rng), rng)
    rkp = mkbfv.gen_reenc_keypair(default_params, default_crs, rng)
    share = mkbfv.pks_share(sk, ct, rkp.pk_r, rng, 7)
    back, used = mkbfv.KeySwitchShare.from_bytes(share.to_bytes(), default_params)
    assert used == len(share.to_bytes())
    assert back.party == 7
    assert back.h0 == share.h0 and back.h1 == share.h1


# ---------------------------------------------------------------------------
# Merge
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("n_parties", [1, 2, 3])
def test_pipeline_matches_integer_oracle(default_params, default_crs, n_parties):
    got, want, *_ = run_pipeline(n_parties, default_params, default_crs, seed=n_parties)
    assert np.array_equal(got.coeffs.astype(object), want)


def test_merge_is_order_invariant(default_params, default_crs, rng):
    keys = [bfv.keygen(default_params, default_crs, rng) for _ in range(3)]
    cpk = mkbfv.combine_public_keys([pk for _, pk in keys])
    agg = bfv.sum_ciphertexts(
        [bfv.encrypt(cpk, random_plaintext(default_params, rng), rng) for _ in range(3)]
    )
    rkp = mkbfv.gen_reenc_keypair(default_params, default_crs, rng)
    shares = [mkbfv.pks_share(keys[i][0], agg, rkp.pk_r, rng, i) for i in range(3)]
    a = mkbfv.pks_merge(agg, shares, range(3))
    b = mkbfv.pks_merge(agg, shares[::-1], range(3))
    assert a.to_bytes() == b.to_bytes()


def test_merge_rejects_missing_and_duplicate_parties(default_params, default_crs, rng):
    keys = [bfv.keygen(default_params, default_crs, rng) for _ in range(3)]
    cpk = mkbfv.combine_public_keys([pk for _, pk in keys])
    agg = bfv.sum_ciphertexts(
        [bfv.encrypt(cpk, random_plaintext(default_params, rng), rng) for _ in range(3)]
    )
    rkp = mkbfv.gen_reenc_keypair(default_params, default_crs, rng)
    shares = [mkbfv.pks_share(keys[i][0], agg, rkp.pk_r, rng, i) for i in range(3)]
    with pytest.raises(ValueError, match="missing key-switch share from party 2"):
        mkbfv.pks_merge(agg, shares[:2], range(3))
    with pytest.raises(ValueError, match="duplicate key-switch share from party 0"):
        mkbfv.pks_merge(agg, shares + [shares[0]], range(3))
    with pytest.raises(ValueError, match="unregistered party"):
        mkbfv.pks_merge(agg, shares, range(2))


def test_compactness_ciphertext_size_independent_of_parties(default_params, default_crs):
    sizes = set()
    for n_parties in (1, 2, 3):
        _, _, _, agg, switched = run_pipeline(n_parties, default_params, default_crs, seed=9)
        sizes.add(len(agg.to_bytes()))
        sizes.add(len(switched.to_bytes()))
    assert sizes == {bfv.Ciphertext.serialized_size(default_params)}


def test_single_party_secret_cannot_decrypt_aggregate(default_params, default_crs):
    got, want, keys, agg, _ = run_pipeline(3, default_params, default_crs, seed=31)
    solo = bfv.decrypt(keys[0][0], agg)
    mismatch = np.mean(solo.coeffs.astype(object) != want)
    assert mismatch > 0.99


# ---------------------------------------------------------------------------
# Re-encryption key validation
# ---------------------------------------------------------------------------


def test_verify_reenc_fresh_pair(default_params, default_crs, rng):
    kp = mkbfv.gen_reenc_keypair(default_params, default_crs, rng)
    assert mkbfv.verify_reenc(kp, rng)


def test_verify_reenc_rejects_mismatched_and_tampered_keys(default_params, default_crs):
    rng = np.random.default_rng(5150)
    base = mkbfv.gen_reenc_keypair(default_params, default_crs, rng)
    tamper_rng = np.random.default_rng(5151)
    for trial in range(1000):
        wrong_sk, _ = bfv.keygen(default_params, default_crs, rng)
        mixed = mkbfv.ReEncKeyPair(wrong_sk, base.pk_r)
        assert not mkbfv.verify_reenc(mixed, rng), f"mismatched key verified on trial {trial}"

        # one-byte corruption is caught either at deserialization or by the probe
        raw = bytearray(base.pk_r.p0.to_bytes())
        pos = 6 + int(tamper_rng.integers(0, len(raw) - 6))
        raw[pos] ^= 1 << int(tamper_rng.integers(0, 8))
        try:
            p0, _ = ring.RingElement.from_bytes(bytes(raw), default_params)
        except ValueError:
            continue
        tampered = mkbfv.ReEncKeyPair(base.sk_r, bfv.PublicKey(p0, base.pk_r.p1))
        assert not mkbfv.verify_reenc(tampered, rng), f"tampered key verified on trial {trial}"
