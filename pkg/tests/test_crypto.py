from __future__ import annotations

import hashlib

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from pudding.crypto import (
    GENERATOR,
    GROUP_ORDER,
    KDF_LABELS,
    SIGNATURE_LEN,
    _ladder_scalar,
    DecryptError,
    DetPrg,
    GroupElement,
    InvalidElementError,
    InvalidScalarError,
    KdfLabelError,
    KeyPair,
    ONE,
    Scalar,
    aead_open,
    aead_seal,
    blind_public_key,
    det_prg_new,
    det_prg_next,
    dh_secret,
    exponential,
    fake_public_key,
    kdf,
    kdf_many,
    keystream,
    mac,
    mac_verify,
    montgomery_u,
    randbelow,
    sign,
    sign_blinded,
    verify,
    verify_blinded,
)

scalars = st.integers(min_value=1, max_value=GROUP_ORDER - 1).map(Scalar)
FAKE_PK_HEX = "d495a9a1f3ba3d55a5a4274cbfd4c84bd5630293157785acd3b2eff31593bebe"


# -- kdf ----------------------------------------------------------------------


def test_rfc5869_case3_oracle_agrees_with_library():
    ikm = bytes([0x0B]) * 22
    okm = bytes.fromhex(
        "8da4e775a563c18f715f802a063c5a31b8a11f5c5ee1879ec3454e5f3c738d2d9d201395faa4b61a96c8"
    )
    assert oracles.hkdf_sha256(ikm, b"", 42) == okm
    assert oracles.hkdf_by_hand(ikm, b"", 42) == okm


def test_kdf_deterministic_and_domain_separated():
    b = b"some input"
    assert kdf(b, "init key") == kdf(b, "init key")
    assert kdf(b, "init key") != kdf(b, "MAC key")
    assert len(kdf(b, "session key")) == 32


def test_kdf_surb_seed_matches_reference():
    data = bytes(range(16)) + b"alice@mail-a.example" + bytes(32)
    assert kdf(data, "surb-seed") == oracles.hkdf_sha256(data, b"surb-seed")


@given(st.binary(max_size=200), st.sampled_from(sorted(KDF_LABELS)))
def test_kdf_matches_library_hkdf(data, label):
    assert kdf(data, label) == oracles.hkdf_sha256(data, label.encode())


@given(st.binary(max_size=100), st.lists(st.sampled_from(sorted(KDF_LABELS)), min_size=1, max_size=5))
def test_kdf_many_equals_repeated_kdf(data, labels):
    assert kdf_many(data, *labels) == tuple(kdf(data, c) for c in labels)


def test_kdf_rejects_unknown_label():
    with pytest.raises(KdfLabelError):
        kdf(b"x", "not a label")


# -- stream cipher and prg -----------------------------------------------------


def test_chacha_oracle_rfc8439_block():
    key = bytes(range(32))
    nonce = bytes.fromhex("000000090000004a00000000")
    block = oracles.chacha20_block(key, 1, nonce)
    assert block[:16].hex() == "10f1e7e4d13b5915500fdd1fa32071c4"


@given(st.binary(min_size=32, max_size=32), st.integers(min_value=1, max_value=300))
@settings(max_examples=30)
def test_keystream_matches_chacha_oracle(key, n):
    assert keystream(key, n) == oracles.chacha20_stream(key, n)


def test_det_prg_determinism_and_continuity():
    seed = hashlib.sha256(b"seed").digest()
    assert DetPrg(seed).read(1024) == DetPrg(seed).read(1024)
    prg = det_prg_new(seed)
    assert det_prg_next(prg, 16) + det_prg_next(prg, 16) == det_prg_new(seed).read(32)


def test_det_prg_one_bit_seed_change_differs_early():
    for i in range(100):
        seed = hashlib.sha256(i.to_bytes(2, "big")).digest()
        flipped = bytearray(seed)
        flipped[i % 32] ^= 1 << (i % 8)
        assert DetPrg(seed).read(64) != DetPrg(bytes(flipped)).read(64)


def test_det_prg_rejects_bad_input():
    with pytest.raises(ValueError):
        DetPrg(b"short")
    with pytest.raises(ValueError):
        DetPrg(bytes(32)).read(0)


def test_randbelow_and_exponential_ranges():
    prg = DetPrg(bytes(32))
    assert all(0 <= randbelow(prg, 7) < 7 for _ in range(500))
    assert all(exponential(prg, 0.5) >= 0 for _ in range(500))


def test_exponential_mean():
    prg = DetPrg(hashlib.sha256(b"exp").digest())
    n = 100_000
    mean = sum(exponential(prg, 0.5) for _ in range(n)) / n
    assert abs(mean - 0.5) / 0.5 < 0.02


# -- group ---------------------------------------------------------------------


def test_generator_matches_oracle_base_point():
    assert GENERATOR.to_bytes() == oracles.ed_encode(oracles.BASE)


@given(scalars)
@settings(max_examples=20, deadline=None)
def test_generator_mul_matches_oracle(s):
    assert GroupElement.generator_mul(s).to_bytes() == oracles.base_mul(s.value)


@given(scalars, scalars)
@settings(max_examples=10, deadline=None)
def test_point_mul_and_add_match_oracle(a, b):
    pa = GroupElement.generator_mul(a)
    assert (pa * b).to_bytes() == oracles.point_mul(pa.to_bytes(), b.value)
    pb = GroupElement.generator_mul(b)
    expect = oracles.ed_encode(oracles.ed_add(oracles.ed_decode(pa.to_bytes()), oracles.ed_decode(pb.to_bytes())))
    assert (pa + pb).to_bytes() == expect


def test_group_element_rejects_garbage():
    with pytest.raises(InvalidElementError):
        GroupElement.from_bytes(bytes(32))
    with pytest.raises(InvalidElementError):
        GroupElement.from_bytes(b"\x01" * 31)


def test_scalar_encoding():
    with pytest.raises(ValueError):
        Scalar.from_bytes(GROUP_ORDER.to_bytes(32, "little"))
    s = Scalar(12345)
    assert Scalar.from_bytes(s.to_bytes()) == s


# -- hop secret ----------------------------------------------------------------


@given(scalars, scalars)
@settings(max_examples=25, deadline=None)
def test_dh_secret_matches_oracle_u_coordinate(x, s):
    point = GroupElement.generator_mul(x)
    assert dh_secret(point, s) == oracles.u_coordinate(oracles.point_mul(point.to_bytes(), s.value))


def test_dh_secret_is_symmetric():
    a, b = KeyPair.generate(), KeyPair.generate()
    assert dh_secret(a.pk, b.sk) == dh_secret(b.pk, a.sk)


def test_dh_secret_edge_scalars():
    # small multiples of 8 have no clamp-compatible form and take the Edwards path
    assert _ladder_scalar(Scalar(8)) is None and _ladder_scalar(Scalar(1)) is not None
    for v in (1, 2, GROUP_ORDER - 1, 8, 16):
        s = Scalar(v)
        point = GroupElement.generator_mul(Scalar(7))
        assert dh_secret(point, s) == oracles.u_coordinate(oracles.point_mul(point.to_bytes(), v))


def test_montgomery_u_matches_oracle():
    enc = GroupElement.generator_mul(Scalar(99)).to_bytes()
    assert montgomery_u(enc) == oracles.u_coordinate(enc)


# -- fake public key ------------------------------------------------------------


def test_fake_public_key_well_formed():
    fk = fake_public_key()
    assert fk == fake_public_key()
    assert oracles.in_prime_subgroup(fk.to_bytes())
    assert fk.to_bytes() != oracles.ed_encode(oracles.IDENTITY)


def test_fake_public_key_golden():
    assert fake_public_key().to_bytes().hex() == FAKE_PK_HEX
    uniform = hashlib.sha256(b"Pudding fake identity").digest()
    assert oracles.elligator2_from_uniform(uniform).hex() == FAKE_PK_HEX


def test_fake_public_key_not_small_multiple():
    fk = fake_public_key().to_bytes()
    acc = GENERATOR
    for _ in range(10_000):
        assert acc.to_bytes() != fk
        acc = acc + GENERATOR


# -- blinded signatures --------------------------------------------------------


def test_blind_identity_and_zero():
    kp = KeyPair.generate()
    assert blind_public_key(kp.pk, ONE) == kp.pk
    with pytest.raises(InvalidScalarError):
        blind_public_key(kp.pk, Scalar(0))
    with pytest.raises(InvalidScalarError):
        sign_blinded(Scalar(0), ONE, b"m")


@given(scalars, scalars)
@settings(max_examples=10, deadline=None)
def test_blind_public_key_matches_oracle(x, y):
    bpk = blind_public_key(GroupElement.generator_mul(x), y)
    assert bpk.to_bytes() == oracles.base_mul(x.value * y.value % oracles.L)


@given(scalars, scalars, st.binary(max_size=64))
@settings(max_examples=30, deadline=None)
def test_blinded_sign_roundtrip(x, y, msg):
    bpk = blind_public_key(GroupElement.generator_mul(x), y)
    assert verify_blinded(bpk, msg, sign_blinded(x, y, msg))


@given(scalars, scalars, st.binary(max_size=32))
@settings(max_examples=10, deadline=None)
def test_signature_satisfies_schnorr_equation_in_oracle(x, y, msg):
    # s*G == R + c*P computed entirely in the oracle's arithmetic
    from pudding.crypto import hash_to_scalar

    sig = sign_blinded(x, y, msg)
    r_enc, s = sig[:32], int.from_bytes(sig[32:], "little")
    pk_enc = oracles.base_mul(x.value * y.value)
    c = hash_to_scalar(b"pudding/schnorr-challenge", r_enc, pk_enc, msg).value
    rhs = oracles.ed_add(oracles.ed_decode(r_enc), oracles.ed_mul(c, oracles.ed_decode(pk_enc)))
    assert oracles.base_mul(s) == oracles.ed_encode(rhs)


def test_unblinded_signature_like_ordinary():
    kp = KeyPair.generate()
    assert verify(kp.pk, b"m", sign_blinded(kp.sk, ONE, b"m"))
    assert verify(kp.pk, b"m", sign(kp, b"m"))


def test_single_bit_flip_sweep():
    kp = KeyPair.generate()
    y = Scalar.random()
    bpk = blind_public_key(kp.pk, y)
    msg = b"short msg"
    sig = sign_blinded(kp.sk, y, msg)
    for i in range(len(msg) * 8):
        m = bytearray(msg)
        m[i // 8] ^= 1 << (i % 8)
        assert not verify_blinded(bpk, bytes(m), sig)
    for i in range(SIGNATURE_LEN * 8):
        s = bytearray(sig)
        s[i // 8] ^= 1 << (i % 8)
        assert not verify_blinded(bpk, msg, bytes(s))


def test_wrong_blind_rejected():
    for _ in range(20):
        kp = KeyPair.generate()
        y1, y2 = Scalar.random(), Scalar.random()
        sig = sign_blinded(kp.sk, y1, b"m")
        assert not verify_blinded(blind_public_key(kp.pk, y2), b"m", sig)


def test_malformed_signature_returns_false():
    kp = KeyPair.generate()
    sig = sign(kp, b"m")
    assert not verify(kp.pk, b"m", sig[:-1])
    assert not verify(kp.pk, b"m", b"")
    assert not verify(kp.pk, b"m", bytes(64))
    assert not verify(kp.pk, b"m", "not bytes")  # type: ignore[arg-type]


def test_blinded_signatures_share_no_component():
    kp = KeyPair.generate()
    a = sign_blinded(kp.sk, Scalar.random(), b"m")
    b = sign_blinded(kp.sk, Scalar.random(), b"m")
    assert a[:32] != b[:32] and a[32:] != b[32:]


# -- mac and aead ----------------------------------------------------------------


def test_mac():
    k = bytes(32)
    tag = mac(k, b"msg")
    assert mac_verify(k, b"msg", tag)
    assert not mac_verify(b"\x01" * 32, b"msg", tag)
    assert not mac_verify(k, b"other", tag)


def test_aead_roundtrip_and_failures():
    k = hashlib.sha256(b"k").digest()
    assert aead_open(k, aead_seal(k, b"")) == b""
    ct = aead_seal(k, b"hello", b"ad")
    assert aead_open(k, ct, b"ad") == b"hello"
    flipped = bytearray(ct)
    flipped[-1] ^= 1
    with pytest.raises(DecryptError):
        aead_open(k, bytes(flipped), b"ad")
    with pytest.raises(DecryptError):
        aead_open(bytes(32), ct, b"ad")
    with pytest.raises(DecryptError):
        aead_open(k, ct, b"other ad")
    with pytest.raises(DecryptError):
        aead_open(k, b"short")


@given(st.binary(max_size=100), st.integers(min_value=0))
@settings(max_examples=30)
def test_aead_any_bit_flip_fails(pt, pos):
    k = hashlib.sha256(b"k2").digest()
    ct = bytearray(aead_seal(k, pt))
    bit = pos % (len(ct) * 8)
    ct[bit // 8] ^= 1 << (bit % 8)
    with pytest.raises(DecryptError):
        aead_open(k, bytes(ct))
