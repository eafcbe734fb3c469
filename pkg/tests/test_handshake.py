import random
from dataclasses import replace

import pytest

from satkex import codec, handshake
from satkex.codec import OverheadModel, PayloadKind
from satkex.crypto import (
    EXPECTED_MESSAGES,
    SecretOrigin,
    SharedSecret,
    all_suites,
    get_provider,
    kem_keygen,
    prf,
    resolve_suite,
    sig_keygen,
)
from satkex.errors import (
    AuthFailure,
    CredentialMismatch,
    DecodeFailure,
    HandshakeError,
    InitExceedsMtu,
    MissingSecret,
    NonceDecryptFailure,
    UnexpectedExchange,
)
from satkex.handshake import Phase

SUITES = all_suites()
IDS = [f"{s.variant.value}-{s.level.value}" for s in SUITES]


def _run(suite, seed=0, **kw):
    rng = random.Random(seed)
    ci, cr = handshake.make_credentials(suite, rng, **kw)
    return handshake.run_in_memory(suite, ci, cr, rng)


@pytest.mark.parametrize("suite", SUITES, ids=IDS)
def test_full_run_establishes(suite):
    init, resp, msgs = _run(suite)
    assert len(msgs) == EXPECTED_MESSAGES[suite.variant]
    assert init.phase is resp.phase is Phase.ESTABLISHED
    assert init.schedule == resp.schedule
    assert len(init.schedule.sk_d) == suite.prf.output_bytes
    assert len(init.schedule.sk_ei) == suite.aead.key_bytes + handshake.SALT_BYTES


def test_message_counts():
    assert [EXPECTED_MESSAGES[v] for v in ("TB1", "TB2", "LW1", "LW2", "LW3")] == [6, 4, 6, 4, 2]
    kinds = [m.header.exchange_type for m in _run(resolve_suite("TB1", "I"))[2]]
    X = codec.ExchangeType
    assert kinds == [X.INIT, X.INIT, X.INTERMEDIATE, X.INTERMEDIATE, X.AUTH, X.AUTH]
    kinds = [m.header.exchange_type for m in _run(resolve_suite("LW2", "I"))[2]]
    assert kinds == [X.INIT, X.INIT, X.AUTH, X.AUTH]


def test_tb2_init_contents():
    suite = resolve_suite("TB2", "I")
    ci, _ = handshake.make_credentials(suite, random.Random(1))
    _, m = handshake.start(suite, ci, random.Random(1))
    assert len(m.first(PayloadKind.KE).body) == 800
    assert len(m.first(PayloadKind.NONCE).body) == 32
    assert len(m.first(PayloadKind.SA).body) == handshake.SA_BODY_BYTES


def test_lw3_first_message_contents():
    suite = resolve_suite("LW3", "I")
    ci, _ = handshake.make_credentials(suite, random.Random(2))
    _, m = handshake.start(suite, ci, random.Random(2))
    assert m.first(PayloadKind.SA) is None
    assert len(m.first(PayloadKind.KEM_CT).body) == 96
    # 32-byte nonce plus 16-byte AEAD tag
    assert len(m.first(PayloadKind.ENC_NONCE).body) == 48


def test_lw2_iii_init_exceeds_small_mtu():
    suite = resolve_suite("LW2", "III")
    ci, _ = handshake.make_credentials(suite, random.Random(3))
    with pytest.raises(InitExceedsMtu):
        handshake.start(suite, ci, random.Random(3), overhead=OverheadModel(mtu=576))


def _auth_inner(state_msgs, suite, index):
    init, resp, msgs = state_msgs
    receiver = resp if index % 2 == 0 else init
    return handshake.open_payloads(receiver, msgs[index])


def test_lw2_auth_payload_is_concatenated_signatures():
    suite = resolve_suite("LW2", "I")
    run = _run(suite, 4)
    inner = _auth_inner(run, suite, 2)
    auth = next(p for p in inner if p.kind is PayloadKind.AUTH)
    assert len(auth.body) == 64 + 2420 == 2484


def test_tb1_cert_payload_is_raw_public_key():
    suite = resolve_suite("TB1", "I")
    run = _run(suite, 5)
    inner = _auth_inner(run, suite, 4)
    cert = next(p for p in inner if p.kind is PayloadKind.CERT)
    assert len(cert.body) == 64


def test_hybrid_verification_needs_both_signatures():
    suite = resolve_suite("LW2", "I")
    rng = random.Random(6)
    ci, cr = handshake.make_credentials(suite, rng)
    init, resp, _ = handshake.run_in_memory(suite, ci, cr, rng)
    good = handshake.build_auth_payload(init, ci)
    assert handshake.verify_auth_payload(resp, cr, good)
    n = suite.sig_classical.ciphertext_or_sig_bytes
    for pos in (5, n + 100):
        body = bytearray(good.body)
        body[pos] ^= 1
        assert not handshake.verify_auth_payload(resp, cr, replace(good, body=bytes(body)))


def _flip_encrypted(index, bitpos):
    def tamper(i, data):
        if i != index:
            return data
        out = bytearray(data)
        out[-1 - bitpos // 8] ^= 1 << (bitpos % 8)
        return bytes(out)
    return tamper


@pytest.mark.parametrize("suite", [s for s in SUITES if s.variant.value != "LW3"], ids=[i for i in IDS if "LW3" not in i])
def test_corrupted_auth_message_fails(suite):
    rng = random.Random(7)
    ci, cr = handshake.make_credentials(suite, rng)
    auth_index = 4 if suite.uses_intermediate else 2
    with pytest.raises(HandshakeError):
        handshake.run_in_memory(suite, ci, cr, rng, tamper=_flip_encrypted(auth_index, 40))


def test_corrupted_signature_inside_valid_envelope_fails():
    # re-seal a message whose signature was altered, so only AUTH verification can catch it
    suite = resolve_suite("TB1", "I")
    rng = random.Random(8)
    ci, cr = handshake.make_credentials(suite, rng)
    init, msg = handshake.start(suite, ci, rng)
    resp = handshake.accept(suite, cr)
    _, msg = handshake.step(resp, msg, rng)
    _, msg = handshake.step(init, msg, rng)
    _, msg = handshake.step(resp, msg, rng)
    _, msg = handshake.step(init, msg, rng)
    inner = handshake.open_payloads(resp, msg)
    forged = []
    for p in inner:
        if p.kind is PayloadKind.AUTH:
            body = bytearray(p.body)
            body[0] ^= 1
            p = replace(p, body=bytes(body))
        forged.append(p)
    # seal as the initiator would
    resealed = codec.Message(msg.header, [handshake.seal_payloads(init, msg.header, forged, rng)])
    with pytest.raises(AuthFailure):
        handshake.step(resp, resealed, rng)
    assert resp.phase is Phase.FAILED


def test_psk_mismatch_fails():
    suite = resolve_suite("TB2", "I")
    rng = random.Random(9)
    ci, cr = handshake.make_credentials(suite, rng)
    bad = bytearray(cr.psk)
    bad[0] ^= 1
    cr.psk = bytes(bad)
    with pytest.raises(AuthFailure):
        handshake.run_in_memory(suite, ci, cr, rng)


def test_wrong_pinned_raw_key_fails():
    suite = resolve_suite("TB1", "I")
    rng = random.Random(10)
    ci, cr = handshake.make_credentials(suite, rng)
    cr.peer_sig_classical = sig_keygen(suite.sig_classical, rng).public
    with pytest.raises(AuthFailure):
        handshake.run_in_memory(suite, ci, cr, rng)


def test_ppk_changes_sk_d_but_not_sk_e():
    suite = resolve_suite("TB2", "I")
    secrets = [SharedSecret(bytes(range(32)), SecretOrigin.KEM)]
    ni, nr, si, sr = b"i" * 32, b"r" * 32, b"I" * 8, b"R" * 8
    plain = handshake.compute_schedule(suite, secrets, ni, nr, si, sr)
    with_ppk = handshake.compute_schedule(suite, secrets, ni, nr, si, sr, ppk=b"p" * 32)
    assert plain.sk_d != with_ppk.sk_d
    assert plain.sk_pi != with_ppk.sk_pi and plain.sk_pr != with_ppk.sk_pr
    assert (plain.sk_ei, plain.sk_er) == (with_ppk.sk_ei, with_ppk.sk_er)


def test_ppk_handshake_agrees():
    init, resp, _ = _run(resolve_suite("TB2", "III"), 11, ppk=True)
    assert init.schedule.sk_d == resp.schedule.sk_d


def test_schedule_matches_independent_prf_recomputation():
    # TB2: SKEYSEED = prf(Ni | Nr, ss); keys = prf+(SKEYSEED, Ni | Nr | SPIi | SPIr)
    import hashlib
    import hmac

    suite = resolve_suite("TB2", "I")
    ss, ni, nr, si, sr = b"s" * 32, b"i" * 32, b"r" * 32, b"I" * 8, b"R" * 8
    ks = handshake.compute_schedule(suite, [SharedSecret(ss, SecretOrigin.KEM)], ni, nr, si, sr)
    skeyseed = hmac.new(ni + nr, ss, hashlib.sha256).digest()
    assert ks.skeyseed == skeyseed
    stream, t, seed = b"", b"", ni + nr + si + sr
    for n in range(1, 6):
        t = hmac.new(skeyseed, t + seed + bytes([n]), hashlib.sha256).digest()
        stream += t
    assert ks.sk_d == stream[:32]
    assert ks.sk_ei == stream[32:52] and ks.sk_er == stream[52:72]
    assert ks.sk_pi == stream[72:104] and ks.sk_pr == stream[104:136]
    assert ks.sk_ai == ks.sk_ar == b""


def test_two_stage_rekey_formula():
    suite = resolve_suite("TB1", "I")
    s1 = SharedSecret(b"a" * 32, SecretOrigin.KEX)
    s2 = SharedSecret(b"b" * 32, SecretOrigin.KEM)
    ni, nr, si, sr = b"i" * 32, b"r" * 32, b"I" * 8, b"R" * 8
    first = handshake.compute_schedule(suite, [s1], ni, nr, si, sr)
    both = handshake.compute_schedule(suite, [s1, s2], ni, nr, si, sr)
    assert both.skeyseed == prf(first.sk_d, s2.data + ni + nr, suite.prf)


def test_lw3_skeyseed_formula_and_symmetry():
    suite = resolve_suite("LW3", "I")
    rng = random.Random(12)
    ci, cr = handshake.make_credentials(suite, rng)
    msgs, sk_i, sk_r = handshake.lw3_round(ci, cr, rng)
    assert len(msgs) == 2 and sk_i == sk_r
    init, resp, _ = handshake.run_in_memory(suite, ci, cr, rng)
    ka, kb = init.secrets
    assert init.schedule.skeyseed == prf(init.nonce_i + init.nonce_r, ka.data + kb.data, suite.prf)


def test_missing_secret():
    suite = resolve_suite("LW2", "I")
    with pytest.raises(MissingSecret):
        handshake.compute_schedule(suite, [SharedSecret(bytes(32), SecretOrigin.KEX)], b"i", b"r", b"", b"")


def _wrong_static(suite, rng, creds):
    return replace(creds, kem_static=kem_keygen(suite.kem, rng).as_static())


def test_lw3_wrong_responder_static_key_fails_nonce_decrypt():
    suite = resolve_suite("LW3", "I")
    rng = random.Random(13)
    ci, cr = handshake.make_credentials(suite, rng)
    cr = _wrong_static(suite, rng, cr)
    init, m1 = handshake.start(suite, ci, rng)
    resp = handshake.accept(suite, cr)
    with pytest.raises(NonceDecryptFailure):
        handshake.step(resp, m1, rng)
    assert resp.phase is Phase.FAILED
    assert init.phase is not Phase.ESTABLISHED


def test_lw3_wrong_initiator_static_key_fails_nonce_decrypt():
    suite = resolve_suite("LW3", "I")
    rng = random.Random(14)
    ci, cr = handshake.make_credentials(suite, rng)
    ci = _wrong_static(suite, rng, ci)
    init, m1 = handshake.start(suite, ci, rng)
    resp = handshake.accept(suite, cr)
    _, m2 = handshake.step(resp, m1, rng)
    with pytest.raises(NonceDecryptFailure):
        handshake.step(init, m2, rng)
    assert init.phase is Phase.FAILED


@pytest.mark.parametrize("index", [0, 1])
def test_lw3_ciphertext_bit_flip_fails(index):
    suite = resolve_suite("LW3", "III")
    rng = random.Random(15)
    ci, cr = handshake.make_credentials(suite, rng)
    kem_ct_offset = 28 + 4 + (4 + 16 if index == 0 else 0) + 10

    def tamper(i, data):
        if i != index:
            return data
        out = bytearray(data)
        out[kem_ct_offset] ^= 0x04
        return bytes(out)

    with pytest.raises(NonceDecryptFailure):
        handshake.run_in_memory(suite, ci, cr, rng, tamper=tamper)


def test_lw3_replay_is_not_prevented_but_keys_differ():
    suite = resolve_suite("LW3", "I")
    rng = random.Random(16)
    ci, cr = handshake.make_credentials(suite, rng)
    init, resp, msgs = handshake.run_in_memory(suite, ci, cr, rng)
    replayed = handshake.accept(suite, cr)
    _, reply = handshake.step(replayed, codec.decode(codec.encode(msgs[0])), rng)
    assert replayed.phase is Phase.ESTABLISHED and reply is not None
    assert replayed.schedule.sk_d != init.schedule.sk_d
    # the replayed c_A decapsulates to the same k_A: the attacker learns nothing new
    assert replayed.secrets[0] == resp.secrets[0]


def test_unexpected_exchange_fails():
    suite = resolve_suite("TB2", "I")
    rng = random.Random(17)
    ci, cr = handshake.make_credentials(suite, rng)
    init, m1 = handshake.start(suite, ci, rng)
    with pytest.raises(UnexpectedExchange):
        handshake.step(init, m1, rng)  # initiator receiving its own request
    assert init.phase is Phase.FAILED


def test_truncated_ke_is_decode_failure():
    suite = resolve_suite("LW2", "I")
    rng = random.Random(18)
    ci, cr = handshake.make_credentials(suite, rng)
    _, m1 = handshake.start(suite, ci, rng)
    ke = m1.first(PayloadKind.KE)
    short = codec.Message(m1.header, [p if p is not ke else replace(p, body=p.body[:-1]) for p in m1.payloads])
    resp = handshake.accept(suite, cr)
    with pytest.raises(DecodeFailure):
        handshake.step(resp, short, rng)


def test_credential_checks():
    tb1 = resolve_suite("TB1", "I")
    ci, _ = handshake.make_credentials(resolve_suite("TB2", "I"), random.Random(0))
    with pytest.raises(CredentialMismatch):
        handshake.start(tb1, ci, random.Random(0))
    lw3 = resolve_suite("LW3", "I")
    ci, _ = handshake.make_credentials(lw3, random.Random(0))
    ephemeral = replace(ci, kem_static=replace(ci.kem_static, provenance=handshake.Provenance.EPHEMERAL))
    with pytest.raises(CredentialMismatch):
        handshake.start(lw3, ephemeral, random.Random(0))


@pytest.mark.parametrize("variant", ["LW1", "LW3", "LW2"])
def test_no_out_of_band_material_in_band(variant):
    suite = resolve_suite(variant, "I")
    rng = random.Random(19)
    ci, cr = handshake.make_credentials(suite, rng)
    init, resp, msgs = handshake.run_in_memory(suite, ci, cr, rng)
    wire = b"".join(codec.encode(m) for m in msgs)
    plain = []
    for i, m in enumerate(msgs):
        plain.append(codec.encode(m))
        # only AUTH can be opened with the final keys; INTERMEDIATE used the earlier ones
        if m.header.exchange_type is codec.ExchangeType.AUTH:
            receiver = resp if i % 2 == 0 else init
            plain += [p.body for p in handshake.open_payloads(receiver, m)]
    plain = b"".join(plain)
    statics = [x for x in (ci.sig_pq, cr.sig_pq, ci.kem_static, cr.kem_static) if x is not None]
    for kp in statics:
        probe = kp.public[:64]
        assert probe not in wire and probe not in plain
    for cert in (ci.peer_certificate, cr.peer_certificate):
        if cert:
            assert cert[:16] not in plain
    kinds = {p.kind for m in msgs for p in m.payloads}
    assert PayloadKind.CERT not in kinds


def test_oob_store_round_trip(tmp_path):
    suite = resolve_suite("LW3", "I")
    rng = random.Random(20)
    kp = kem_keygen(suite.kem, rng).as_static()
    store = handshake.OobStore(tmp_path)
    store.save_keypair(b"peer-a", kp)
    assert store.load_keypair(b"peer-a", kp.algorithm) == kp
    assert store.load_public(b"peer-a", kp.algorithm) == kp.public


def test_export_transcript(tmp_path):
    init, _, msgs = _run(resolve_suite("TB2", "I"), 21)
    paths = handshake.export_transcript(init, tmp_path)
    assert len(paths) == len(msgs)
    for path, m in zip(paths, msgs):
        _, data = codec.read_hexdump(path)
        assert codec.decode(data) == m


def test_real_provider_handshakes():
    pytest.importorskip("pqcrypto")
    real = get_provider("real")
    for suite in all_suites():
        rng = random.Random(22)
        ci, cr = handshake.make_credentials(suite, rng, real)
        init, resp, _ = handshake.run_in_memory(suite, ci, cr, rng, real)
        assert init.phase is resp.phase is Phase.ESTABLISHED
        assert init.schedule.sk_d == resp.schedule.sk_d


def test_real_provider_rejects_forged_signature():
    pytest.importorskip("pqcrypto")
    real = get_provider("real")
    suite = resolve_suite("LW1", "I")
    rng = random.Random(23)
    ci, cr = handshake.make_credentials(suite, rng, real)
    other = sig_keygen(suite.sig_pq, rng, real)
    ci.sig_pq = replace(other, provenance=ci.sig_pq.provenance)
    with pytest.raises(AuthFailure):
        handshake.run_in_memory(suite, ci, cr, rng, real)
