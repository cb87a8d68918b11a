import random

import pytest
from scipy.stats import chi2_contingency

from mpccdss.config import ProtocolConfig
from mpccdss.engine import ProtocolSession
from mpccdss.errors import (
    ArityError,
    ConfigError,
    DesyncAbort,
    MacAbort,
    ProtocolError,
    RemoteAbort,
)
from mpccdss.sharing import ShareVector, reconstruct_vector, share_vector
from mpccdss.wire import MessageType

from conftest import (
    P101,
    P61,
    key_for,
    make_sessions,
    run_pair,
    share_for_sessions,
    stores_from_plain,
)


def both(s0, s1, f):
    """Run the same session method on both parties concurrently."""
    return run_pair(lambda: f(s0), lambda: f(s1))


def open_both(s0, s1, v0, v1):
    r0, r1 = run_pair(lambda: s0.open_vector(v0), lambda: s1.open_vector(v1))
    assert r0 == r1
    return r0


def test_open_reveals_the_secret(rng):
    s0, s1, _ = make_sessions(field=P101)
    v0, v1 = share_vector(P101, [40], rng)
    assert open_both(s0, s1, v0, v1) == [40]
    assert s0.opened_log == [(40, None)]


def test_beaver_worked_example(rng):
    # triple (3,5,15) with inputs 6 and 7: the openings are d=3, e=2
    s0, s1, _ = make_sessions(field=P101, forced_triples=[(3, 5, 15)])
    x0, x1 = share_vector(P101, [6], rng)
    y0, y1 = share_vector(P101, [7], rng)
    r0, r1 = run_pair(
        lambda: s0.mul_vector(x0, y0), lambda: s1.mul_vector(x1, y1)
    )
    assert reconstruct_vector(P101, r0, r1) == [42]
    assert [v for v, _ in s0.opened_log] == [3, 2]


def test_beaver_random_bulk(rng):
    k = 10_000
    s0, s1, _ = make_sessions(field=P61, triples=k, seed=5)
    xs = [P61.sample(rng) for _ in range(k)]
    ys = [P61.sample(rng) for _ in range(k)]
    x0, x1 = share_vector(P61, xs, rng)
    y0, y1 = share_vector(P61, ys, rng)
    r0, r1 = run_pair(
        lambda: s0.mul_vector(x0, y0), lambda: s1.mul_vector(x1, y1)
    )
    assert reconstruct_vector(P61, r0, r1) == [x * y % P61.p for x, y in zip(xs, ys)]
    assert s0.store.consumed_counts["triples"] == k


def test_beaver_authenticated_keeps_mac_relation(rng):
    k = 1000
    s0, s1, _ = make_sessions(field=P61, mode="authenticated", triples=k)
    key = key_for((s0.store, s1.store), P61)
    xs = [P61.sample(rng) for _ in range(k)]
    ys = [P61.sample(rng) for _ in range(k)]
    x0, x1 = share_vector(P61, xs, rng, key)
    y0, y1 = share_vector(P61, ys, rng, key)
    r0, r1 = run_pair(
        lambda: s0.mul_vector(x0, y0), lambda: s1.mul_vector(x1, y1)
    )
    p = P61.p
    for m0, m1, v0, v1 in zip(r0.macs, r1.macs, r0.values, r1.values):
        assert (m0 + m1) % p == key.alpha * (v0 + v1) % p
    both(s0, s1, lambda s: s.mac_check())


def test_mul_empty_batch_sends_nothing():
    frames = []
    s0, s1, _ = make_sessions(tap=lambda *t: frames.append(t))
    r0, r1 = run_pair(
        lambda: s0.mul_vector(ShareVector([]), ShareVector([])),
        lambda: s1.mul_vector(ShareVector([]), ShareVector([])),
    )
    assert len(r0) == len(r1) == 0
    assert frames == []


def test_mul_length_mismatch():
    s0, _, _ = make_sessions()
    with pytest.raises(ArityError):
        s0.mul_vector(ShareVector([1]), ShareVector([1, 2]))


def test_batched_mul_uses_one_round_trip():
    frames = []
    k = 1000
    s0, s1, _ = make_sessions(triples=k, tap=lambda *t: frames.append(t))
    rng = random.Random(9)
    x0, x1 = share_vector(P61, [1] * k, rng)
    y0, y1 = share_vector(P61, [2] * k, rng)
    run_pair(lambda: s0.mul_vector(x0, y0), lambda: s1.mul_vector(x1, y1))
    opens = [t for t in frames if t[1] == MessageType.OPEN_BATCH]
    assert len(opens) == 2  # one frame per party, total, for all 1000 products


def test_xor_exhaustive_bit_pairs(rng):
    s0, s1, _ = make_sessions(field=P101, triples=4)
    pairs = [(0, 0), (0, 1), (1, 0), (1, 1)]
    x0, x1 = share_vector(P101, [a for a, _ in pairs], rng)
    y0, y1 = share_vector(P101, [b for _, b in pairs], rng)
    r0, r1 = run_pair(
        lambda: s0.xor_vector(x0, y0), lambda: s1.xor_vector(x1, y1)
    )
    assert reconstruct_vector(P101, r0, r1) == [0, 1, 1, 0]


def _bits_of(s: str) -> list[int]:
    return [int(c) for c in s]


def test_hamming_worked_example(rng):
    s0, s1, _ = make_sessions(triples=10)
    q0, q1 = share_vector(P61, _bits_of("10110"), rng)
    v0, v1 = share_vector(P61, _bits_of("10011"), rng)
    r0, r1 = run_pair(
        lambda: s0.hamming_fold(q0, v0, 5), lambda: s1.hamming_fold(q1, v1, 5)
    )
    assert reconstruct_vector(P61, r0, r1) == [2]


def test_hamming_of_identical_vectors_is_zero(rng):
    s0, s1, _ = make_sessions(triples=8)
    bits = [rng.randrange(2) for _ in range(8)]
    q0, q1 = share_vector(P61, bits, rng)
    v0, v1 = share_vector(P61, bits, rng)
    r0, r1 = run_pair(
        lambda: s0.hamming_fold(q0, v0, 8), lambda: s1.hamming_fold(q1, v1, 8)
    )
    assert reconstruct_vector(P61, r0, r1) == [0]


def test_hamming_batch_matches_plaintext_and_one_round(rng):
    d, n = 50, 8
    frames = []
    s0, s1, _ = make_sessions(triples=d * n, tap=lambda *t: frames.append(t))
    qbits = [rng.randrange(2) for _ in range(n)]
    vbits = [rng.randrange(2) for _ in range(d * n)]
    q0, q1 = share_vector(P61, qbits * d, rng)
    v0, v1 = share_vector(P61, vbits, rng)
    r0, r1 = run_pair(
        lambda: s0.hamming_fold(q0, v0, n), lambda: s1.hamming_fold(q1, v1, n)
    )
    want = [
        sum(a != b for a, b in zip(qbits, vbits[i * n : (i + 1) * n]))
        for i in range(d)
    ]
    assert reconstruct_vector(P61, r0, r1) == want
    assert sum(t[1] == MessageType.OPEN_BATCH for t in frames) == 2


def test_fold_and_affine_shapes():
    s0, _, _ = make_sessions()
    with pytest.raises(ArityError):
        s0.fold_sum(ShareVector([1, 2, 3]), 2)
    with pytest.raises(ArityError):
        s0.fold_weighted(ShareVector([1, 2, 3]), [1, 2])
    with pytest.raises(ArityError):
        s0.affine([])
    with pytest.raises(ArityError):
        s0.affine([(1, ShareVector([1])), (1, ShareVector([1, 2]))])
    with pytest.raises(ArityError):
        s0.affine([(1, ShareVector([1, 2]))], consts=[1, 2, 3])


def test_affine_constant_absorbed_once(rng):
    # -2x + 5 with x=3: reconstructs to 100 mod 101, not 104
    s0, s1, _ = make_sessions(field=P101)
    x0, x1 = share_vector(P101, [3], rng)
    a0 = s0.affine([(P101.neg(2), x0)], consts=5)
    a1 = s1.affine([(P101.neg(2), x1)], consts=5)
    assert reconstruct_vector(P101, a0, a1) == [100]


def _share_bits_lsb(field, values, ell, rng, key=None):
    flat = [(v >> j) & 1 for v in values for j in range(ell)]
    return share_vector(field, flat, rng, key)


def test_bit_lt_public_worked_examples(rng):
    ell = 4
    s0, s1, _ = make_sessions(triples=2 * (2 * ell - 1))
    r0, r1 = _share_bits_lsb(P61, [0, 3], ell, rng)
    got0, got1 = run_pair(
        lambda: s0.bit_lt_public_vector([0, 0], r0, ell),
        lambda: s1.bit_lt_public_vector([0, 0], r1, ell),
    )
    # x=0,r=0 -> 0 (not strictly less); x=0,r=3 -> 1
    assert reconstruct_vector(P61, got0, got1) == [0, 1]


def test_bit_lt_public_exhaustive_small_width(rng):
    ell = 4
    cases = [(x, r) for x in range(16) for r in range(16)]
    s0, s1, _ = make_sessions(triples=len(cases) * (2 * ell - 1))
    r0, r1 = _share_bits_lsb(P61, [r for _, r in cases], ell, rng)
    xs = [x for x, _ in cases]
    got0, got1 = run_pair(
        lambda: s0.bit_lt_public_vector(xs, r0, ell),
        lambda: s1.bit_lt_public_vector(xs, r1, ell),
    )
    assert reconstruct_vector(P61, got0, got1) == [int(x < r) for x, r in cases]


def test_bit_lt_arity():
    s0, _, _ = make_sessions()
    with pytest.raises(ArityError):
        s0.bit_lt_public_vector([1], ShareVector([0] * 3), ell=4)


def lt_both(s0, s1, hs, bound, ell, kappa, rng):
    h0, h1 = share_for_sessions(s0.field, hs, rng, (s0.store, s1.store))
    got0, got1 = run_pair(
        lambda: s0.lt_threshold_vector(h0, bound, ell, kappa),
        lambda: s1.lt_threshold_vector(h1, bound, ell, kappa),
    )
    return reconstruct_vector(s0.field, got0, got1)


def test_lt_threshold_worked_examples(rng):
    ell, kappa = 3, 8
    per = 2 * ell - 1
    s0, s1, _ = make_sessions(triples=3 * per, bits=3 * (ell + kappa))
    assert lt_both(s0, s1, [3], 5, ell, kappa, rng) == [1]
    assert lt_both(s0, s1, [5], 5, ell, kappa, rng) == [0]
    assert lt_both(s0, s1, [0], 0, ell, kappa, rng) == [0]


def test_lt_threshold_exhaustive_small_width(rng):
    ell, kappa, n = 3, 8, 7
    per_call = (n + 1) * (2 * ell - 1)
    bits_per_call = (n + 1) * (ell + kappa)
    s0, s1, _ = make_sessions(
        triples=(n + 1) * per_call, bits=(n + 1) * bits_per_call
    )
    hs = list(range(n + 1))
    for bound in range(n + 1):
        assert lt_both(s0, s1, hs, bound, ell, kappa, rng) == [
            int(h < bound) for h in hs
        ]


def test_lt_threshold_consumption_is_exact(rng):
    ell, kappa, d = 4, 8, 6
    s0, s1, _ = make_sessions(triples=d * (2 * ell - 1), bits=d * (ell + kappa))
    lt_both(s0, s1, [1] * d, 3, ell, kappa, rng)
    assert s0.store.consumed_counts == {
        "triples": d * (2 * ell - 1),
        "bits": d * (ell + kappa),
        "masks": 0,
    }
    assert s0.store.remaining("triples") == 0 and s0.store.remaining("bits") == 0


def test_lt_threshold_guards():
    s0, _, _ = make_sessions(field=P101)
    with pytest.raises(ConfigError, match="too small"):
        s0.lt_threshold_vector(ShareVector([1]), 1, ell=3, kappa=8)
    s0, _, _ = make_sessions(field=P61)
    with pytest.raises(ConfigError, match="outside"):
        s0.lt_threshold_vector(ShareVector([1]), 8, ell=3, kappa=8)


def test_masked_opening_carries_no_detectable_signal(rng):
    # the only opened value z leaks at most 2^-kappa about h, so at
    # kappa=24 a 3000-sample two-population chi-square must NOT tell
    # h=0 from h=7 apart; the range/residue checks still catch a
    # dropped mask term, which this binning would forgive
    ell, kappa, d = 3, 24, 3000
    nbins = 64
    shift = ell + kappa - 6  # 64 equal-width buckets over the z range
    tables = []
    for h in (0, 7):
        s0, s1, _ = make_sessions(
            triples=d * (2 * ell - 1), bits=d * (ell + kappa), seed=29 + h
        )
        h0, h1 = share_vector(P61, [h] * d, rng)
        run_pair(
            lambda: s0.lt_threshold_vector(h0, 5, ell, kappa),
            lambda: s1.lt_threshold_vector(h1, 5, ell, kappa),
        )
        zs = [v for v, _ in s0.opened_log[:d]]
        assert max(zs) >= 1 << (ell + kappa - 1)  # the wide mask is present
        assert len({z & ((1 << ell) - 1) for z in zs}) == 1 << ell  # so is r
        counts = [0] * nbins
        for z in zs:
            counts[min(z >> shift, nbins - 1)] += 1
        tables.append(counts)
    _, pvalue, _, _ = chi2_contingency(tables)
    assert pvalue > 1e-3


def test_sync_tag_mismatch():
    s0, s1, _ = make_sessions()
    got = run_pair(lambda: s0.sync(b"alpha"), lambda: s1.sync(b"beta"), capture=True)
    assert all(isinstance(e, DesyncAbort) for e in got)


def test_sync_round_counter_mismatch():
    s0, s1, _ = make_sessions()
    s0.round = 5
    got = run_pair(lambda: s0.sync(b"x"), lambda: s1.sync(b"x"), capture=True)
    assert all(isinstance(e, DesyncAbort) for e in got)


def test_open_size_mismatch(rng):
    s0, s1, _ = make_sessions()
    v0, v1 = share_vector(P61, [1, 2], rng)
    got = run_pair(
        lambda: s0.open_vector(v0),
        lambda: s1.open_vector(ShareVector(v1.values[:1])),
        capture=True,
    )
    assert any(isinstance(e, DesyncAbort) for e in got)


def test_remote_abort_surfaces_reason():
    s0, s1, (_, t1) = make_sessions()
    def abort():
        t1.send(MessageType.ABORT, b"quota")
    got = run_pair(lambda: s0.sync(b"x"), abort, capture=True)
    assert isinstance(got[0], RemoteAbort) and got[0].reason == "quota"


def test_unexpected_message_type():
    s0, s1, (_, t1) = make_sessions()
    def wrong():
        t1.send(MessageType.COMMIT, b"\x00" * 32)
    got = run_pair(lambda: s0.sync(b"x"), wrong, capture=True)
    assert isinstance(got[0], ProtocolError)


def test_mac_check_honest_clears_log(rng):
    s0, s1, _ = make_sessions(mode="authenticated")
    key = key_for((s0.store, s1.store), P61)
    xs = [P61.sample(rng) for _ in range(1000)]
    v0, v1 = share_vector(P61, xs, rng, key)
    open_both(s0, s1, v0, v1)
    assert len(s0.opened_log) == 1000
    both(s0, s1, lambda s: s.mac_check())
    assert s0.opened_log == [] and s1.opened_log == []


def test_mac_check_catches_shifted_opening(rng):
    s0, s1, _ = make_sessions(mode="authenticated")
    key = key_for((s0.store, s1.store), P61)
    v0, v1 = share_vector(P61, [17, 23], rng, key)
    open_both(s0, s1, v0, v1)
    # both parties saw value+1 for one opening: MACs no longer match
    for s in (s0, s1):
        v, m = s.opened_log[1]
        s.opened_log[1] = ((v + 1) % P61.p, m)
    got = run_pair(lambda: s0.mac_check(), lambda: s1.mac_check(), capture=True)
    assert all(isinstance(e, MacAbort) for e in got)


def test_mac_check_vacuous_and_semi_honest_noop(rng):
    frames = []
    s0, s1, _ = make_sessions(mode="authenticated", tap=lambda *t: frames.append(t))
    both(s0, s1, lambda s: s.mac_check())  # empty log: nothing on the wire
    assert frames == []

    s0, s1, _ = make_sessions(tap=lambda *t: frames.append(t))
    v0, v1 = share_vector(P61, [4], rng)
    open_both(s0, s1, v0, v1)
    frames.clear()
    both(s0, s1, lambda s: s.mac_check())
    assert frames == []


def test_commit_reveal_tamper_detected(rng):
    # the honest party aborts at once; the cheater only times out
    s0, s1, (t0, _) = make_sessions(mode="authenticated", timeout=1.0)
    key = key_for((s0.store, s1.store), P61)
    v0, v1 = share_vector(P61, [9], rng, key)
    open_both(s0, s1, v0, v1)

    real_send = t0.send
    def lying_send(msg_type, payload=b""):
        if msg_type == MessageType.REVEAL:
            payload = payload[:-1] + bytes([payload[-1] ^ 1])
        real_send(msg_type, payload)
    t0.send = lying_send
    got = run_pair(lambda: s0.mac_check(), lambda: s1.mac_check(), capture=True)
    assert isinstance(got[1], MacAbort)
    assert "commitment" in str(got[1])


def test_session_requires_alpha_in_authenticated_mode():
    from mpccdss.dealer import TripleStore
    from mpccdss.transport import loopback_pair

    empty = ShareVector([], [])
    st = TripleStore(bytes(16), "authenticated", P61, None,
                     (empty, empty, empty), empty, empty)
    t0, _ = loopback_pair()
    with pytest.raises(ConfigError, match="alpha"):
        ProtocolSession(0, t0, st, ProtocolConfig(field=P61, mode="authenticated"))


def test_party_id_validated():
    st0, _, _ = stores_from_plain(P61)
    from mpccdss.transport import loopback_pair
    t0, _ = loopback_pair()
    with pytest.raises(ConfigError):
        ProtocolSession(2, t0, st0, ProtocolConfig(field=P61, mode="semi-honest"))
