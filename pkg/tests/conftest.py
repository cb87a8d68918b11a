"""Shared test harness: two-party loopback sessions, in-memory preprocessing
builders, and a thread-pair runner with exception propagation."""

from __future__ import annotations

import random
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager

import pytest

from mpccdss.config import ProtocolConfig, SystemConfig
from mpccdss.dealer import Counts, TripleStore, deal_preprocessing
from mpccdss.engine import ProtocolSession
from mpccdss.field import EXHAUSTIVE_TEST_MODULUS, Field, TEST_MODULUS
from mpccdss.sharing import GlobalMacKey, ShareVector, share_secret, share_vector
from mpccdss.transport import loopback_pair

P101 = Field(EXHAUSTIVE_TEST_MODULUS)
P61 = Field(TEST_MODULUS)


@pytest.fixture
def rng():
    return random.Random(0xC0FFEE)


def run_pair(fn0, fn1, timeout=60, capture=False):
    """Run both parties' closures on threads. Raises the first error unless
    ``capture``, in which case the results list may hold exceptions."""
    with ThreadPoolExecutor(max_workers=2) as ex:
        futures = [ex.submit(fn0), ex.submit(fn1)]
        results = []
        for fut in futures:
            try:
                results.append(fut.result(timeout=timeout))
            except Exception as exc:  # noqa: BLE001 - tests inspect these
                if capture:
                    results.append(exc)
                else:
                    for other in futures:
                        other.cancel()
                    raise
    return results


def stores_from_plain(
    field: Field,
    triples: list[tuple[int, int, int]] = (),
    bits: list[int] = (),
    masks: list[int] = (),
    mode: str = "semi-honest",
    seed: int = 1,
    session_id: bytes = b"\x00" * 16,
) -> tuple[TripleStore, TripleStore, GlobalMacKey | None]:
    """Build both parties' stores from explicit plaintext preprocessing,
    bypassing files; used to force specific triples into the protocol."""
    rng = random.Random(seed)
    key = GlobalMacKey.generate(field, rng) if mode == "authenticated" else None

    def share_list(values):
        return share_vector(field, list(values), rng, key)

    a0, a1 = share_list([t[0] for t in triples])
    b0, b1 = share_list([t[1] for t in triples])
    c0, c1 = share_list([t[2] for t in triples])
    bit0, bit1 = share_list(bits)
    m0, m1 = share_list(masks)
    stores = tuple(
        TripleStore(
            session_id=session_id,
            mode=mode,
            field=field,
            alpha_share=key.shares[i] if key else None,
            triples=(abc[0], abc[1], abc[2]),
            bits=bv,
            masks=mv,
        )
        for i, (abc, bv, mv) in enumerate(
            (((a0, b0, c0), bit0, m0), ((a1, b1, c1), bit1, m1))
        )
    )
    return stores[0], stores[1], key


def dealt_stores(
    tmp_path,
    protocol: ProtocolConfig,
    counts: Counts,
    seed: int = 1,
) -> tuple[TripleStore, TripleStore]:
    """Deal to files and load both stores (the production path)."""
    deal_preprocessing(counts, protocol, random.Random(seed), tmp_path)
    return tuple(
        TripleStore.load(tmp_path / f"party{i}.preproc", protocol) for i in (0, 1)
    )


def session_pair(
    protocol: ProtocolConfig,
    stores: tuple[TripleStore, TripleStore],
    timeout: float = 20.0,
    tap=None,
    seed: int = 7,
) -> tuple[ProtocolSession, ProtocolSession, tuple]:
    t0, t1 = loopback_pair(names=("party0", "party1"), tap=tap)
    s0 = ProtocolSession(0, t0, stores[0], protocol, timeout=timeout,
                         rng=random.Random(seed))
    s1 = ProtocolSession(1, t1, stores[1], protocol, timeout=timeout,
                         rng=random.Random(seed + 1))
    return s0, s1, (t0, t1)


def key_for(stores: tuple[TripleStore, TripleStore], field: Field) -> GlobalMacKey | None:
    if stores[0].alpha_share is None:
        return None
    alpha = (stores[0].alpha_share + stores[1].alpha_share) % field.p
    return GlobalMacKey(alpha, (stores[0].alpha_share, stores[1].alpha_share))


def share_for_sessions(
    field: Field,
    values: list[int],
    rng: random.Random,
    stores: tuple[TripleStore, TripleStore],
) -> tuple[ShareVector, ShareVector]:
    """Share plaintext values, MACed when the stores are authenticated."""
    return share_vector(field, values, rng, key_for(stores, field))


def random_triples(field: Field, k: int, rng: random.Random) -> list[tuple[int, int, int]]:
    out = []
    for _ in range(k):
        a, b = field.sample(rng), field.sample(rng)
        out.append((a, b, a * b % field.p))
    return out


def make_sessions(field=P61, mode="semi-honest", triples=0, bits=0, seed=3,
                  tap=None, forced_triples=None, timeout=20.0):
    """Session pair over in-memory stores holding the requested amounts of
    random preprocessing (plus any forced triples at the front)."""
    rng = random.Random(seed)
    trip = list(forced_triples or []) + random_triples(field, triples, rng)
    bitlist = [rng.randrange(2) for _ in range(bits)]
    st0, st1, _ = stores_from_plain(field, trip, bitlist, mode=mode, seed=seed + 1)
    protocol = ProtocolConfig(field=field, mode=mode)
    s0, s1, transports = session_pair(protocol, (st0, st1), tap=tap, timeout=timeout)
    return s0, s1, transports


def small_config(
    field: Field = P61,
    mode: str = "semi-honest",
    n_bits: int = 8,
    n_treatments: int = 2,
    threshold_b: int = 3,
    kappa: int = 8,
    **kwargs,
) -> SystemConfig:
    return SystemConfig(
        protocol=ProtocolConfig(field=field, mode=mode, kappa=kappa),
        n_bits=n_bits,
        n_treatments=n_treatments,
        threshold_b=threshold_b,
        **kwargs,
    )


@contextmanager
def criterion(capsys, number: int, description: str):
    """Emit exactly one uncaptured pass/fail line per acceptance criterion."""
    try:
        yield
    except BaseException:
        with capsys.disabled():
            print(f"\n[FAIL] acceptance criterion {number}: {description}")
        raise
    with capsys.disabled():
        print(f"\n[PASS] acceptance criterion {number}: {description}")
