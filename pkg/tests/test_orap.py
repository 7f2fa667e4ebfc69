import dataclasses
import random
from types import SimpleNamespace

import pytest
from hypothesis import given, settings, strategies as st

from reference_tables import MAX_PENDING, USEFULNESS, matches_printed
from orapsim.addrmap import AddressMapping, DramCoord
from orapsim.blp_buffer import BankBuffer
from orapsim.config import OrapConfig, preset
from orapsim.orap import (CONF_MAX, HSD_ENGINE, NEXT_COLUMN, ConfidenceTable, Orap,
                          PageOccupancyTable, depth_from_confidence, gate_probability,
                          max_pending, target_usefulness)

DRAM = preset("paper-1core").dram
MAP = AddressMapping.preset("zen4", DRAM)


def make_orap(cfg=OrapConfig(), seed=1, hsd=None, capacity_scale=1):
    llc = SimpleNamespace(lines={}, mshr={})
    blp = BankBuffer(16, 64, capacity_scale)
    return Orap(cfg, MAP, llc, blp, 0, seed=seed, hsd=hsd), llc, blp


def block_at(row, cluster=0, bg=0, ba=0, ch=0, line=0):
    col = (cluster * MAP.cluster_lines + line) * MAP.line_columns
    return MAP.compose(DramCoord(ch, 0, bg, ba, row, col, cluster)) >> 6


def drain(orap, blp, useful=False):
    """Issue everything in the buffer and fill it; optionally credit each fill."""
    fills = 0
    while blp.ready:
        for e in blp.issue_cycle():
            orap.on_fill(SimpleNamespace(block=e.block), 0)
            fills += 1
            if useful:
                orap.on_useful(SimpleNamespace(engine=e.engine, block=e.block), e.ip, 0)
    return fills


# ------------------------------------------------------------ closed forms


def test_usefulness_table():
    for i in range(1, 7):
        for u in range(1, 7):
            printed = USEFULNESS[i - 1][u - 1]
            if printed is None:
                with pytest.raises(ValueError):
                    target_usefulness(i, u)
            else:
                assert matches_printed(float(target_usefulness(i, u)), printed), (i, u)


def test_usefulness_examples():
    assert matches_printed(float(target_usefulness(3, 2)), "66.7%")
    assert target_usefulness(6, 3) == 0.5
    assert all(target_usefulness(k, k) == 1 for k in range(1, 7))


def test_max_pending_table():
    for i in range(1, 7):
        for c in range(1, 5):
            assert max_pending(i, c) == MAX_PENDING[i - 1][c - 1], (i, c)
    assert (max_pending(5, 3), max_pending(6, 4), max_pending(3, 2)) == (425, 382, 382)


def test_depth_table():
    assert depth_from_confidence(0) == 0
    assert depth_from_confidence(255) == 8
    for c in range(1, 256):
        assert depth_from_confidence(c) == min(8, c // 32 + 1)
    ds = [depth_from_confidence(c) for c in range(256)]
    assert ds == sorted(ds)
    with pytest.raises(ValueError):
        depth_from_confidence(256)


def test_gate_probability():
    assert gate_probability(100) == 1.0 and gate_probability(255) == 1.0
    assert gate_probability(50) == pytest.approx(0.475)
    assert gate_probability(10) == pytest.approx(0.095)
    assert gate_probability(0) == OrapConfig().zero_confidence_floor == 0.005
    ps = [gate_probability(c) for c in range(1, 256)]
    assert ps == sorted(ps)


# ------------------------------------------------------------ counters


def test_issue_rollover():
    cfg = OrapConfig()
    t = ConfidenceTable(1024, 8, 2, 100, cfg)
    e = t.lookup(0xABC)
    for _ in range(4):
        t.on_fill(e, 0)
    assert e.conf[0] == 100
    t.on_fill(e, 0)
    assert e.conf[0] == 99 and e.issue[0] == 0
    assert e.conf[1] == 100


def test_useful_rollover():
    t = ConfidenceTable(1024, 8, 2, 100, OrapConfig())
    e = t.lookup(0xABC)
    for _ in range(3):
        t.on_useful(e, 1)
    assert e.conf[1] == 100
    t.on_useful(e, 1)
    assert e.conf[1] == 101 and e.useful[1] == 0


def test_confidence_saturates():
    t = ConfidenceTable(1024, 8, 1, 255, OrapConfig())
    e = t.lookup(1)
    for _ in range(40):
        t.on_useful(e, 0)
    assert e.conf[0] == CONF_MAX
    e.conf[0] = 0
    for _ in range(40):
        t.on_fill(e, 0)
    assert e.conf[0] == 0


def test_table_geometry_and_lru():
    t = ConfidenceTable(1024, 8, 1, 0, OrapConfig())
    assert t.sets_n == 128
    keys = []
    k = 0
    target = None
    while len(keys) < 9:  # nine keys hashing to one set
        e = t.lookup(k, allocate=False)
        h = ((k * 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF) >> 48
        if target is None:
            target = h & 127
        if h & 127 == target:
            keys.append(k)
        k += 1
    for key in keys[:8]:
        t.lookup(key)
    t.lookup(keys[0])  # refresh the oldest
    t.lookup(keys[8])  # evicts keys[1]
    assert t.lookup(keys[0], allocate=False) is not None
    assert t.lookup(keys[1], allocate=False) is None
    assert len(t.sets[target]) == 8


@pytest.mark.parametrize("issue_max,inc", [(5, 1), (3, 2), (6, 4), (1, 1), (4, 3)])
def test_never_useful_stream_bound(issue_max, inc):
    cfg = dataclasses.replace(OrapConfig(), issue_max=issue_max, useful_max=1,
                              confidence_increment=inc, zero_confidence_floor=0.0)
    orap, llc, blp = make_orap(cfg)
    ip = 0x401000
    orap.ipct.lookup(ip).conf[NEXT_COLUMN] = 255
    fills = 0
    for n in range(20000):
        orap.next_column(ip, block_at(row=n % 60000, bg=n % 4), n)
        got = drain(orap, blp)
        fills += got
        if orap.ipct.lookup(ip).conf[NEXT_COLUMN] == 0 and not got:
            break
    # keep triggering: nothing more may issue
    for n in range(2000):
        orap.next_column(ip, block_at(row=(n + 7) % 60000, ba=1), n)
        fills += drain(orap, blp)
    assert fills == max_pending(issue_max, inc)


@settings(max_examples=15, deadline=None)
@given(p_offset=st.sampled_from([-0.1, 0.1]), seed=st.integers(0, 1000))
def test_equilibrium_drift(p_offset, seed):
    cfg = OrapConfig()
    target = float(target_usefulness(cfg.issue_max, cfg.useful_max))
    t = ConfidenceTable(1024, 8, 1, 128, cfg)
    e = t.lookup(5)
    rng = random.Random(seed)
    for _ in range(20000):
        t.on_fill(e, 0)
        if rng.random() < target + p_offset:
            t.on_useful(e, 0)
    if p_offset < 0:
        assert e.conf[0] < 128
    else:
        assert e.conf[0] > 128


def test_exact_target_no_drift():
    t = ConfidenceTable(1024, 8, 1, 128, OrapConfig())
    e = t.lookup(5)
    for i in range(5000):
        t.on_fill(e, 0)
        if i % 5 != 4:
            t.on_useful(e, 0)
    assert e.conf[0] == 128


# ------------------------------------------------------------ engine


def test_candidates_same_row_all_clusters():
    orap, llc, blp = make_orap()
    ip = 0x1234
    orap.ipct.lookup(ip).conf[NEXT_COLUMN] = 255
    trig = block_at(row=777, cluster=0, bg=2, ba=1)
    lines, *_ = orap.candidates(ip, trig)
    assert len(lines) == 8 * MAP.cluster_lines
    want = {block_at(row=777, cluster=k, bg=2, ba=1, line=j)
            for k in range(1, 9) for j in range(MAP.cluster_lines)}
    assert set(lines) == want
    t = MAP.decompose(trig << 6)
    for b in lines:
        c = MAP.decompose(b << 6)
        assert (c.channel, c.rank, c.bankgroup, c.bank, c.row) == (t.channel, t.rank, t.bankgroup,
                                                                 t.bank, t.row)


def test_last_cluster_no_candidates():
    orap, *_ = make_orap()
    orap.ipct.lookup(7).conf[NEXT_COLUMN] = 255
    assert orap.candidates(7, block_at(row=3, cluster=31))[0] == []


def test_cold_entries_mostly_gated():
    cfg = dataclasses.replace(OrapConfig(), ipct_init_confidence=0)
    orap, llc, blp = make_orap(cfg, seed=3)
    issued_triggers = 0
    for n in range(2000):
        if orap.next_column(0x500 + n, block_at(row=n, bg=n % 4), n):
            issued_triggers += 1
        drain(orap, blp)
    assert orap.stats.gated > 1900
    assert 0 < issued_triggers < 40


def test_hybrid_max_combine():
    # high IP confidence in a cold row
    orap, *_ = make_orap()
    orap.ipct.lookup(1).conf[NEXT_COLUMN] = 200
    assert len(orap.candidates(1, block_at(row=10))[0]) > 0
    # cold IP in a confident row
    orap, *_ = make_orap(dataclasses.replace(OrapConfig(), ipct_init_confidence=0))
    b = block_at(row=11)
    orap.rct.lookup(orap.row_key(b)).conf[0] = 200
    lines, _, _, c = orap.candidates(99, b)
    assert c == 200 and len(lines) == 7 * MAP.cluster_lines


def test_useful_credit_goes_to_hitting_ip_and_row():
    orap, *_ = make_orap()
    b = block_at(row=50, cluster=3)
    for _ in range(4):
        orap.on_useful(SimpleNamespace(engine=NEXT_COLUMN, block=b), 0xAA, 0)
    assert orap.ipct.lookup(0xAA).conf[NEXT_COLUMN] == 33
    assert orap.rct.lookup(orap.row_key(b)).conf[0] == 1
    for _ in range(4):
        orap.on_useful(SimpleNamespace(engine=HSD_ENGINE, block=b), 0xBB, 0)
    assert orap.ipct.lookup(0xBB).conf[HSD_ENGINE] == 33
    assert orap.rct.lookup(orap.row_key(b)).conf[0] == 1


def test_no_duplicates_reach_buffer():
    # the buffer counts an insert of a block it already holds as an error
    orap, llc, blp = make_orap(capacity_scale=8)
    ip = 0x77
    orap.ipct.lookup(ip).conf[NEXT_COLUMN] = 255
    for n in range(300):
        orap.next_column(ip, block_at(row=n % 5, cluster=n % 4, bg=n % 3), n)
        if n % 7 == 0:
            drain(orap, blp)
    assert blp.stats.inserted > 0
    assert blp.stats.errors == 0


def test_filters_skip_cached_and_in_flight():
    orap, llc, blp = make_orap()
    ip = 0x88
    orap.ipct.lookup(ip).conf[NEXT_COLUMN] = 40  # depth 2
    trig = block_at(row=4, bg=1)
    lines = orap.candidates(ip, trig)[0]
    llc.lines[lines[0]] = object()
    llc.mshr[lines[1]] = object()
    orap.pot.record(lines[2])
    assert orap.next_column(ip, trig, 0) == 1
    assert list(blp.entries) == [lines[3]]


def test_buffer_full_counts_rejections():
    orap, llc, blp = make_orap()
    ip = 0x99
    orap.ipct.lookup(ip).conf[NEXT_COLUMN] = 255
    assert orap.next_column(ip, block_at(row=8), 0) == 4
    assert orap.stats.buffer_rejected == 12


def test_drop_returns_inflight_budget():
    orap, llc, blp = make_orap()
    ip = 0x42
    orap.ipct.lookup(ip).conf[NEXT_COLUMN] = 255
    orap.next_column(ip, block_at(row=8), 0)
    e = orap.ipct.lookup(ip)
    assert e.inflight[NEXT_COLUMN] == 4
    for b in list(blp.entries):
        blp.drop(b)
        orap.on_drop(b)
    assert e.inflight[NEXT_COLUMN] == 0 and not orap.outstanding


# ------------------------------------------------------------------ POT


def test_pot_fresh_then_duplicate():
    pot = PageOccupancyTable()
    assert pot.filter_and_record(0x1234) == "fresh"
    assert pot.filter_and_record(0x1234) == "duplicate"
    assert pot.filter_and_record(0x1235) == "fresh"


def test_pot_forgets_oldest_page():
    pot = PageOccupancyTable(256, 8)
    pages = list(range(257 * 32))  # plenty of pages, some sets overflow
    # replay oracle: per-set LRU of page ids
    oracle: dict[int, list[int]] = {}
    for p in pages:
        blk = p << 6
        s = pot._set(p)
        key = id(s)
        lst = oracle.setdefault(key, [])
        fresh = p not in lst
        assert pot.filter_and_record(blk) == ("fresh" if fresh else "duplicate")
        if p in lst:
            lst.remove(p)
        elif len(lst) >= 8:
            lst.pop(0)
        lst.append(p)
    # the very first page has long been evicted
    assert pot.filter_and_record(0) == "fresh"
