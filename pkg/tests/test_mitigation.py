import random

import pytest
from hypothesis import given, settings, strategies as st

from conftest import DramBench
from orapsim.config import preset, with_mitigation
from orapsim.dram import Timing, audit_timing
from orapsim.mitigation import (PracState, RfmState, audit_bound, disturbance_audit, prac_expected,
                                rfm_expected)

BASE = preset("paper-1core")


# Requests are spaced so no two same-row requests ever queue together behind a
# REF, RFM or mitigation blackout; then every request costs exactly one ACT.
# Rows sit far above the refresh pointer's reach during these short runs.
SPACING = 1300


def hammer(bench, rows, n, spacing=SPACING, bg=0, ba=0, start=0):
    for i in range(n):
        bench.read(bench.block(bg=bg, ba=ba, row=rows[i % len(rows)]), start + i * spacing)
    return start + n * spacing


def test_rfm_state_threshold():
    s = RfmState(2, 16)
    fired = [s.on_act(0) for _ in range(16)]
    assert fired == [False] * 15 + [True]
    assert s.needs_rfm(0) and not s.needs_rfm(1)
    s.on_rfm(0)
    assert s.raa[0] == 0 and s.issued == [1, 0]


@pytest.mark.parametrize("acts,expect", [(15, 0), (16, 1), (47, 2), (48, 3)])
def test_rfm_count_single_bank(acts, expect):
    cfg = with_mitigation(BASE, "rfm")
    b = DramBench(cfg)
    end = hammer(b, [5001, 5002], acts)
    b.run(end + 5000)
    assert b.dram.n_act == acts
    # an RFM is owed once the counter reaches the threshold and issued before the next ACT
    owed = b.dram.channels[0].rfm.needs_rfm(0)
    assert len(b.cmds("RFM")) + owed == expect
    assert audit_timing(b.dram.log, Timing.from_config(cfg)) == []


def test_rfm_counts_match_replay_oracle():
    cfg = with_mitigation(BASE, "rfm")
    b = DramBench(cfg)
    rng = random.Random(4)
    for i in range(3000):
        bg, ba = rng.randrange(4), rng.randrange(4)
        b.read(b.block(ch=rng.randrange(2), bg=bg, ba=ba, row=rng.randrange(64)), i * 20)
    b.run(3000 * 20 + 20000)
    # independent replay of the command log
    acts: dict = {}
    rfms: dict = {}
    for c, kind, ch, ra, bg, ba, row, col in b.dram.log:
        key = (ch, ra, bg, ba)
        if kind == "ACT":
            acts[key] = acts.get(key, 0) + 1
        elif kind == "RFM":
            rfms[key] = rfms.get(key, 0) + 1
    for key, n in acts.items():
        assert abs(rfms.get(key, 0) - n // 16) <= 1
    assert sum(rfms.values()) >= sum(rfm_expected(acts.values(), 16)) - len(acts)
    assert audit_timing(b.dram.log, Timing.from_config(cfg)) == []


def test_prac_state_alert_at_threshold():
    s = PracState(1, 1000, 512, 2)
    alerts = [s.on_precharge(0, 50) for _ in range(512)]
    assert alerts.index(True) == 511 and alerts.count(True) == 1
    row, victims = s.mitigate(0)
    assert row == 50 and sorted(victims) == [48, 49, 51, 52]
    assert s.counters[0].get(50, 0) == 0 and s.alert[0] is None


def test_prac_neighbours_clipped_at_edges():
    s = PracState(1, 100, 4, 2)
    assert sorted(s.neighbours(0)) == [1, 2]
    assert sorted(s.neighbours(99)) == [97, 98]


def test_prac_refresh_resets_only_covered_rows():
    s = PracState(1, 1000, 512, 2)
    for r in (8, 10, 13, 14, 20):
        s.on_precharge(0, r)
    s.on_refresh(0, 8, 8)
    # rows whose whole +-2 neighbourhood lies in [8, 16) are cleared
    assert set(s.counters[0]) == {8, 14, 20}


@settings(max_examples=60, deadline=None)
@given(ops=st.lists(st.tuples(st.sampled_from(["pre", "mit", "ref"]), st.integers(0, 40)),
                    max_size=400),
       threshold=st.integers(1, 12))
def test_prac_safety_property(ops, threshold):
    s = PracState(1, 64, threshold, 2)
    for op, row in ops:
        if op == "pre":
            s.on_precharge(0, row)
        elif op == "mit" and s.alert[0] is not None:
            s.mitigate(0)
        elif op == "ref":
            s.on_refresh(0, row, 8)
        over = [r for r, v in s.counters[0].items() if v >= threshold]
        assert all(v >= 0 for v in s.counters[0].values())
        if over:
            assert s.alert[0] is not None


@pytest.mark.parametrize("acts,expect", [(511, 0), (512, 1)])
def test_prac_single_row(acts, expect):
    cfg = with_mitigation(BASE, "prac")
    b = DramBench(cfg)
    # a distant second row forces every access to re-activate the target
    for i in range(acts):
        b.read(b.block(row=5300), i * 2 * SPACING)
        b.read(b.block(row=6000 + 10 * (i % 4)), i * 2 * SPACING + SPACING)
    b.run(acts * 2 * SPACING + 5000)
    assert sum(1 for e in b.cmds("ACT") if e[6] == 5300) == acts
    mits = b.cmds("PRAC_MITIGATE")
    assert len(mits) == expect
    if expect:
        assert mits[0][6] == 5300
    assert audit_timing(b.dram.log, Timing.from_config(cfg)) == []


def test_prac_two_rows_independent():
    cfg = with_mitigation(BASE, "prac")
    b = DramBench(cfg)
    end = hammer(b, [5100, 5200], 2 * 700 + 6)
    b.run(end + 5000)
    per_row: dict = {}
    for e in b.cmds("ACT"):
        per_row[e[6]] = per_row.get(e[6], 0) + 1
    assert len(b.cmds("PRAC_MITIGATE")) == prac_expected(per_row.values(), 512)


def test_audit_without_mitigation_exceeds():
    b = DramBench(BASE)
    end = hammer(b, [40100, 40102], 10000)
    b.run(end + 2000)
    res = disturbance_audit(b.dram.log, 2, BASE.dram.rows, b.dram.rows_per_ref)
    assert res.acts == 10000
    assert res.max_disturbance >= 10000
    assert res.worst_row[-1] == 40101


def test_audit_with_prac_bounded():
    cfg = with_mitigation(BASE, "prac")
    b = DramBench(cfg)
    end = hammer(b, [40100, 40102], 6000)
    b.run(end + 2000)
    res = disturbance_audit(b.dram.log, 2, BASE.dram.rows, b.dram.rows_per_ref)
    assert res.mitigations > 0
    assert res.max_disturbance <= audit_bound("prac", 512, 2)


def test_audit_with_rfm_bounded():
    cfg = with_mitigation(BASE, "rfm")
    b = DramBench(cfg)
    end = hammer(b, [40100, 40102, 40104], 3000)
    b.run(end + 2000)
    res = disturbance_audit(b.dram.log, 2, BASE.dram.rows, b.dram.rows_per_ref)
    assert res.acts == 3000
    assert res.rfms == 3000 // 16
    assert res.max_disturbance <= audit_bound("rfm", 16, 2)


def test_audit_replay_small_log():
    log = [(i, "ACT", 0, 0, 0, 0, 10, -1) for i in range(5)]
    res = disturbance_audit(log, 2, 100, 8)
    assert res.max_disturbance == 5
    log.append((6, "PRAC_MITIGATE", 0, 0, 0, 0, 10, -1))
    log += [(7 + i, "ACT", 0, 0, 0, 0, 10, -1) for i in range(3)]
    assert disturbance_audit(log, 2, 100, 8).max_disturbance == 5
    # a refresh covering the victims clears their tallies
    log = [(i, "ACT", 0, 0, 0, 0, 10, -1) for i in range(4)] + [(9, "REF", 0, 0, 0, 0, 8, -1)]
    log += [(10, "ACT", 0, 0, 0, 0, 10, -1)]
    res = disturbance_audit(log, 2, 100, 8)
    assert res.max_disturbance == 4 and res.refreshes == 1


def test_audit_bound_values():
    assert audit_bound("prac", 512, 2) == 2048
    assert audit_bound("rfm", 16, 2) == 64
    with pytest.raises(ValueError):
        audit_bound("none", 512, 2)
