from fractions import Fraction
from types import SimpleNamespace

from hypothesis import given, settings, strategies as st

from orapsim.addrmap import AddressMapping
from orapsim.blp_buffer import BankBuffer
from orapsim.config import OrapConfig, preset
from orapsim.hsd import Hsd, p_req
from orapsim.orap import Orap


def run_stream(h, ip, page, length, stride=1):
    out = []
    for k in range(length):
        out.append(h.on_access(ip, page * 64 + k * stride, 0)[1])
    return out


def train(h, depths):
    """One stream per entry of ``depths``, each in its own page, then close the epoch."""
    for n, d in enumerate(depths):
        run_stream(h, 0x1000 + n, 1000 + 3 * n, d)
    h.rollover()


def test_p_req_endpoints():
    assert p_req(0) == 0.9
    assert abs(p_req(255) - 0.3) < 1e-12
    assert abs(p_req(170) - 0.5) < 1e-12


def test_p_req_monotone():
    ps = [p_req(c) for c in range(256)]
    assert all(a >= b for a, b in zip(ps, ps[1:]))
    assert min(ps) >= 0.3 and max(ps) <= 0.9


def test_histogram_counts_streams_reaching_depth():
    h = Hsd()
    train(h, [3, 5])
    assert h.active[1:7] == [2, 2, 2, 1, 1, 0]
    assert h.training == [0] * 65


def test_all_depth_one_epoch():
    h = Hsd()
    train(h, [1] * 40)
    assert h.active[1] == 40 and h.active[2] == 0
    assert h.continuation(1, 2) == 0.0
    assert h.lookahead(1, 0.01) == 0
    # a new unit-stride stream gets nothing beyond its own accesses
    assert run_stream(h, 0x9, 7, 4) == [[], [], [], []]


def test_all_depth_64_epoch():
    h = Hsd()
    train(h, [64] * 10)
    assert all(h.active[k] == 10 for k in range(1, 65))
    for d in range(1, 65):
        assert h.lookahead(d, 0.9) == 64 - d
    out = run_stream(h, 0x77, 50, 3)
    assert out[0] == []
    assert out[1] == [50 * 64 + k for k in range(2, 64)]
    assert out[2] == []  # already covered


def test_mixed_8_and_64_epoch():
    h = Hsd()
    train(h, [8] * 20 + [64] * 20)
    assert h.continuation(8, 9) == 0.5
    assert h.lookahead(8, 0.5) == 56
    assert h.lookahead(8, 0.5 + 1e-9) == 0


def test_uniform_histogram_default_requirement():
    h = Hsd()
    # 64 streams ending at every depth 1..64: P(>=k | >=d) = (65-k)/(65-d)
    train(h, list(range(1, 65)))
    for d in (2, 10, 40):
        want = sum(1 for k in range(d + 1, 65) if Fraction(65 - k, 65 - d) >= Fraction(1, 2))
        assert h.lookahead(d, 0.5) == want
    assert h.lookahead(2, p_req(170)) == 31


def test_confidence_lowers_requirement():
    h = Hsd()
    h.active = [0] + [int(1000 * 0.8 ** (k - 1)) for k in range(1, 65)]
    low, high = h.lookahead(2, p_req(0)), h.lookahead(2, p_req(255))
    assert low == 0 and high == 5
    assert all(h.lookahead(3, p_req(c)) <= h.lookahead(3, p_req(c + 1)) for c in range(255))


def test_epoch_rolls_after_counter_saturates():
    h = Hsd()
    for n in range(8191):
        h.on_access(1, n, 0)
    assert h.epochs == 0
    h.on_access(1, 8191, 0)
    assert h.epochs == 1 and h.epoch_count == 0
    assert sum(h.training) <= 1 and h.active[1] > 0  # the rolling access opens the new epoch


def test_collation_by_page():
    h = Hsd()
    h.on_access(0xA, 640, 0)
    h.on_access(0xB, 641, 0)  # different IP, same page: same stream
    assert len(h.streams) == 1 and h.streams[0].depth == 2


def test_stream_cap_evicts_oldest():
    h = Hsd()
    for n in range(32):
        h.on_access(0x100 + n, (10 + 2 * n) * 64, 0)
    h.on_access(0x100, 10 * 64 + 1, 0)  # refresh stream 0
    h.on_access(0x999, 5000 * 64, 0)
    assert len(h.streams) == 32
    ips = {s.ip for s in h.streams}
    assert 0x100 in ips and 0x101 not in ips and 0x999 in ips
    assert h.evictions == 1


def test_negative_stride_stream():
    h = Hsd()
    train(h, [64] * 4)
    base = 20 * 64
    h.on_access(3, base + 63, 0)
    out = h.on_access(3, base + 61, 0)[1]
    assert out == [base + 61 - 2 * k for k in range(1, 31)]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 255)), min_size=1, max_size=400),
       st.integers(0, 255))
def test_depth_and_reach_bounded(steps, conf):
    h = Hsd()
    train(h, [64] * 3 + [4] * 3)
    block = 100 * 64
    for ip, delta in steps:
        block += delta % 9 - 4 if delta < 200 else 64 * (delta - 199)
        block = max(block, 0)
        _, out = h.on_access(ip, block, conf)
        assert len(h.streams) <= 32
        assert all(s.depth <= 64 for s in h.streams)
        for b in out:
            assert b >> 6 == block >> 6
            assert 0 < abs(b - block) <= 64 * 4


def test_hsd_miss_triggers_next_column():
    cfg = OrapConfig()
    m = AddressMapping.preset("zen4", preset("paper-1core").dram)
    llc = SimpleNamespace(lines={}, mshr={})
    blp = BankBuffer(16, 64, 1)
    o = Orap(cfg, m, llc, blp, 0, seed=2, hsd=Hsd(cfg))
    o.ipct.lookup(5).conf[0] = 255
    before = o.stats.triggers
    o.on_hsd_miss(4096 * 64 + 3, 5, 0)
    assert o.stats.triggers == before + 1 and o.stats.nc_from_hsd == 1
    assert o.stats.inserted > 0
