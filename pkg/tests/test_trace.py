import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from orapsim.trace import (CHURN_PATTERN, HEADER, MAGIC, Trace, TraceError, TraceRecord, TraceSpec,
                           churn_trace, generate, parse_trace, read_trace, write_trace)


def test_unit_stride_stream():
    tr = generate(TraceSpec(generator="stream", length_records=4))
    assert tr.addresses.tolist() == [0, 64, 128, 192]
    assert len({r.ip for r in tr}) == 1


def test_stride_generator():
    tr = generate(TraceSpec(generator="stride", stride_bytes=128, length_records=3))
    assert tr.addresses.tolist() == [0, 128, 256]


def test_cyclic_six_blocks():
    tr = generate(TraceSpec(generator="cyclic", footprint_bytes=6 * 64, length_records=14))
    blocks = (tr.addresses // 64).tolist()
    assert blocks == [0, 1, 2, 3, 4, 5, 0, 1, 2, 3, 4, 5, 0, 1]


def test_churn_trace_pattern():
    tr = churn_trace(repeats=2)
    assert (tr.addresses // 64).tolist() == list(CHURN_PATTERN) * 2
    assert len(set(CHURN_PATTERN)) == 6


def test_record_fields():
    recs = [TraceRecord(0, 0x401000, 0x1000), TraceRecord(3, 0xFFFF_FFFF_FFFF, 0x2040, True)]
    tr = Trace.from_records(recs)
    assert list(tr) == recs
    assert tr[1].kind == "store" and tr[0].kind == "load"
    assert tr.instructions == 4


def test_empty_round_trip(tmp_path):
    p = tmp_path / "e.trc"
    write_trace(p, [])
    assert p.stat().st_size == HEADER.size
    assert len(read_trace(p)) == 0


def test_random_round_trip(tmp_path):
    tr = generate(TraceSpec(generator="random", length_records=1000, ip_count=7, store_fraction=0.3))
    p = tmp_path / "r.trc"
    write_trace(p, tr)
    back = read_trace(p)
    assert back == tr
    # independent decode of the documented byte layout
    raw = p.read_bytes()
    assert raw[:8] == MAGIC and len(raw) == 16 + 24 * 1000
    words = np.frombuffer(raw[16:], dtype="<u8").reshape(-1, 3)
    for i in (0, 17, 999):
        r = tr[i]
        assert int(words[i, 0]) == r.instr_index
        assert int(words[i, 1]) == r.ip
        assert int(words[i, 2]) == r.address | (int(r.is_store) << 63)


def test_truncated_file_reports_offset(tmp_path):
    tr = generate(TraceSpec(length_records=10))
    data = tr.to_bytes()[:-5]
    with pytest.raises(TraceError, match=f"offset {16 + 9 * 24}"):
        parse_trace(data)


def test_bad_header():
    with pytest.raises(TraceError, match="header"):
        parse_trace(b"short")
    with pytest.raises(TraceError, match="magic"):
        parse_trace(b"NOTATRCE" + bytes(8))


def test_decreasing_instr_rejected():
    tr = Trace.from_arrays([0, 5, 3], [1, 1, 1], [0, 64, 128])
    with pytest.raises(TraceError, match=f"offset {16 + 2 * 24}"):
        parse_trace(tr.to_bytes())


def test_footprint_exceeds_memory():
    with pytest.raises(TraceError, match="exceeds"):
        generate(TraceSpec(footprint_bytes=1 << 34), physical_bytes=1 << 33)


def test_invalid_specs():
    with pytest.raises(TraceError):
        generate(TraceSpec(length_records=0))
    with pytest.raises(TraceError):
        generate(TraceSpec(stride_bytes=96))
    with pytest.raises(TraceError):
        generate(TraceSpec(generator="zipf"))


def test_concat_shifts_instructions():
    a = generate(TraceSpec(length_records=3, instr_gap=2))
    b = a.concat(a)
    assert [r.instr_index for r in b] == [0, 2, 4, 5, 7, 9]


@settings(max_examples=30, deadline=None)
@given(gen=st.sampled_from(["stream", "stride", "cyclic", "random", "mixed"]),
       seed=st.integers(0, 2**32), n=st.integers(1, 300))
def test_generator_deterministic(gen, seed, n):
    spec = TraceSpec(generator=gen, seed=seed, length_records=n, stride_bytes=256, stream_count=3,
                     footprint_bytes=1 << 24)
    assert generate(spec).to_bytes() == generate(spec).to_bytes()


@settings(max_examples=30, deadline=None)
@given(k=st.integers(1, 6), seed=st.integers(0, 1000), n=st.integers(1, 2000))
def test_streams_monotone_and_unique(k, seed, n):
    tr = generate(TraceSpec(generator="stream", stream_count=k, seed=seed, length_records=n))
    addrs = tr.addresses.tolist()
    assert len(set(addrs)) == n
    per_ip: dict[int, list[int]] = {}
    for r in tr:
        per_ip.setdefault(r.ip, []).append(r.address)
    for seq in per_ip.values():
        assert all(b - a == 64 for a, b in zip(seq, seq[1:]))
    instr = [r.instr_index for r in tr]
    assert instr == sorted(instr)
