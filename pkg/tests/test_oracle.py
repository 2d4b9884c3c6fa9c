import json
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cpq.distributions import DiscreteDistribution, make_uniform, sample
from cpq._rng import derive_rng
from cpq.errors import BudgetExhausted, DuplicateIdError, OracleIOError, ParseError
from cpq.oracle import (
    ExternalOracle,
    QueryRecord,
    ReplayOracle,
    SyntheticOracle,
    dump_records,
    load_records,
    next_sample,
    parse_record,
)

ECHO_STUB = r"""
import json, sys
for line in sys.stdin:
    req = json.loads(line)
    print(json.dumps({"label": 5, "echo": req["id"], "n": req["n"]}), flush=True)
"""
COUNTER_STUB = r"""
import json, sys
k = 0
for line in sys.stdin:
    json.loads(line)
    print(json.dumps({"label": k}), flush=True)
    k += 1
"""
SILENT_STUB = "import sys, time\nfor line in sys.stdin:\n    time.sleep(30)\n"
GARBAGE_STUB = "import sys\nfor line in sys.stdin:\n    print('not json', flush=True)\n"
STRING_LABEL_STUB = "import sys\nfor line in sys.stdin:\n    print('{\"label\": \"x\"}', flush=True)\n"
EXIT_STUB = "import sys\nsys.stdin.readline()\n"


def _stub(code):
    return [sys.executable, "-c", code]


class TestReplay:
    def test_replays_in_order_then_exhausts(self):
        o = ReplayOracle([QueryRecord("q", 1, (3, 3, 7))])
        assert [next_sample(o, "q") for _ in range(3)] == [3, 3, 7]
        with pytest.raises(BudgetExhausted):
            o.next_sample("q")

    def test_reset_restarts_stream(self):
        o = ReplayOracle([QueryRecord("q", 1, (1, 2)), QueryRecord("r", 1, (9,))])
        o.next_sample("q")
        o.next_sample("r")
        o.reset("q")
        assert o.next_sample("q") == 1
        with pytest.raises(BudgetExhausted):
            o.next_sample("r")
        o.reset()
        assert o.next_sample("r") == 9

    def test_duplicate_ids(self):
        with pytest.raises(DuplicateIdError):
            ReplayOracle([QueryRecord("q", 1, (1,)), QueryRecord("q", 2, (2,))])


class TestRecords:
    def test_parse_line(self):
        rec = parse_record('{"id":"q1","truth":2,"samples":[2,5,2]}')
        assert rec == QueryRecord("q1", 2, (2, 5, 2))
        assert rec.max_length == 3

    def test_missing_truth_and_extra_fields(self):
        rec = parse_record('{"id":"q1","samples":[1],"question":"?"}')
        assert rec.truth is None

    @pytest.mark.parametrize("line", [
        '{"id":"q1","truth":2,"samples":[]}',
        '{"id":"q1","truth":2}',
        '{"id":"q1","truth":2,"samples":[1.5]}',
        '{"id":"q1","truth":2,"samples":[true]}',
        '{"id":"q1","truth":"2","samples":[1]}',
        '{"id":"","samples":[1]}',
        '{"id":3,"samples":[1]}',
        '[1,2]',
        '{"id":',
    ])
    def test_malformed(self, line):
        with pytest.raises(ParseError):
            parse_record(line)

    def test_load_reports_line_number(self, tmp_path):
        path = tmp_path / "log.jsonl"
        path.write_text('{"id":"a","truth":1,"samples":[1]}\n\n{"id":"b","truth":1,"samples":[]}\n')
        with pytest.raises(ParseError) as err:
            load_records(path)
        assert err.value.line == 3
        assert str(err.value).startswith("line 3:")

    def test_load_duplicate(self, tmp_path):
        path = tmp_path / "log.jsonl"
        path.write_text('{"id":"a","samples":[1]}\n{"id":"a","samples":[2]}\n')
        with pytest.raises(DuplicateIdError) as err:
            load_records(path)
        assert err.value.line == 2

    def test_round_trip_300_records(self, tmp_path):
        rng = np.random.default_rng(0)
        records = [
            QueryRecord(f"q{i}", int(rng.integers(0, 5)) if i % 7 else None,
                        tuple(int(x) for x in rng.integers(0, 20, size=int(rng.integers(1, 40)))))
            for i in range(300)
        ]
        path = tmp_path / "log.jsonl"
        path.write_text(dump_records(records))
        assert load_records(path) == records
        oracle = ReplayOracle(load_records(path))
        for rec in records:
            assert [oracle.next_sample(rec.id) for _ in rec.samples] == list(rec.samples)


class TestSynthetic:
    def test_point_mass(self):
        o = SyntheticOracle({"x": DiscreteDistribution([1.0])}, seed=4)
        assert {o.next_sample("x") for _ in range(50)} == {0}

    def test_stream_is_fixed_by_seed_and_id(self):
        d = make_uniform(10)
        rng = derive_rng(9, "oracle:x")
        expected = [sample(d, rng) for _ in range(20)]
        o = SyntheticOracle({"x": d, "y": d}, seed=9)
        got = []
        for _ in range(20):
            got.append(o.next_sample("x"))
            o.next_sample("y")  # interleaving must not matter
        assert got == expected
        o.reset("x")
        assert [o.next_sample("x") for _ in range(20)] == expected
        assert o.prefix("x", 20).tolist() == expected

    @given(st.integers(0, 2**31), st.integers(0, 50))
    def test_prefix_matches_live_session(self, seed, n):
        d = DiscreteDistribution([0.7, 0.2, 0.1])
        o = SyntheticOracle({"q": d}, seed)
        assert o.prefix("q", n).tolist() == [o.next_sample("q") for _ in range(n)]


class TestExternal:
    def test_echo_round_trip(self):
        with ExternalOracle(_stub(ECHO_STUB), timeout=10) as o:
            assert o.next_sample("q1") == 5
            assert o.next_sample("q2") == 5

    def test_requests_are_sequential(self):
        with ExternalOracle(_stub(COUNTER_STUB), timeout=10) as o:
            assert [o.next_sample("q") for _ in range(5)] == [0, 1, 2, 3, 4]

    def test_timeout(self):
        o = ExternalOracle(_stub(SILENT_STUB), timeout=0.5)
        with pytest.raises(OracleIOError, match="timed out"):
            o.next_sample("q")
        o.close()

    @pytest.mark.parametrize("code", [GARBAGE_STUB, STRING_LABEL_STUB])
    def test_malformed_response(self, code):
        with ExternalOracle(_stub(code), timeout=10) as o:
            with pytest.raises(OracleIOError):
                o.next_sample("q")

    def test_process_exit(self):
        with ExternalOracle(_stub(EXIT_STUB), timeout=10) as o:
            with pytest.raises(OracleIOError):
                o.next_sample("q")

    def test_request_format(self):
        with ExternalOracle(_stub(ECHO_STUB), timeout=10) as o:
            o._proc.stdin.write(json.dumps({"id": "raw", "n": 1}) + "\n")
            o._proc.stdin.flush()
            reply = json.loads(o._lines.get(timeout=10))
        assert reply == {"label": 5, "echo": "raw", "n": 1}
