import json

import numpy as np
import pytest

from sendrate import (ActorTraits, Event, EventStream, RiskSetPolicy,
                      StreamError, export_events, ingest_events, ingest_traits,
                      risk_set)
from sendrate.events import MalformedRowError


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


class TestIngest:
    def test_csv_row_maps_to_event(self, tmp_path):
        path = write(tmp_path, "e.csv",
                     'time,sender,receivers\n100.0,3,"5;7"\n')
        stream, report = ingest_events(path, actor_count=8)
        ev = stream.events[0]
        assert ev.time == 100.0 and ev.sender == 3 and ev.receivers == (5, 7)
        assert report.retained == 1

    def test_out_of_order_rows_sorted_with_warning(self, tmp_path):
        path = write(tmp_path, "e.csv",
                     "time,sender,receivers\n2.0,0,1\n1.0,1,0\n")
        with pytest.warns(UserWarning):
            stream, _ = ingest_events(path, actor_count=2)
        assert [e.time for e in stream] == [1.0, 2.0]

    def test_recipient_cutoff_drops_and_counts(self, tmp_path):
        path = write(tmp_path, "e.csv",
                     'time,sender,receivers\n1.0,0,"1;2;3;4;5;6"\n2.0,0,1\n')
        stream, report = ingest_events(path, cutoff=5, actor_count=7)
        assert len(stream) == 1
        assert report.dropped_oversize == 1
        assert report.retained + report.dropped_oversize == report.total_rows

    def test_jsonl_roundtrip_is_idempotent(self, tmp_path, rng):
        rows = [{"time": float(m), "sender": int(rng.integers(4)),
                 "receivers": [int((rng.integers(4) + 1 + m) % 5)]}
                for m in range(20)]
        for r in rows:
            if r["sender"] in r["receivers"]:
                r["receivers"] = [(r["sender"] + 1) % 5]
        path = write(tmp_path, "e.jsonl",
                     "\n".join(json.dumps(r) for r in rows) + "\n")
        stream, _ = ingest_events(path, format="jsonl")
        out1 = str(tmp_path / "o1.jsonl")
        export_events(stream, out1, format="jsonl")
        stream2, _ = ingest_events(out1, format="jsonl")
        out2 = str(tmp_path / "o2.jsonl")
        export_events(stream2, out2, format="jsonl")
        assert open(out1).read() == open(out2).read()

    def test_csv_roundtrip_is_idempotent(self, tmp_path):
        path = write(tmp_path, "e.csv",
                     'time,sender,receivers\n1.5,0,"1;2"\n2.25,2,0\n')
        stream, _ = ingest_events(path)
        out1 = str(tmp_path / "o1.csv")
        export_events(stream, out1)
        stream2, _ = ingest_events(out1)
        out2 = str(tmp_path / "o2.csv")
        export_events(stream2, out2)
        assert open(out1).read() == open(out2).read()

    def test_malformed_row_reports_line(self, tmp_path):
        path = write(tmp_path, "e.csv", "time,sender,receivers\n1.0,x,1\n")
        with pytest.raises(MalformedRowError, match="line 2"):
            ingest_events(path)

    def test_unknown_actor_id(self, tmp_path):
        path = write(tmp_path, "e.csv", "time,sender,receivers\n1.0,9,1\n")
        with pytest.raises(MalformedRowError, match="unknown actor"):
            ingest_events(path, actor_count=3)

    def test_empty_stream(self, tmp_path):
        path = write(tmp_path, "e.csv", "time,sender,receivers\n")
        with pytest.raises(StreamError):
            ingest_events(path)

    def test_densification_preserves_labels(self, tmp_path):
        path = write(tmp_path, "e.csv",
                     "time,sender,receivers\n1.0,100,200\n2.0,200,100\n")
        stream, report = ingest_events(path)
        assert stream.actor_count == 2
        assert stream.original_ids == [100, 200]
        out = str(tmp_path / "o.csv")
        export_events(stream, out)
        assert "100,200" in open(out).read()


class TestEventInvariants:
    def test_receivers_deduplicated_and_sorted(self):
        assert Event(1.0, 0, (3, 1, 3)).receivers == (1, 3)

    def test_empty_receivers_rejected(self):
        with pytest.raises(StreamError):
            Event(1.0, 0, ())

    def test_self_loop_rejected_by_stream(self):
        with pytest.raises(StreamError):
            EventStream([Event(1.0, 0, (0, 1))], 2)

    def test_time_regression_not_allowed_in_state(self):
        from sendrate.covariates import CovariateSpec, DynamicState
        spec = CovariateSpec(dyadic=[("send", "indicator")])
        state = DynamicState(spec, 3)
        state.advance(Event(5.0, 0, (1,)))
        with pytest.raises(StreamError):
            state.advance(Event(4.0, 1, (2,)))


class TestTraits:
    def test_products(self):
        traits = ActorTraits(["L", "J", "T", "F"],
                             [[1, 1, 0, 0], [0, 0, 0, 1]])
        full = traits.with_products([("L", "J"), ("T", "F")])
        assert full.column("LJ").tolist() == [1, 0]
        assert full.column("TF").tolist() == [0, 0]

    def test_enron_style_counts_validate(self):
        # Department (L/T/other) x seniority (J/S) x gender (F/M) cell
        # counts chosen to match the published marginals.
        cells = {
            ("L", "J", "F"): 6, ("L", "J", "M"): 6,
            ("L", "S", "F"): 7, ("L", "S", "M"): 6,
            ("T", "J", "F"): 5, ("T", "J", "M"): 19,
            ("T", "S", "F"): 5, ("T", "S", "M"): 31,
            ("O", "J", "F"): 16, ("O", "J", "M"): 30,
            ("O", "S", "F"): 4, ("O", "S", "M"): 21,
        }
        rows = []
        for (dept, sen, gen), count in cells.items():
            row = [int(dept == "L"), int(dept == "T"),
                   int(sen == "J"), int(gen == "F")]
            rows += [row] * count
        traits = ActorTraits(["L", "T", "J", "F"], rows).with_products(
            [("L", "J"), ("T", "J"), ("L", "F"), ("T", "F"), ("J", "F")])
        counts = traits.counts()
        assert traits.actor_count == 156
        assert counts == {"L": 25, "T": 60, "J": 82, "F": 43, "LJ": 12,
                          "TJ": 24, "LF": 13, "TF": 10, "JF": 27}

    def test_ingest_traits_rejects_non_binary(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("actor,a\n0,2\n")
        with pytest.raises(StreamError):
            ingest_traits(str(p))

    def test_ingest_traits_row_mismatch(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("actor,a\n0,1\n1,0\n")
        with pytest.raises(StreamError):
            ingest_traits(str(p), actor_count=3)


class TestRiskSets:
    def test_all_but_sender(self):
        policy = RiskSetPolicy()
        assert risk_set(policy, 0.0, 2, 4) == [0, 1, 3]

    def test_all_but_sender_size_155(self):
        policy = RiskSetPolicy()
        rs = risk_set(policy, 10.0, 17, 156)
        assert len(rs) == 155 and 17 not in rs

    def test_static_passthrough(self):
        policy = RiskSetPolicy("static", static_sets={0: {1, 2}})
        assert risk_set(policy, 0.0, 0, 5) == [1, 2]
        assert risk_set(policy, 99.0, 0, 5) == [1, 2]

    def test_deterministic(self):
        policy = RiskSetPolicy("callback", callback=lambda t, i: {1, 3})
        assert risk_set(policy, 1.0, 0, 5) == risk_set(policy, 1.0, 0, 5)
