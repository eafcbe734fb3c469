import csv
import hashlib
import json
import math
from fractions import Fraction

import pytest

from satkex import harness
from satkex.harness import (
    AggregateResult,
    ExperimentConfig,
    analytic_latency_oracle,
    compare_reference,
    emit,
    load_reference,
    load_results,
    sweep,
)
from satkex.netsim import Link, Scenario, build_scenario, run_handshake


def test_reference_table_transcription():
    ref = load_reference()
    assert ref[("latency", "TB2", "I", "GEO")] == 1.1444
    assert ref[("latency", "LW1", "III", "MEO")] == 1.209255
    assert ref[("latency", "LW3", "I", "GEO")] == ref[("latency", "LW3", "III", "GEO")] == 1.2541
    assert ref[("bytes", "LW3", "I", "")] == 725 and ref[("bytes", "LW2", "III", "")] == 10715
    assert sum(1 for k in ref if k[0] == "latency") == 30
    assert sum(1 for k in ref if k[0] == "bytes") == 10


def test_oracle_examples():
    assert analytic_latency_oracle("TB2", "GEO", 10) == pytest.approx(1147.976, abs=1e-9)
    assert analytic_latency_oracle("LW3", "LEO", 0) == pytest.approx(72.448, abs=1e-9)
    flat = Scenario("flat", [Link("initiator", "responder", None, 0.0)])
    assert analytic_latency_oracle("TB1", flat, 0) == 0.0


def test_oracle_serialization_by_hand():
    # one 5 Mbps hop, two datagrams of 1000 and 500 bytes: 1.6 + 0.8 ms behind each other
    sc = Scenario("hop", [Link("initiator", "responder", 5e6, 1.0)], processing_ms_per_message=0.0)
    assert analytic_latency_oracle("LW3", sc, 0, datagram_sizes=[[1000, 500]]) == 1.0 + 2.4
    # two hops pipeline: the second datagram finishes on hop 2 after max(hop1, hop2) chains
    sc2 = Scenario("two", [Link("initiator", "m", 5e6, 0.0), Link("m", "responder", 5e6, 0.0)], 0.0)
    expected = Fraction(1000 * 8, 5000) + Fraction(1000 * 8, 5000) + Fraction(500 * 8, 5000)
    assert analytic_latency_oracle("LW3", sc2, 0, datagram_sizes=[[1000, 500]]) == float(expected)


@pytest.mark.parametrize("variant", ["TB1", "LW1", "LW3"])
@pytest.mark.parametrize("scenario", ["LEO", "GEO"])
def test_oracle_equals_simulator(variant, scenario):
    report = run_handshake(build_scenario(scenario), variant, "III", seed=5, jitter=False)
    assert report.completion_ms == analytic_latency_oracle(variant, scenario, 10, level="III")


def test_sweep_cardinality_and_determinism():
    cfg = ExperimentConfig(runs=2)
    results = sweep(cfg)
    assert len(results) == 30
    assert [r.key for r in results] == sorted(
        (r.key for r in results),
        key=lambda k: (harness.VARIANT_ORDER.index(k[0]), harness.LEVEL_ORDER.index(k[1]), ("LEO", "MEO", "GEO").index(k[2])),
    )
    assert all(r.runs == 2 and r.failures == 0 for r in results)
    again = sweep(cfg)
    assert emit(results, "csv") == emit(again, "csv")


def test_jitter_off_has_zero_stddev():
    cfg = ExperimentConfig(variants=("TB2",), levels=("I",), scenarios=("GEO",), runs=5, jitter=False)
    (r,) = sweep(cfg)
    assert r.stddev_ms == 0.0


def test_geo_jitter_negligible():
    base = ExperimentConfig(variants=("TB2",), levels=("I",), scenarios=("GEO",), runs=30)
    (jit,) = sweep(base)
    (flat,) = sweep(ExperimentConfig(variants=("TB2",), levels=("I",), scenarios=("GEO",), runs=1, jitter=False))
    assert abs(jit.mean_ms - flat.mean_ms) / flat.mean_ms < 0.01


def test_failed_runs_are_reported():
    cfg = ExperimentConfig(variants=("LW2",), levels=("III",), scenarios=("LEO",), runs=3, mtu=576)
    (r,) = sweep(cfg)
    assert r.failures == 3 and len(r.errors) == 3 and math.isnan(r.mean_ms)


def test_aggregate_attaches_reference():
    cfg = ExperimentConfig(variants=("TB1",), levels=("I",), scenarios=("GEO",), runs=3)
    (r,) = sweep(cfg)
    assert r.reference_ms == pytest.approx(1732.1)
    assert r.reference_bytes == 2826
    assert r.deviation_fraction == pytest.approx(abs(r.mean_ms - 1732.1) / 1732.1)
    assert r.deviation_fraction <= 0.10


def test_compare_empty_results():
    report = compare_reference([])
    assert report.cells == [] and report.orderings == [] and report.orderings_passed


def test_compare_orderings_pass_on_sweep():
    report = compare_reference(sweep(ExperimentConfig(runs=3)))
    assert report.orderings_passed
    names = [o.name for o in report.orderings]
    assert sum("bytes" in n for n in names) == 2 and sum("latency" in n for n in names) == 10


def test_compare_detects_ordering_violation():
    results = sweep(ExperimentConfig(variants=("TB2",), levels=("I",), runs=1))
    results[0].mean_ms, results[2].mean_ms = results[2].mean_ms, results[0].mean_ms
    report = compare_reference(results)
    assert not report.orderings_passed


def test_compare_missing_reference_noted():
    r = AggregateResult("TB1", "I", "MARS", 1, 0, 100.0, 0.0, 1000)
    report = compare_reference([r])
    assert report.cells[0].note == "missing reference" and report.cells[0].within is None


def test_emit_csv_schema(tmp_path):
    results = sweep(ExperimentConfig(variants=("LW3",), levels=("I",), runs=2))
    path = tmp_path / "r.csv"
    emit(results, "csv", path)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["variant", "level", "scenario", "runs", "mean_ms", "stddev_ms", "bytes_total", "reference_ms", "deviation"]
    assert len(rows) == 4
    back = load_results(path)
    assert [(r.variant, r.scenario, r.mean_ms, r.bytes_total) for r in back] == [
        (r.variant, r.scenario, r.mean_ms, r.bytes_total) for r in results
    ]


def test_emit_json_round_trip(tmp_path):
    results = sweep(ExperimentConfig(variants=("TB2",), levels=("III",), runs=2))
    path = tmp_path / "r.json"
    emit(results, "json", path)
    data = json.loads(path.read_text())
    assert data[0]["variant"] == "TB2" and data[0]["bytes_total"] == results[0].bytes_total
    back = load_results(path)
    assert back == results


def test_emit_is_byte_identical_for_equal_seeds(tmp_path):
    cfg = ExperimentConfig(variants=("LW1",), runs=3, seed=9)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    emit(sweep(cfg), "csv", a)
    emit(sweep(cfg), "csv", b)
    assert hashlib.sha256(a.read_bytes()).digest() == hashlib.sha256(b.read_bytes()).digest()


def test_emit_rejects_unknown_format():
    with pytest.raises(ValueError):
        emit([], "xml")
