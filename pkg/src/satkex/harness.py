"""Batch experiments: sweeps, aggregation, reference comparison, reports."""
from __future__ import annotations

import csv
import io
import json
import math
import random
import statistics
from dataclasses import asdict, dataclass, field, fields, replace
from decimal import Decimal
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Optional

from . import codec, handshake
from .codec import OverheadModel
from .crypto.primitives import get_provider
from .crypto.suites import EXPECTED_MESSAGES, ROHC_DEFAULT, Level, Variant, resolve_suite
from .netsim import (
    DEFAULT_PROCESSING_MS,
    SCENARIOS,
    HandshakeReport,
    Scenario,
    build_scenario,
    run_handshake,
)

__all__ = [
    "HandshakeReport",
    "AggregateResult",
    "ExperimentConfig",
    "CellComparison",
    "OrderingCheck",
    "ComparisonReport",
    "sweep",
    "aggregate",
    "analytic_latency_oracle",
    "message_datagram_sizes",
    "load_reference",
    "compare_reference",
    "emit",
    "load_results",
    "CSV_COLUMNS",
]

CSV_COLUMNS = ("variant", "level", "scenario", "runs", "mean_ms", "stddev_ms", "bytes_total", "reference_ms", "deviation")
VARIANT_ORDER = tuple(v.value for v in Variant)
LEVEL_ORDER = tuple(lv.value for lv in Level)


@dataclass
class AggregateResult:
    variant: str
    level: str
    scenario: str
    runs: int
    failures: int
    mean_ms: float
    stddev_ms: float
    bytes_total: int
    bytes_total_no_ip: Optional[int] = None
    reference_ms: Optional[float] = None
    reference_bytes: Optional[int] = None
    deviation_fraction: Optional[float] = None
    errors: list = field(default_factory=list)

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.variant, self.level, self.scenario)


@dataclass
class ExperimentConfig:
    variants: tuple = VARIANT_ORDER
    levels: tuple = LEVEL_ORDER
    scenarios: tuple = SCENARIOS
    runs: int = 30
    seed: int = 0
    processing_ms: float = DEFAULT_PROCESSING_MS
    jitter: bool = True
    rohc: Optional[bool] = None  # None: per-variant default
    mtu: int = 1500
    provider: str = "toy"
    extra_round_trips: int = 0
    scenario_overrides: dict = field(default_factory=dict)

    def seeds(self) -> list[int]:
        return [self.seed + i for i in range(self.runs)]

    def overhead_for(self, variant) -> OverheadModel:
        rohc = ROHC_DEFAULT[Variant(variant)] if self.rohc is None else self.rohc
        return OverheadModel(rohc_enabled=rohc, mtu=self.mtu)


def _scenario_for(config: ExperimentConfig, name: str, overhead: OverheadModel) -> Scenario:
    if name in config.scenario_overrides:
        base = config.scenario_overrides[name]
        return replace(base, overhead=overhead, processing_ms_per_message=config.processing_ms, jitter=config.jitter)
    return build_scenario(name, overhead, processing_ms=config.processing_ms, jitter=config.jitter)


def aggregate(reports: list[HandshakeReport], reference: dict | None = None) -> AggregateResult:
    """Fold the runs of one cell into mean/stddev; failed runs are counted, not dropped."""
    if not reports:
        raise ValueError("cannot aggregate zero runs")
    first = reports[0]
    ok = [r for r in reports if not r.failed]
    times = [r.completion_ms for r in ok]
    mean = statistics.fmean(times) if times else math.nan
    std = statistics.pstdev(times) if len(times) > 1 else 0.0
    byte_totals = {r.bytes_total for r in ok}
    if len(byte_totals) > 1:
        raise AssertionError(f"byte totals vary across runs: {sorted(byte_totals)}")
    src = ok[0] if ok else first
    result = AggregateResult(
        variant=first.variant,
        level=first.level,
        scenario=first.scenario,
        runs=len(reports),
        failures=len(reports) - len(ok),
        mean_ms=mean,
        stddev_ms=std,
        bytes_total=src.bytes_total,
        bytes_total_no_ip=src.bytes_total_no_ip,
        errors=[f"seed {r.seed}: {r.error}" for r in reports if r.failed],
    )
    if reference:
        _attach_reference(result, reference)
    return result


def _attach_reference(result: AggregateResult, reference: dict) -> None:
    ref_s = reference.get(("latency", result.variant, result.level, result.scenario))
    ref_b = reference.get(("bytes", result.variant, result.level, ""))
    result.reference_ms = None if ref_s is None else ref_s * 1000.0
    result.reference_bytes = None if ref_b is None else int(ref_b)
    if result.reference_ms is not None and not math.isnan(result.mean_ms):
        result.deviation_fraction = abs(result.mean_ms - result.reference_ms) / result.reference_ms


def sweep(config: ExperimentConfig | None = None, seeds=None, reference: dict | None = None) -> list[AggregateResult]:
    """Run every (variant, level, scenario) cell over the seed list.

    Results come back ordered by key so the fold is deterministic.
    """
    config = config or ExperimentConfig()
    seeds = list(config.seeds() if seeds is None else seeds)
    if not seeds:
        raise ValueError("seed list is empty")
    if reference is None:
        reference = load_reference()
    provider = get_provider(config.provider)
    out = []
    for variant in config.variants:
        for level in config.levels:
            resolve_suite(variant, level)
            overhead = config.overhead_for(variant)
            for name in config.scenarios:
                scenario = _scenario_for(config, name, overhead)
                reports = [
                    run_handshake(
                        scenario, variant, level,
                        rng=random.Random(s), seed=s, overhead=overhead, provider=provider,
                        extra_round_trips=config.extra_round_trips,
                    )
                    for s in seeds
                ]
                out.append(aggregate(reports, reference))
    return out


# --- analytic oracle -----------------------------------------------------------


def _exact(x) -> Fraction:
    return Fraction(Decimal(repr(float(x))))


def message_datagram_sizes(variant, level, overhead: OverheadModel | None = None, seed: int = 0,
                           provider="toy") -> list[list[int]]:
    """Per-message datagram sizes (with datagram header) from an in-memory run, no event loop."""
    variant = Variant(variant)
    if overhead is None:
        overhead = OverheadModel(rohc_enabled=ROHC_DEFAULT[variant])
    suite = resolve_suite(variant, level)
    prov = get_provider(provider) if isinstance(provider, str) else provider
    rng = random.Random(seed)
    ci, cr = handshake.make_credentials(suite, rng, prov)
    _, _, messages = handshake.run_in_memory(suite, ci, cr, rng, prov, overhead)
    hdr = overhead.datagram_header_bytes
    return [[d.size + hdr for d in codec.datagrams(m, overhead)] for m in messages]


def _serialization_span(rates: list[Fraction], sizes: list[int]) -> Fraction:
    # Max-plus recursion over (hop, datagram): a datagram starts on a hop once
    # it has arrived and the previous datagram has left.
    best = [Fraction(0)] * (len(sizes) + 1)
    for rate in rates:
        row = [Fraction(0)] * (len(sizes) + 1)
        for i, n in enumerate(sizes, start=1):
            row[i] = max(best[i], row[i - 1]) + Fraction(n * 8) / rate
        best = row
    return best[-1]


def analytic_latency_oracle(
    variant,
    scenario,
    processing_ms: float = DEFAULT_PROCESSING_MS,
    *,
    level=None,
    datagram_sizes: list[list[int]] | None = None,
    overhead: OverheadModel | None = None,
) -> float:
    """Closed-form jitter-free handshake time in ms.

    Without ``level`` or ``datagram_sizes`` this is the propagation-only figure
    N x (sum of one-way delays + processing). Supplying either adds the exact
    store-and-forward serialization of every datagram on the finite-rate hops.
    """
    if isinstance(scenario, str):
        scenario = build_scenario(scenario)
    delays = sum((_exact(link.one_way_delay_ms) for link in scenario.path), Fraction(0))
    proc = _exact(processing_ms)
    if datagram_sizes is None and level is not None:
        datagram_sizes = message_datagram_sizes(variant, level, overhead)
    if datagram_sizes is None:
        n = EXPECTED_MESSAGES[Variant(variant)]
        return float(n * (delays + proc))
    rates = [_exact(link.rate_bps) / 1000 for link in scenario.path if link.rate_bps is not None]  # bits per ms
    total = Fraction(0)
    for i, sizes in enumerate(datagram_sizes):
        # messages alternate direction; replies cross the hops in reverse
        hops = rates if i % 2 == 0 else rates[::-1]
        total += delays + _serialization_span(hops, sizes) + proc
    return float(total)


# --- reference comparison ------------------------------------------------------


def load_reference(path=None) -> dict:
    """Reference table keyed by (figure, variant, level, scenario); latency in s, bytes in B."""
    if path is None:
        text = resources.files("satkex").joinpath("data/reference.csv").read_text()
    else:
        text = Path(path).read_text()
    table = {}
    for row in csv.DictReader(io.StringIO(text)):
        table[(row["figure"], row["variant"], row["level"], row["scenario"])] = float(row["value"])
    return table


@dataclass
class CellComparison:
    metric: str
    variant: str
    level: str
    scenario: str
    measured: Optional[float]
    reference: Optional[float]
    deviation: Optional[float]
    tolerance: float
    within: Optional[bool]
    note: str = ""


@dataclass
class OrderingCheck:
    name: str
    passed: bool
    detail: str


@dataclass
class ComparisonReport:
    cells: list = field(default_factory=list)
    orderings: list = field(default_factory=list)

    @property
    def orderings_passed(self) -> bool:
        return all(o.passed for o in self.orderings)

    @property
    def cells_within(self) -> bool:
        return all(c.within is not False for c in self.cells)

    def lines(self) -> list[str]:
        out = []
        for c in self.cells:
            status = {True: "ok", False: "OUT", None: "--"}[c.within]
            dev = "n/a" if c.deviation is None else f"{c.deviation:.3%}"
            out.append(
                f"{c.metric:8s} {c.variant}-{c.level:<3s} {c.scenario or '-':4s} measured={_fmt(c.measured)} "
                f"reference={_fmt(c.reference)} deviation={dev} [{status}]{' ' + c.note if c.note else ''}"
            )
        for o in self.orderings:
            out.append(f"ordering {o.name}: {'pass' if o.passed else 'FAIL'} ({o.detail})")
        return out


def _fmt(x) -> str:
    return "n/a" if x is None else f"{x:.4f}"


def compare_reference(
    results,
    reference_table: dict | None = None,
    latency_tol: float = 0.10,
    bytes_tol: float = 0.25,
    latency_excluded=("LW3",),
) -> ComparisonReport:
    """Per-cell deviations and ordering checks.

    ``latency_excluded`` variants still get a deviation figure but no
    tolerance verdict. Byte cells use the total without IP/UDP headers
    when the results carry it.
    """
    report = ComparisonReport()
    results = list(results)
    if not results:
        return report
    ref = load_reference() if reference_table is None else reference_table

    for r in results:
        ref_s = ref.get(("latency", r.variant, r.level, r.scenario))
        if ref_s is None:
            report.cells.append(CellComparison("latency", r.variant, r.level, r.scenario, r.mean_ms, None, None,
                                               latency_tol, None, "missing reference"))
            continue
        ref_ms = ref_s * 1000.0
        dev = abs(r.mean_ms - ref_ms) / ref_ms
        excluded = r.variant in latency_excluded
        report.cells.append(CellComparison(
            "latency", r.variant, r.level, r.scenario, r.mean_ms, ref_ms, dev, latency_tol,
            None if excluded else dev <= latency_tol, "excluded from tolerance" if excluded else "",
        ))

    per_variant_bytes: dict = {}
    for r in results:
        key = (r.variant, r.level)
        if key in per_variant_bytes:
            continue
        measured = r.bytes_total_no_ip if r.bytes_total_no_ip is not None else r.bytes_total
        per_variant_bytes[key] = r.bytes_total
        ref_b = ref.get(("bytes", r.variant, r.level, ""))
        if ref_b is None:
            report.cells.append(CellComparison("bytes", r.variant, r.level, "", measured, None, None, bytes_tol,
                                               None, "missing reference"))
            continue
        dev = abs(measured - ref_b) / ref_b
        report.cells.append(CellComparison("bytes", r.variant, r.level, "", measured, ref_b, dev, bytes_tol,
                                           dev <= bytes_tol))

    # latency grows with orbit altitude for each variant/level
    by_cell = {(r.variant, r.level, r.scenario): r.mean_ms for r in results}
    for v in VARIANT_ORDER:
        for lv in LEVEL_ORDER:
            times = [by_cell.get((v, lv, s)) for s in SCENARIOS]
            if any(t is None for t in times):
                continue
            ok = times[0] < times[1] < times[2]
            report.orderings.append(OrderingCheck(
                f"latency {v}-{lv} LEO<MEO<GEO", ok, " < ".join(f"{t:.3f}" for t in times)))

    # wire cost: LW3 < TB2 < TB1 < min(LW1, LW2)
    for lv in LEVEL_ORDER:
        b = {v: per_variant_bytes.get((v, lv)) for v in VARIANT_ORDER}
        if any(x is None for x in b.values()):
            continue
        ok = b["LW3"] < b["TB2"] < b["TB1"] < min(b["LW1"], b["LW2"])
        report.orderings.append(OrderingCheck(
            f"bytes level {lv} LW3<TB2<TB1<min(LW1,LW2)", ok,
            f"{b['LW3']} < {b['TB2']} < {b['TB1']} < min({b['LW1']}, {b['LW2']})"))
    return report


# --- report files --------------------------------------------------------------


def _csv_cell(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return repr(x) if isinstance(x, float) else str(x)


def _to_json(r: AggregateResult) -> dict:
    d = asdict(r)
    for k, v in d.items():
        if isinstance(v, float) and math.isnan(v):
            d[k] = None
    return d


def render(results, fmt: str = "csv") -> str:
    fmt = fmt.lower()
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in results:
            w.writerow([_csv_cell(x) for x in (r.variant, r.level, r.scenario, r.runs, r.mean_ms, r.stddev_ms,
                                                r.bytes_total, r.reference_ms, r.deviation_fraction)])
        return buf.getvalue()
    if fmt == "json":
        return json.dumps([_to_json(r) for r in results], indent=2) + "\n"
    raise ValueError(f"unknown format {fmt!r}")


def emit(results, fmt: str = "csv", path=None) -> str:
    """Write a report to ``path`` (or return it when path is None)."""
    text = render(results, fmt)
    if path is not None:
        Path(path).write_text(text)
    return text


def load_results(path, fmt: str | None = None) -> list[AggregateResult]:
    path = Path(path)
    text = path.read_text()
    fmt = (fmt or ("json" if text.lstrip().startswith("[") else "csv")).lower()
    if fmt == "json":
        names = {f.name for f in fields(AggregateResult)}
        out = []
        for d in json.loads(text):
            d = {k: v for k, v in d.items() if k in names}
            if d.get("mean_ms") is None:
                d["mean_ms"] = math.nan
            out.append(AggregateResult(**d))
        return out
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        out.append(AggregateResult(
            variant=row["variant"],
            level=row["level"],
            scenario=row["scenario"],
            runs=int(row["runs"]),
            failures=0,
            mean_ms=float(row["mean_ms"]) if row["mean_ms"] else math.nan,
            stddev_ms=float(row["stddev_ms"]) if row["stddev_ms"] else math.nan,
            bytes_total=int(row["bytes_total"]),
            reference_ms=float(row["reference_ms"]) if row["reference_ms"] else None,
            deviation_fraction=float(row["deviation"]) if row["deviation"] else None,
        ))
    return out
