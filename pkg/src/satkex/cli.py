"""Command-line entry point: ``satkex run|sweep|compare|dump-scenarios|dump-registry``."""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

from . import harness
from .codec import OverheadModel
from .crypto.primitives import get_provider
from .crypto.registry import dump_registry
from .crypto.suites import ROHC_DEFAULT, Level, Variant
from .errors import SatkexError
from .netsim import DEFAULT_PROCESSING_MS, SCENARIOS, Scenario, build_scenario, dump_scenarios, run_handshake

COMMANDS = ("run", "sweep", "compare", "dump-scenarios", "dump-registry")
OUTPUT_DIR_ENV = "SATKEX_OUTPUT_DIR"


@dataclass
class CliConfig:
    command: str
    variant: Optional[str] = None
    level: Optional[str] = None
    scenario: Optional[str] = None
    runs: int = 30
    seed: int = 0
    rohc: Optional[bool] = None
    mtu: int = 1500
    processing_ms: float = DEFAULT_PROCESSING_MS
    output: Optional[str] = None
    format: Optional[str] = None
    input: Optional[str] = None
    jitter: bool = True
    scenario_file: Optional[str] = None
    reference: Optional[str] = None
    provider: str = "toy"


def _variant(text: str) -> str:
    try:
        return Variant(text.upper()).value
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"unknown variant {text!r} (choose from {', '.join(v.value for v in Variant)})"
        ) from None


def _level(text: str) -> str:
    t = {"1": "I", "3": "III"}.get(text, text.upper())
    try:
        return Level(t).value
    except ValueError:
        raise argparse.ArgumentTypeError(f"unknown level {text!r} (choose I or III)") from None


def _scenario(text: str) -> str:
    if text.upper() not in SCENARIOS:
        raise argparse.ArgumentTypeError(f"unknown scenario {text!r} (choose from {', '.join(SCENARIOS)})")
    return text.upper()


def _positive_int(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return n


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="satkex", description="IKEv2 satellite handshake variants and link simulator")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add_common(p, sweep: bool):
        p.add_argument("--variant", type=_variant, help="TB1, TB2, LW1, LW2 or LW3 (case-insensitive)")
        p.add_argument("--level", type=_level, help="security level I or III")
        p.add_argument("--scenario", type=_scenario, help="LEO, MEO or GEO")
        p.add_argument("--seed", type=int, default=0)
        rohc = p.add_mutually_exclusive_group()
        rohc.add_argument("--rohc", dest="rohc", action="store_true", default=None,
                          help="force header compression on (default: on for LW variants)")
        rohc.add_argument("--no-rohc", dest="rohc", action="store_false")
        p.add_argument("--mtu", type=_positive_int, default=1500)
        p.add_argument("--processing-ms", type=float, default=DEFAULT_PROCESSING_MS)
        p.add_argument("--no-jitter", dest="jitter", action="store_false")
        p.add_argument("--scenario-file", help="JSON scenario definition (as printed by dump-scenarios)")
        p.add_argument("--provider", choices=("toy", "real"), default="toy")
        p.add_argument("--output", "-o")
        p.add_argument("--format", choices=("csv", "json"))
        if sweep:
            p.add_argument("--runs", type=_positive_int, default=30)

    add_common(sub.add_parser("run", help="run one handshake over a scenario"), sweep=False)
    add_common(sub.add_parser("sweep", help="run the experiment matrix"), sweep=True)
    cmp = sub.add_parser("compare", help="compare results with the reference table")
    cmp.add_argument("--input", "-i", help="results file from sweep (CSV or JSON); runs a default sweep if omitted")
    cmp.add_argument("--reference", help="alternative reference table")
    cmp.add_argument("--runs", type=_positive_int, default=30)
    cmp.add_argument("--seed", type=int, default=0)
    cmp.add_argument("--output", "-o")
    ds = sub.add_parser("dump-scenarios", help="print the built-in scenarios as JSON")
    ds.add_argument("--output", "-o")
    dr = sub.add_parser("dump-registry", help="print the algorithm size table")
    dr.add_argument("--format", choices=("csv", "json"), default="csv")
    dr.add_argument("--output", "-o")
    return parser


def parse_args(argv=None) -> CliConfig:
    ns = build_parser().parse_args(argv)
    known = set(CliConfig.__dataclass_fields__)
    return CliConfig(**{k: v for k, v in vars(ns).items() if k in known})


def _resolve_output(path: str | None) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    base = os.environ.get(OUTPUT_DIR_ENV)
    if base and not p.is_absolute():
        p = Path(base) / p
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _write(text: str, path: str | None) -> None:
    target = _resolve_output(path)
    if target is None:
        sys.stdout.write(text)
    else:
        target.write_text(text)


def _format(cfg: CliConfig, default: str) -> str:
    if cfg.format:
        return cfg.format
    if cfg.output and cfg.output.lower().endswith(".json"):
        return "json"
    if cfg.output and cfg.output.lower().endswith(".csv"):
        return "csv"
    return default


def _load_scenarios(path: str) -> list[dict]:
    data = json.loads(Path(path).read_text())
    return data if isinstance(data, list) else [data]


def _cmd_run(cfg: CliConfig) -> int:
    variant = cfg.variant or "TB2"
    level = cfg.level or "I"
    rohc = ROHC_DEFAULT[Variant(variant)] if cfg.rohc is None else cfg.rohc
    overhead = OverheadModel(rohc_enabled=rohc, mtu=cfg.mtu)
    if cfg.scenario_file:
        scenario = Scenario.from_dict(_load_scenarios(cfg.scenario_file)[0], overhead)
        scenario.processing_ms_per_message = cfg.processing_ms
        scenario.jitter = cfg.jitter
    else:
        scenario = build_scenario(cfg.scenario or "GEO", overhead, cfg.seed, cfg.processing_ms, cfg.jitter)
    report = run_handshake(scenario, variant, level, seed=cfg.seed, overhead=overhead,
                           provider=get_provider(cfg.provider))
    if _format(cfg, "json") == "json":
        d = asdict(report)
        d.pop("events")
        d["transmissions"] = [asdict(e) for e in report.events]
        _write(json.dumps(d, indent=2) + "\n", cfg.output)
    else:
        _write(harness.render([harness.aggregate([report], harness.load_reference())], "csv"), cfg.output)
    if report.failed:
        print(f"handshake failed: {report.error}", file=sys.stderr)
        return 1
    return 0


def _experiment(cfg: CliConfig) -> harness.ExperimentConfig:
    overrides = {}
    scenarios = (cfg.scenario,) if cfg.scenario else SCENARIOS
    if cfg.scenario_file:
        loaded = [Scenario.from_dict(d) for d in _load_scenarios(cfg.scenario_file)]
        overrides = {s.name: s for s in loaded}
        scenarios = tuple(overrides)
    return harness.ExperimentConfig(
        variants=(cfg.variant,) if cfg.variant else harness.VARIANT_ORDER,
        levels=(cfg.level,) if cfg.level else harness.LEVEL_ORDER,
        scenarios=scenarios,
        runs=cfg.runs,
        seed=cfg.seed,
        processing_ms=cfg.processing_ms,
        jitter=cfg.jitter,
        rohc=cfg.rohc,
        mtu=cfg.mtu,
        provider=cfg.provider,
        scenario_overrides=overrides,
    )


def _cmd_sweep(cfg: CliConfig) -> int:
    results = harness.sweep(_experiment(cfg))
    _write(harness.render(results, _format(cfg, "csv")), cfg.output)
    failed = sum(r.failures for r in results)
    if failed:
        print(f"{failed} runs failed", file=sys.stderr)
        return 1
    return 0


def _cmd_compare(cfg: CliConfig) -> int:
    reference = harness.load_reference(cfg.reference)
    if cfg.input:
        results = harness.load_results(cfg.input)
    else:
        results = harness.sweep(harness.ExperimentConfig(runs=cfg.runs, seed=cfg.seed), reference=reference)
    report = harness.compare_reference(results, reference)
    _write("\n".join(report.lines()) + ("\n" if report.cells or report.orderings else ""), cfg.output)
    return 0 if report.orderings_passed else 1


def _cmd_dump_registry(cfg: CliConfig) -> int:
    rows = dump_registry()
    if (cfg.format or "csv") == "json":
        _write(json.dumps(rows, indent=2) + "\n", cfg.output)
    else:
        import csv
        import io

        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows({k: ("" if v is None else v) for k, v in r.items()} for r in rows)
        _write(buf.getvalue(), cfg.output)
    return 0


def execute(cfg: CliConfig) -> int:
    handlers = {
        "run": _cmd_run,
        "sweep": _cmd_sweep,
        "compare": _cmd_compare,
        "dump-scenarios": lambda c: (_write(dump_scenarios() + "\n", c.output), 0)[1],
        "dump-registry": _cmd_dump_registry,
    }
    try:
        return handlers[cfg.command](cfg)
    except (SatkexError, OSError, ValueError, KeyError) as exc:
        print(f"satkex {cfg.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main(argv=None) -> int:
    return execute(parse_args(argv))


if __name__ == "__main__":
    sys.exit(main())
