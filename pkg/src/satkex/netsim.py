"""Discrete-event simulator for the ground-satellite-ground topology.

The clock is an integer count of picoseconds, so link delays given in
milliseconds with up to nine decimals, and serialization at the built-in
rates, are represented exactly. Datagrams are store-and-forward per hop:
each directed link serializes one datagram at a time (FIFO) and then adds
propagation delay plus sampled jitter.
"""
from __future__ import annotations

import heapq
import json
import random
from dataclasses import asdict, dataclass, field, replace
from decimal import Decimal
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np

from . import codec, handshake
from .codec import OverheadModel
from .crypto.primitives import TOY
from .crypto.suites import EXPECTED_MESSAGES, ROHC_DEFAULT, Level, Variant, resolve_suite
from .errors import HandshakeError, HandshakeTimeout, SatkexError, UnknownScenario

PS_PER_MS = 10**9

# Table of link characteristics: (rate in bit/s or None for unlimited, delay ms, jitter ms)
LINK_TABLE = {
    ("host", "modem"): (None, 22.500, 0.0),
    ("modem", "LEO"): (5e6, 6.862, 1.178),
    ("modem", "MEO"): (5e6, 78.915, 0.14),
    ("modem", "GEO"): (5e6, 127.247, 0.00004),
    ("LEO", "LEO"): (10e9, 15.898, 2.73),
    ("LEO", "MEO"): (10e9, 41.167, 0.073),
    ("GEO", "MEO"): (10e9, 92.500, 0.029),
}
# The 22.5 ms host-modem figure is read as a round trip.
HOST_MODEM_ONE_WAY_MS = LINK_TABLE[("host", "modem")][1] / 2
DEFAULT_PROCESSING_MS = 10.0
SCENARIOS = ("LEO", "MEO", "GEO")


@dataclass(frozen=True)
class Link:
    endpoint_a: str
    endpoint_b: str
    rate_bps: Optional[float]
    one_way_delay_ms: float
    jitter_ms: float = 0.0

    def __post_init__(self):
        if self.one_way_delay_ms < 0 or self.jitter_ms < 0:
            raise ValueError("delay and jitter must be non-negative")
        if self.rate_bps is not None and self.rate_bps <= 0:
            raise ValueError("rate must be positive or None for unlimited")

    @property
    def delay_ps(self) -> int:
        return ms_to_ps(self.one_way_delay_ms)

    def serialization_ps(self, nbytes: int) -> int:
        if self.rate_bps is None:
            return 0
        return round(Fraction(nbytes * 8 * 10**12) / Fraction(Decimal(repr(self.rate_bps))))


@dataclass
class Scenario:
    name: str
    path: list
    processing_ms_per_message: float = DEFAULT_PROCESSING_MS
    seed: int = 0
    overhead: OverheadModel = field(default_factory=OverheadModel)
    jitter: bool = True

    def __post_init__(self):
        for a, b in zip(self.path, self.path[1:]):
            if a.endpoint_b != b.endpoint_a:
                raise ValueError(f"path does not chain: {a.endpoint_b} -> {b.endpoint_a}")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "processing_ms_per_message": self.processing_ms_per_message,
            "seed": self.seed,
            "jitter": self.jitter,
            "links": [asdict(link) for link in self.path],
        }

    @classmethod
    def from_dict(cls, d: dict, overhead: OverheadModel | None = None) -> "Scenario":
        return cls(
            name=d["name"],
            path=[Link(**link) for link in d["links"]],
            processing_ms_per_message=d.get("processing_ms_per_message", DEFAULT_PROCESSING_MS),
            seed=d.get("seed", 0),
            overhead=overhead or OverheadModel(),
            jitter=d.get("jitter", True),
        )


@dataclass(frozen=True)
class TransmitEvent:
    message_index: int
    fragment: int
    nbytes: int
    depart_ms: float
    arrive_ms: float
    direction: str


@dataclass
class HandshakeReport:
    variant: str
    level: str
    scenario: str
    completion_ms: float
    messages: int
    bytes_initiator_to_responder: int
    bytes_responder_to_initiator: int
    bytes_total: int
    bytes_total_no_ip: int
    per_message_sizes: list
    datagram_sizes: list
    failed: bool
    seed: int
    keys_match: bool = False
    error: Optional[str] = None
    events: list = field(default_factory=list, repr=False)


def ms_to_ps(ms: float) -> int:
    return round(Decimal(repr(float(ms))) * PS_PER_MS)


def ps_to_ms(ps: int) -> float:
    return ps / PS_PER_MS


def build_scenario(
    name: str,
    overhead: OverheadModel | None = None,
    seed: int = 0,
    processing_ms: float = DEFAULT_PROCESSING_MS,
    jitter: bool = True,
) -> Scenario:
    """Single-satellite path host - modem A - satellite - modem B - host."""
    key = name.upper()
    if key not in SCENARIOS:
        raise UnknownScenario(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    rate, delay, jit = LINK_TABLE[("modem", key)]
    path = [
        Link("initiator", "modemA", None, HOST_MODEM_ONE_WAY_MS, 0.0),
        Link("modemA", key, rate, delay, jit),
        Link(key, "modemB", rate, delay, jit),
        Link("modemB", "responder", None, HOST_MODEM_ONE_WAY_MS, 0.0),
    ]
    return Scenario(key, path, processing_ms, seed, overhead or OverheadModel(), jitter)


def load_scenario(path, overhead: OverheadModel | None = None) -> Scenario:
    return Scenario.from_dict(json.loads(Path(path).read_text()), overhead)


def dump_scenarios() -> str:
    return json.dumps([build_scenario(n).to_dict() for n in SCENARIOS], indent=2)


def sample_jitter(link: Link, rng: np.random.Generator) -> float:
    """Zero-mean normal jitter, truncated so the hop delay stays non-negative."""
    if link.jitter_ms == 0:
        return 0.0
    while True:
        x = rng.normal(0.0, link.jitter_ms)
        if x >= -link.one_way_delay_ms:
            return float(x)


class _Hop:
    __slots__ = ("link", "free_at", "last_arrival")

    def __init__(self, link: Link):
        self.link = link
        self.free_at = 0
        self.last_arrival = 0


class Network:
    """Event-driven transport over a scenario path, one queue per directed hop."""

    def __init__(self, scenario: Scenario, rng: np.random.Generator, jitter: bool | None = None):
        self.scenario = scenario
        self.rng = rng
        self.jitter = scenario.jitter if jitter is None else jitter
        self.hops = {
            "i2r": [_Hop(link) for link in scenario.path],
            "r2i": [_Hop(link) for link in reversed(scenario.path)],
        }
        self.now = 0
        self._queue: list = []
        self._seq = 0

    def _schedule(self, t: int, action, *args) -> None:
        heapq.heappush(self._queue, (t, self._seq, action, args))
        self._seq += 1

    def send(self, direction: str, sizes: list[int], at: int, on_datagram) -> None:
        """Queue datagrams at the source host; ``on_datagram(i, depart, arrive)`` fires on delivery."""
        for i, n in enumerate(sizes):
            self._schedule(at, self._arrive_at_hop, direction, 0, i, n, at, on_datagram)

    def _arrive_at_hop(self, direction, k, i, nbytes, depart, on_datagram) -> None:
        hops = self.hops[direction]
        if k == len(hops):
            on_datagram(i, depart, self.now)
            return
        hop = hops[k]
        start = max(self.now, hop.free_at)
        done = start + hop.link.serialization_ps(nbytes)
        hop.free_at = done
        jit = ms_to_ps(sample_jitter(hop.link, self.rng)) if self.jitter else 0
        arrive = max(done + hop.link.delay_ps + jit, hop.last_arrival)
        hop.last_arrival = arrive
        self._schedule(arrive, self._arrive_at_hop, direction, k + 1, i, nbytes, depart, on_datagram)

    def call_at(self, t: int, action, *args) -> None:
        self._schedule(t, action, *args)

    def run(self, until: int | None = None) -> None:
        while self._queue:
            t, _, action, args = heapq.heappop(self._queue)
            if until is not None and t > until:
                heapq.heappush(self._queue, (t, -1, action, args))
                self.now = until
                return
            self.now = t
            action(*args)


def one_way_latency(scenario: Scenario, message_bytes: int, rng: np.random.Generator | None = None,
                    jitter: bool | None = None) -> float:
    """Latency in ms of a single datagram across a fresh path, plus processing."""
    if message_bytes <= 0:
        raise ValueError("message_bytes must be positive")
    rng = rng if rng is not None else np.random.default_rng(scenario.seed)
    net = Network(scenario, rng, jitter)
    arrived = []
    net.send("i2r", [message_bytes], 0, lambda i, d, a: arrived.append(a))
    net.run()
    return ps_to_ms(arrived[0] + ms_to_ps(scenario.processing_ms_per_message))


def run_handshake(
    scenario: Scenario,
    variant: Variant | str,
    level: Level | str,
    creds=None,
    rng: random.Random | None = None,
    *,
    seed: int | None = None,
    overhead: OverheadModel | None = None,
    provider=TOY,
    jitter: bool | None = None,
    processing_ms: float | None = None,
    extra_round_trips: int = 0,
    timeout_ms: float = handshake.DEFAULT_TIMEOUT_MS,
    static_keys=None,
) -> HandshakeReport:
    """Run both state machines over the simulated path.

    ``extra_round_trips`` appends header-only request/response pairs after
    the handshake and ``processing_ms`` overrides the scenario's per-message
    processing time; both exist to model alternative hypotheses about
    measured timings and default to off.
    """
    variant, level = Variant(variant), Level(level)
    suite = resolve_suite(variant, level)
    seed = scenario.seed if seed is None else seed
    rng = rng or random.Random(seed)
    net_rng = np.random.default_rng(seed)
    if overhead is None:
        overhead = replace(scenario.overhead, rohc_enabled=ROHC_DEFAULT[variant])
    if creds is None:
        creds = handshake.make_credentials(suite, rng, provider, static_keys=static_keys)
    ci, cr = creds
    proc_ps = ms_to_ps(scenario.processing_ms_per_message if processing_ms is None else processing_ms)
    timeout_ps = ms_to_ps(timeout_ms)
    net = Network(scenario, net_rng, jitter)
    hdr = overhead.datagram_header_bytes

    report = HandshakeReport(
        variant.value, level.value, scenario.name, 0.0, 0, 0, 0, 0, 0, [], [], False, seed
    )
    outcome: dict = {}
    resp = handshake.accept(suite, cr, provider, overhead)
    parties = {"i2r": resp}

    def transmit(message, direction, at):
        report.messages += 1
        report.per_message_sizes.append(message.size)
        grams = [codec.encode(d) for d in codec.datagrams(message, overhead)]
        sizes = [len(g) + hdr for g in grams]
        report.datagram_sizes.append(sizes)
        report.bytes_total_no_ip += sum(len(g) for g in grams)
        if direction == "i2r":
            report.bytes_initiator_to_responder += sum(sizes)
        else:
            report.bytes_responder_to_initiator += sum(sizes)
        index = report.messages - 1
        received = {}

        def on_datagram(i, depart, arrive):
            report.events.append(
                TransmitEvent(index, i + 1, sizes[i], ps_to_ms(depart), ps_to_ms(arrive), direction)
            )
            received[i] = grams[i]
            if len(received) == len(grams):
                net.call_at(arrive + proc_ps, deliver, direction, [received[j] for j in range(len(grams))])

        net.send(direction, sizes, at, on_datagram)

    def deliver(direction, grams):
        receiver = parties[direction]
        back = "r2i" if direction == "i2r" else "i2r"
        try:
            message = codec.reassemble([codec.decode(g) for g in grams])
            _, reply = handshake.step(receiver, message, rng)
        except SatkexError as exc:
            outcome["error"] = f"{type(exc).__name__}: {exc}"
            outcome["done"] = net.now
            return
        if reply is not None:
            transmit(reply, back, net.now)
        else:
            outcome["done"] = net.now

    def probe(remaining, direction):
        # header-only filler exchange used by the message-count override
        msg = codec.Message(
            codec.MessageHeader(init.spi_i, init.spi_r, codec.ExchangeType.INFORMATIONAL, remaining)
        )
        size = msg.size + hdr
        report.messages += 1
        report.per_message_sizes.append(msg.size)
        report.datagram_sizes.append([size])
        report.bytes_total_no_ip += msg.size
        if direction == "i2r":
            report.bytes_initiator_to_responder += size
        else:
            report.bytes_responder_to_initiator += size

        def on_datagram(i, depart, arrive):
            net.call_at(arrive + proc_ps, probe_done, remaining, direction)

        net.send(direction, [size], net.now, on_datagram)

    def probe_done(remaining, direction):
        outcome["done"] = net.now
        if direction == "i2r":
            probe(remaining, "r2i")
        elif remaining > 1:
            probe(remaining - 1, "i2r")

    try:
        init, first = handshake.start(suite, ci, rng, provider, overhead)
    except HandshakeError as exc:
        report.failed = True
        report.error = f"{type(exc).__name__}: {exc}"
        return report
    parties["r2i"] = init
    transmit(first, "i2r", 0)
    net.run(until=timeout_ps)
    if "done" in outcome and "error" not in outcome and extra_round_trips:
        probe(extra_round_trips, "i2r")
        net.run(until=timeout_ps)

    report.bytes_total = report.bytes_initiator_to_responder + report.bytes_responder_to_initiator
    if "error" in outcome:
        report.failed, report.error = True, outcome["error"]
    elif "done" not in outcome or outcome["done"] > timeout_ps:
        report.failed, report.error = True, f"{HandshakeTimeout.__name__}: no completion within {timeout_ms} ms"
    report.completion_ms = ps_to_ms(outcome.get("done", net.now))
    report.keys_match = (
        not report.failed
        and init.schedule is not None
        and resp.schedule is not None
        and init.schedule.sk_d == resp.schedule.sk_d
    )
    if not report.failed and not extra_round_trips:
        assert report.messages == EXPECTED_MESSAGES[variant]
    return report
