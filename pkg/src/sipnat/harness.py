"""Scenario runner: scripted calls through simulated NATs, with reports.

Modes:

    adapted   persistent-TCP signaling, relay ports injected into every
              session description, media forwarded by the proxy
    naive     signaling identical, but bodies are forwarded untouched, so
              clients send media straight to each other's declared
              (private) addresses
    baseline  adapted behavior plus synthetic accounting of the two
              relay-allocation transactions per client that a standalone
              relay-allocation protocol would have required

Reports are plain JSON and byte-stable for a fixed (scenario, seed).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum

from .nat import NatBox, NatConfig, NatType
from .proxy import ProxyConfig, SipProxy
from .simnet import SimClient, SimNetwork

MODE_ADAPTED = "adapted"
MODE_NAIVE = "naive"
MODE_BASELINE = "baseline"
MODES = (MODE_ADAPTED, MODE_NAIVE, MODE_BASELINE)

SIGNALING_TCP = "tcp"
SIGNALING_UDP = "udp"

PROXY_IP = "200.1.1.1"
NAT_A_IP = "68.92.25.44"
NAT_B_IP = "77.224.10.9"
CLIENT_A = ("ClientA", "local1.com", "192.168.1.11", 49570)
CLIENT_B = ("ClientB", "local2.com", "10.0.0.4", 6580)

ALLOCATIONS_PER_CLIENT = 2  # one for signaling, one for media reception


class Outcome(str, Enum):
    MEDIA_OK = "media_ok"
    MEDIA_BLOCKED = "media_blocked"
    SIGNALING_BLOCKED = "signaling_blocked"


class InvalidScenario(Exception):
    pass


class ScriptMismatch(Exception):
    pass


@dataclass
class ScriptEvent:
    """One scripted step: register | idle | call | talk | hangup."""

    kind: str
    seconds: float = 0.0  # idle
    packets: int = 0  # talk
    interval: float = 0.02  # talk, seconds between packets
    caller: str = "a"  # call/hangup: which client acts

    @classmethod
    def from_dict(cls, data: dict) -> "ScriptEvent":
        if not isinstance(data, dict) or "event" not in data:
            raise InvalidScenario(f"script entry must be an object with 'event': {data!r}")
        kind = data["event"]
        if kind == "register":
            return cls("register")
        if kind == "idle":
            seconds = data.get("seconds")
            if not isinstance(seconds, (int, float)) or seconds < 0:
                raise InvalidScenario(f"idle needs non-negative 'seconds': {data!r}")
            return cls("idle", seconds=float(seconds))
        if kind == "call":
            caller = str(data.get("caller", "a")).lower()
            if caller not in ("a", "b"):
                raise InvalidScenario(f"call 'caller' must be 'a' or 'b': {data!r}")
            return cls("call", caller=caller)
        if kind == "talk":
            packets = data.get("packets", 50)
            interval = data.get("interval_ms", 20)
            if not isinstance(packets, int) or packets < 0:
                raise InvalidScenario(f"talk needs integer 'packets': {data!r}")
            if not isinstance(interval, (int, float)) or interval <= 0:
                raise InvalidScenario(f"talk needs positive 'interval_ms': {data!r}")
            return cls("talk", packets=packets, interval=float(interval) / 1000.0)
        if kind == "hangup":
            caller = str(data.get("caller", "a")).lower()
            if caller not in ("a", "b"):
                raise InvalidScenario(f"hangup 'caller' must be 'a' or 'b': {data!r}")
            return cls("hangup", caller=caller)
        raise InvalidScenario(f"unknown script event: {kind!r}")

    def to_dict(self) -> dict:
        if self.kind == "idle":
            return {"event": "idle", "seconds": self.seconds}
        if self.kind == "talk":
            return {"event": "talk", "packets": self.packets, "interval_ms": self.interval * 1000.0}
        if self.kind in ("call", "hangup"):
            return {"event": self.kind, "caller": self.caller}
        return {"event": self.kind}


def default_script(packets: int = 50) -> list[ScriptEvent]:
    return [
        ScriptEvent("register"),
        ScriptEvent("call", caller="a"),
        ScriptEvent("talk", packets=packets, interval=0.02),
        ScriptEvent("hangup", caller="a"),
    ]


_NAT_TYPE_NAMES = {t.value: t for t in NatType}


@dataclass
class Scenario:
    """Two clients behind two NATs plus the script they follow."""

    nat_a: NatType
    nat_b: NatType
    script: list[ScriptEvent]
    seed: int = 0
    mode: str = MODE_ADAPTED
    signaling: str = SIGNALING_TCP
    udp_binding_ttl: float = 60.0
    tcp_idle_ttl: float | None = None
    extra_clients: int = 0
    expect: str | None = None

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise InvalidScenario(f"unknown mode: {self.mode!r}")
        if self.signaling not in (SIGNALING_TCP, SIGNALING_UDP):
            raise InvalidScenario(f"unknown signaling transport: {self.signaling!r}")
        if self.extra_clients < 0:
            raise InvalidScenario("extra_clients must be >= 0")
        if self.expect is not None and self.expect not in {o.value for o in Outcome}:
            raise InvalidScenario(f"unknown expected outcome: {self.expect!r}")

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        try:
            nat_a = _NAT_TYPE_NAMES[data["nat_a"]]
            nat_b = _NAT_TYPE_NAMES[data["nat_b"]]
        except KeyError as exc:
            raise InvalidScenario(f"nat_a/nat_b must be one of {sorted(_NAT_TYPE_NAMES)}") from exc
        script_data = data.get("script")
        if not isinstance(script_data, list) or not script_data:
            raise InvalidScenario("scenario needs a non-empty 'script' array")
        ttl = data.get("udp_binding_ttl", 60.0)
        if not isinstance(ttl, (int, float)) or ttl <= 0:
            raise InvalidScenario("udp_binding_ttl must be positive")
        tcp_ttl = data.get("tcp_idle_ttl")
        if tcp_ttl is not None and (not isinstance(tcp_ttl, (int, float)) or tcp_ttl <= 0):
            raise InvalidScenario("tcp_idle_ttl must be positive or null")
        return cls(
            nat_a=nat_a,
            nat_b=nat_b,
            script=[ScriptEvent.from_dict(e) for e in script_data],
            seed=int(data.get("seed", 0)),
            mode=data.get("mode", MODE_ADAPTED),
            signaling=data.get("signaling", SIGNALING_TCP),
            udp_binding_ttl=float(ttl),
            tcp_idle_ttl=float(tcp_ttl) if tcp_ttl is not None else None,
            extra_clients=int(data.get("extra_clients", 0)),
            expect=data.get("expect"),
        )

    @classmethod
    def from_json(cls, text: str) -> "Scenario":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InvalidScenario(f"scenario file is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise InvalidScenario("scenario file must contain a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        data = {
            "nat_a": self.nat_a.value,
            "nat_b": self.nat_b.value,
            "seed": self.seed,
            "mode": self.mode,
            "signaling": self.signaling,
            "udp_binding_ttl": self.udp_binding_ttl,
            "tcp_idle_ttl": self.tcp_idle_ttl,
            "extra_clients": self.extra_clients,
            "script": [e.to_dict() for e in self.script],
        }
        if self.expect is not None:
            data["expect"] = self.expect
        return data

    def script_digest(self) -> str:
        """Fingerprint of everything but mode/seed, for cross-mode comparison."""
        payload = {
            "nat_a": self.nat_a.value,
            "nat_b": self.nat_b.value,
            "signaling": self.signaling,
            "udp_binding_ttl": self.udp_binding_ttl,
            "tcp_idle_ttl": self.tcp_idle_ttl,
            "extra_clients": self.extra_clients,
            "script": [e.to_dict() for e in self.script],
        }
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass
class DirectionStats:
    sent: int = 0
    delivered: int = 0
    payload_mismatches: int = 0

    def to_dict(self) -> dict:
        return {
            "sent": self.sent,
            "delivered": self.delivered,
            "payload_mismatches": self.payload_mismatches,
        }


@dataclass
class Report:
    """Machine-readable outcome of one scenario run."""

    mode: str
    seed: int
    script_digest: str
    outcome: Outcome
    rtp: dict[str, DirectionStats]
    rtcp: dict[str, DirectionStats]
    sip_messages: int
    allocation_transactions: int
    clients: int
    events: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "seed": self.seed,
            "script_digest": self.script_digest,
            "outcome": self.outcome.value,
            "rtp": {k: v.to_dict() for k, v in self.rtp.items()},
            "rtcp": {k: v.to_dict() for k, v in self.rtcp.items()},
            "sip_messages": self.sip_messages,
            "allocation_transactions": self.allocation_transactions,
            "clients": self.clients,
            "events": self.events,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


@dataclass
class SimContext:
    """Everything a scenario run builds; kept for white-box assertions."""

    net: SimNetwork
    proxy: SipProxy
    nat_a: NatBox
    nat_b: NatBox
    client_a: SimClient
    client_b: SimClient
    extras: list[SimClient]


def build_simulation(scenario: Scenario) -> SimContext:
    proxy = SipProxy(
        ProxyConfig(
            public_ip=PROXY_IP,
            media_port_range=(40000, 40099),
            media_relay=scenario.mode != MODE_NAIVE,
        )
    )
    net = SimNetwork(proxy, sip_transport=scenario.signaling)

    def nat_box(nat_type: NatType, public_ip: str, lo: int, seed: int) -> NatBox:
        return NatBox(
            NatConfig(
                nat_type=nat_type,
                public_ip=public_ip,
                udp_binding_ttl=scenario.udp_binding_ttl,
                tcp_idle_ttl=scenario.tcp_idle_ttl,
                port_range=(lo, lo + 999),
            ),
            seed=seed,
        )

    nat_a = nat_box(scenario.nat_a, NAT_A_IP, 4325, scenario.seed)
    nat_b = nat_box(scenario.nat_b, NAT_B_IP, 6000, scenario.seed + 1)
    net.add_nat("nat_a", nat_a)
    net.add_nat("nat_b", nat_b)

    user_a, domain_a, ip_a, rtp_a = CLIENT_A
    user_b, domain_b, ip_b, rtp_b = CLIENT_B
    client_a = SimClient(net, "client_a", user_a, domain_a, nat_a, "nat_a", ip_a, rtp_a)
    client_b = SimClient(net, "client_b", user_b, domain_b, nat_b, "nat_b", ip_b, rtp_b)

    extras = []
    for i in range(scenario.extra_clients):
        nat = nat_box(NatType.FULL_CONE, f"99.0.0.{i + 1}", 20000, scenario.seed + 2 + i)
        net.add_nat(f"nat_x{i + 1}", nat)
        extras.append(
            SimClient(
                net,
                f"client_x{i + 1}",
                f"Client{i + 3}",
                f"local{i + 3}.com",
                nat,
                f"nat_x{i + 1}",
                f"172.16.0.{i + 1}",
                50000,
            )
        )
    return SimContext(net, proxy, nat_a, nat_b, client_a, client_b, extras)


def _sweep(ctx: SimContext) -> None:
    ctx.proxy.tick(ctx.net.now)
    ctx.nat_a.expire(ctx.net.now)
    ctx.nat_b.expire(ctx.net.now)


def execute_script(ctx: SimContext, scenario: Scenario) -> None:
    """Run the script sequentially, draining the event queue between steps."""
    net = ctx.net
    for event in scenario.script:
        if event.kind == "register":
            for client in [ctx.client_a, ctx.client_b, *ctx.extras]:
                client.register()
            net.run()
        elif event.kind == "idle":
            end = net.now + event.seconds
            t = net.now + 1.0
            while t <= end:
                net.schedule_at(t, lambda: _sweep(ctx))
                t += 1.0
            net.settle_to(end)
        elif event.kind == "call":
            caller, callee = (
                (ctx.client_a, ctx.client_b) if event.caller == "a" else (ctx.client_b, ctx.client_a)
            )
            caller.invite(callee)
            net.run()
        elif event.kind == "talk":
            for k in range(event.packets):
                when = net.now + k * event.interval
                net.schedule_at(when, lambda k=k, c=ctx.client_a: c.send_rtp(k))
                net.schedule_at(when, lambda k=k, c=ctx.client_b: c.send_rtp(k))
            if event.packets:
                mid = net.now + (event.packets // 2) * event.interval
                net.schedule_at(mid, ctx.client_a.send_rtcp)
                net.schedule_at(mid, ctx.client_b.send_rtcp)
            net.run()
        elif event.kind == "hangup":
            actor = ctx.client_a if event.caller == "a" else ctx.client_b
            actor.hangup()
            net.run()


def _direction_stats(sender: SimClient, receiver: SimClient) -> DirectionStats:
    stats = DirectionStats(sent=len(sender.media.sent), delivered=len(receiver.media.received))
    sent_by_seq = dict(sender.media.sent)
    for seq, payload in receiver.media.received:
        if sent_by_seq.get(seq) != payload:
            stats.payload_mismatches += 1
    return stats


def run_scenario(scenario: Scenario) -> Report:
    """Execute one scenario deterministically and summarize it."""
    ctx = build_simulation(scenario)
    execute_script(ctx, scenario)
    net = ctx.net

    rtp = {
        "a_to_b": _direction_stats(ctx.client_a, ctx.client_b),
        "b_to_a": _direction_stats(ctx.client_b, ctx.client_a),
    }
    rtcp = {
        "a_to_b": DirectionStats(ctx.client_a.media.rtcp_sent, ctx.client_b.media.rtcp_received),
        "b_to_a": DirectionStats(ctx.client_b.media.rtcp_sent, ctx.client_a.media.rtcp_received),
    }

    clients = [ctx.client_a, ctx.client_b, *ctx.extras]
    client_names = {c.name for c in clients}
    sip_messages = sum(
        1
        for entry in net.events
        if entry.actor in client_names and entry.event in ("sip_sent", "sip_received")
    )

    # Both ends must have seen the call complete (caller: 200, callee: ACK).
    established = ctx.client_a.ever_established and ctx.client_b.ever_established
    if not established:
        outcome = Outcome.SIGNALING_BLOCKED
    else:
        media_ok = all(
            s.delivered == s.sent and s.payload_mismatches == 0 for s in rtp.values()
        )
        outcome = Outcome.MEDIA_OK if media_ok else Outcome.MEDIA_BLOCKED

    allocation_transactions = (
        ALLOCATIONS_PER_CLIENT * len(clients) if scenario.mode == MODE_BASELINE else 0
    )
    if scenario.mode == MODE_BASELINE:
        for client in clients:
            net.log(
                "accounting",
                "baseline_allocations_assumed",
                f"{client.name}: {ALLOCATIONS_PER_CLIENT} transactions",
            )

    return Report(
        mode=scenario.mode,
        seed=scenario.seed,
        script_digest=scenario.script_digest(),
        outcome=outcome,
        rtp=rtp,
        rtcp=rtcp,
        sip_messages=sip_messages,
        allocation_transactions=allocation_transactions,
        clients=len(clients),
        events=[entry.to_dict() for entry in net.events],
    )


def count_savings(adapted: Report, baseline: Report) -> int:
    """Allocation transactions eliminated relative to the baseline accounting."""
    if adapted.script_digest != baseline.script_digest:
        raise ScriptMismatch("reports were produced from different scripts")
    return baseline.allocation_transactions - adapted.allocation_transactions


def matrix_expected_outcome(nat_a: NatType, nat_b: NatType, mode: str) -> Outcome | None:
    """Outcome asserted by the pairing matrix, or None when only recorded."""
    if mode in (MODE_ADAPTED, MODE_BASELINE):
        return Outcome.MEDIA_OK
    restrictive = (NatType.SYMMETRIC, NatType.PORT_RESTRICTED_CONE)
    if nat_a in restrictive and nat_b in restrictive:
        return Outcome.MEDIA_BLOCKED
    return None


def run_matrix(
    modes: list[str], seed: int = 0, packets: int = 50
) -> tuple[dict, list[str]]:
    """Run every NAT pairing in each mode; returns (summary, assertion failures)."""
    summary: dict = {}
    failures: list[str] = []
    for mode in modes:
        if mode not in MODES:
            raise InvalidScenario(f"unknown mode: {mode!r}")
        mode_summary = {}
        for nat_a in NatType:
            for nat_b in NatType:
                scenario = Scenario(
                    nat_a=nat_a,
                    nat_b=nat_b,
                    script=default_script(packets),
                    seed=seed,
                    mode=mode,
                )
                report = run_scenario(scenario)
                key = f"{nat_a.value}+{nat_b.value}"
                mode_summary[key] = {
                    "outcome": report.outcome.value,
                    "rtp": {k: v.to_dict() for k, v in report.rtp.items()},
                    "sip_messages": report.sip_messages,
                    "allocation_transactions": report.allocation_transactions,
                }
                expected = matrix_expected_outcome(nat_a, nat_b, mode)
                if expected is not None and report.outcome is not expected:
                    failures.append(
                        f"{mode} {key}: expected {expected.value}, got {report.outcome.value}"
                    )
        summary[mode] = mode_summary
    return summary, failures
