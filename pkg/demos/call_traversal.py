#!/usr/bin/env python3
"""Place the same call three ways and compare what gets through.

Two clients sit behind symmetric NATs, the hardest pairing.  The naive run
forwards session descriptions untouched, so media aims at private
addresses and dies.  The adapted run routes signaling over persistent TCP
and relays media through the proxy's port pool.  The baseline run shows
what a standalone relay-allocation protocol would have cost on top.
"""

from dataclasses import replace

from sipnat import NatType, Scenario, ScriptEvent, count_savings, run_scenario


def show(title: str, report) -> None:
    print(f"--- {title}")
    print(f"    outcome: {report.outcome.value}")
    for direction, stats in report.rtp.items():
        print(f"    rtp {direction}: {stats.delivered}/{stats.sent} delivered")
    print(f"    client-visible SIP messages: {report.sip_messages}")
    print(f"    allocation transactions: {report.allocation_transactions}")


def main() -> None:
    script = [
        ScriptEvent("register"),
        ScriptEvent("call", caller="b"),
        ScriptEvent("talk", packets=50, interval=0.02),
        ScriptEvent("hangup", caller="b"),
    ]
    base = Scenario(nat_a=NatType.SYMMETRIC, nat_b=NatType.SYMMETRIC, script=script, seed=1)

    naive = run_scenario(replace(base, mode="naive"))
    show("naive: clients trust the addresses in the SDP", naive)

    adapted = run_scenario(base)
    show("adapted: TCP signaling + proxy media relay", adapted)

    baseline = run_scenario(replace(base, mode="baseline"))
    show("baseline: same call, plus standalone-relay allocation accounting", baseline)

    print(f"\nallocation transactions eliminated: {count_savings(adapted, baseline)}")

    print("\n--- the 60-second trap: calling 2 minutes after registration")
    idle_script = [
        ScriptEvent("register"),
        ScriptEvent("idle", seconds=120),
        ScriptEvent("call", caller="b"),
        ScriptEvent("talk", packets=10, interval=0.02),
        ScriptEvent("hangup", caller="b"),
    ]
    over_tcp = run_scenario(replace(base, script=idle_script))
    over_udp = run_scenario(replace(base, script=idle_script, signaling="udp"))
    print(f"    TCP signaling: {over_tcp.outcome.value}")
    print(f"    UDP signaling: {over_udp.outcome.value}"
          " (the NAT closed the port while the clients were quiet)")


if __name__ == "__main__":
    main()
