#!/usr/bin/env python3
"""Walk through the four classic NAT behaviors with one shared history.

A machine at 192.168.1.11:5600 sends a packet to 222.212.69.5:5600 through
each NAT type, then various outside sources try to reach the mapping that
send created.
"""

from sipnat import NatBox, NatConfig, NatType, TransportAddress

LOCAL = TransportAddress("192.168.1.11", 5600)
CONTACTED = TransportAddress("222.212.69.5", 5600)

PROBES = [
    ("the contacted peer itself", CONTACTED),
    ("same IP, different port", TransportAddress("222.212.69.5", 3560)),
    ("a machine never contacted", TransportAddress("222.250.16.2", 4000)),
]


def main() -> None:
    print(f"history: {LOCAL} sent one packet to {CONTACTED}\n")
    for nat_type in NatType:
        nat = NatBox(
            NatConfig(nat_type=nat_type, public_ip="68.92.25.44", port_range=(4325, 4424)),
            seed=0,
        )
        mapped = nat.outbound(LOCAL, CONTACTED, now=0.0)
        print(f"{nat_type.value:22s} maps {LOCAL} -> {mapped}")
        for label, source in PROBES:
            verdict = nat.inbound(source, mapped, now=1.0)
            status = f"delivered to {verdict}" if verdict else "blocked"
            print(f"    inbound from {str(source):20s} ({label:26s}): {status}")

        if nat_type is NatType.SYMMETRIC:
            second = nat.outbound(LOCAL, TransportAddress("130.1.1.1", 700), now=2.0)
            print(f"    second destination gets a second mapping: {second}")
        print()

    print("expiry: a UDP mapping dies after 60 idle seconds")
    nat = NatBox(NatConfig(nat_type=NatType.FULL_CONE, public_ip="68.92.25.44",
                           port_range=(4325, 4424)))
    mapped = nat.outbound(LOCAL, CONTACTED, now=0.0)
    print(f"    t=59:  {nat.inbound(CONTACTED, mapped, now=59.0)}  (refreshed)")
    print(f"    t=120: {nat.inbound(CONTACTED, mapped, now=120.0)}  (expired)")


if __name__ == "__main__":
    main()
