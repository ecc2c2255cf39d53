"""Deterministic state machines for the four classic NAT behaviors.

Mapping rule: full cone, restricted cone and port restricted cone reuse one
external port per internal source; a symmetric NAT allocates a fresh
external port per (internal source, destination) pair.

Filtering rule, applied to inbound packets addressed to a live binding:

    full cone            deliver from anyone
    restricted cone      deliver iff the source IP was previously contacted
    port restricted cone deliver iff the source (IP, port) was contacted
    symmetric            deliver iff the source equals the binding's
                         single destination

UDP bindings expire after ``udp_binding_ttl`` idle seconds (any delivered
or sent packet refreshes the window); TCP bindings persist for the life of
the connection unless ``tcp_idle_ttl`` is set.  Everything is driven by an
external virtual clock, and port allocation is sequential from a seeded
offset, so identical event sequences produce identical binding tables.
"""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass, field
from enum import Enum

from .net import TransportAddress

UDP = "udp"
TCP = "tcp"


class NatType(Enum):
    FULL_CONE = "full_cone"
    RESTRICTED_CONE = "restricted_cone"
    PORT_RESTRICTED_CONE = "port_restricted_cone"
    SYMMETRIC = "symmetric"


class PortPoolExhausted(Exception):
    pass


@dataclass
class NatConfig:
    nat_type: NatType
    public_ip: str
    udp_binding_ttl: float = 60.0
    tcp_idle_ttl: float | None = None  # None: TCP bindings never expire
    port_range: tuple[int, int] = (30000, 39999)

    def __post_init__(self) -> None:
        ipaddress.IPv4Address(self.public_ip)
        lo, hi = self.port_range
        if not (1 <= lo < hi <= 65535):
            raise ValueError(f"bad port range: {self.port_range}")
        if self.udp_binding_ttl <= 0:
            raise ValueError("udp_binding_ttl must be positive")


@dataclass
class NatBinding:
    internal: TransportAddress
    external: TransportAddress
    transport: str
    last_activity: float
    peers_contacted: set[TransportAddress] = field(default_factory=set)
    destination_key: TransportAddress | None = None  # symmetric only


class NatBox:
    """One NAT instance: binding table plus the type's mapping/filtering rules."""

    def __init__(self, config: NatConfig, seed: int = 0):
        self.config = config
        self._bindings: dict[tuple, NatBinding] = {}
        self._by_port: dict[int, NatBinding] = {}
        lo, hi = config.port_range
        self._span = hi - lo + 1
        self._next = lo + seed % self._span

    @property
    def bindings(self) -> list[NatBinding]:
        return list(self._bindings.values())

    def _key(self, internal: TransportAddress, dst: TransportAddress, transport: str) -> tuple:
        if self.config.nat_type is NatType.SYMMETRIC:
            return (internal, dst, transport)
        return (internal, transport)

    def _ttl(self, transport: str) -> float | None:
        if transport == UDP:
            return self.config.udp_binding_ttl
        return self.config.tcp_idle_ttl

    def _is_stale(self, binding: NatBinding, now: float) -> bool:
        ttl = self._ttl(binding.transport)
        return ttl is not None and now - binding.last_activity >= ttl

    def _drop(self, binding: NatBinding) -> None:
        for key, value in list(self._bindings.items()):
            if value is binding:
                del self._bindings[key]
                break
        self._by_port.pop(binding.external.port, None)

    def _allocate_port(self) -> int:
        lo, hi = self.config.port_range
        for _ in range(self._span):
            port = lo + (self._next - lo) % self._span
            self._next = port + 1
            if port not in self._by_port:
                return port
        raise PortPoolExhausted(f"no free external port in {self.config.port_range}")

    def outbound(
        self,
        internal_src: TransportAddress,
        external_dst: TransportAddress,
        now: float,
        transport: str = UDP,
    ) -> TransportAddress:
        """Translate an outbound packet; create or refresh its binding.

        Returns the external (mapped) source address.
        """
        key = self._key(internal_src, external_dst, transport)
        binding = self._bindings.get(key)
        if binding is not None and self._is_stale(binding, now):
            self._drop(binding)
            binding = None
        if binding is None:
            external = TransportAddress(self.config.public_ip, self._allocate_port())
            binding = NatBinding(
                internal=internal_src,
                external=external,
                transport=transport,
                last_activity=now,
                destination_key=(
                    external_dst if self.config.nat_type is NatType.SYMMETRIC else None
                ),
            )
            self._bindings[key] = binding
            self._by_port[external.port] = binding
        binding.peers_contacted.add(external_dst)
        binding.last_activity = now
        return binding.external

    def inbound(
        self,
        external_src: TransportAddress,
        external_dst: TransportAddress,
        now: float,
        transport: str = UDP,
    ) -> TransportAddress | None:
        """Filter an inbound packet addressed to this NAT's public side.

        Returns the internal destination when the packet is delivered, or
        None when the NAT silently drops it (no live binding, or the type's
        filtering rule rejects the source).  Delivery refreshes the binding.
        """
        if external_dst.ip != self.config.public_ip:
            raise ValueError(f"{external_dst} is not on this NAT's public address")
        binding = self._by_port.get(external_dst.port)
        if binding is None or binding.transport != transport:
            return None
        if self._is_stale(binding, now):
            self._drop(binding)
            return None
        if not self._accepts(binding, external_src):
            return None
        binding.last_activity = now
        return binding.internal

    def _accepts(self, binding: NatBinding, source: TransportAddress) -> bool:
        nat_type = self.config.nat_type
        if nat_type is NatType.FULL_CONE:
            return True
        if nat_type is NatType.RESTRICTED_CONE:
            return any(peer.ip == source.ip for peer in binding.peers_contacted)
        if nat_type is NatType.PORT_RESTRICTED_CONE:
            return source in binding.peers_contacted
        return source == binding.destination_key

    def expire(self, now: float) -> int:
        """Remove every stale binding; return how many were dropped."""
        stale = [b for b in self._bindings.values() if self._is_stale(b, now)]
        for binding in stale:
            self._drop(binding)
        return len(stale)

    def external_for(
        self,
        internal_src: TransportAddress,
        external_dst: TransportAddress | None = None,
        transport: str = UDP,
    ) -> TransportAddress | None:
        """Read-only lookup of the current mapping (no refresh); None if absent.

        For a symmetric NAT the destination must be given, since mappings
        are per destination.
        """
        if self.config.nat_type is NatType.SYMMETRIC:
            if external_dst is None:
                raise ValueError("symmetric lookup requires the destination")
            binding = self._bindings.get((internal_src, external_dst, transport))
        else:
            binding = self._bindings.get((internal_src, transport))
        return binding.external if binding else None
