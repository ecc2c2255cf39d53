"""Network endpoint primitives shared by every layer of the package."""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass


@dataclass(frozen=True, order=True)
class TransportAddress:
    """An (IPv4 address, port) endpoint."""

    ip: str
    port: int

    def __post_init__(self) -> None:
        try:
            ipaddress.IPv4Address(self.ip)
        except (ipaddress.AddressValueError, ValueError) as exc:
            raise ValueError(f"invalid IPv4 address: {self.ip!r}") from exc
        if not 1 <= self.port <= 65535:
            raise ValueError(f"port out of range: {self.port}")

    @classmethod
    def parse(cls, text: str) -> "TransportAddress":
        """Parse ``"ip:port"`` into an address, raising ValueError otherwise."""
        host, sep, port_text = text.partition(":")
        if not sep or not (port_text.isascii() and port_text.isdigit()):
            raise ValueError(f"expected ip:port, got {text!r}")
        return cls(host, int(port_text))

    def __str__(self) -> str:
        return f"{self.ip}:{self.port}"
