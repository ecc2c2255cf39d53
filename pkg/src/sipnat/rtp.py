"""Minimal RTP fixed-header codec (version 2, network byte order).

The relay only needs to validate and count media packets; payloads are
opaque.  Padding, CSRC lists and header extensions are skipped on parse but
never generated.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

RTP_VERSION = 2
HEADER_LEN = 12


class RtpError(Exception):
    pass


class RtpParseError(RtpError):
    pass


class TooShort(RtpParseError):
    pass


class BadVersion(RtpParseError):
    pass


class FieldOutOfRange(RtpError):
    pass


@dataclass(frozen=True)
class RtpPacket:
    payload_type: int
    sequence: int
    timestamp: int
    ssrc: int
    payload: bytes = b""
    version: int = RTP_VERSION


def parse_rtp(raw: bytes) -> RtpPacket:
    """Decode the fixed header; remainder (minus padding/extension) is payload."""
    if len(raw) < HEADER_LEN:
        raise TooShort(f"datagram of {len(raw)} bytes, need at least {HEADER_LEN}")
    b0, b1, sequence, timestamp, ssrc = struct.unpack("!BBHII", raw[:HEADER_LEN])
    version = b0 >> 6
    if version != RTP_VERSION:
        raise BadVersion(f"version {version}, expected {RTP_VERSION}")
    has_padding = bool(b0 & 0x20)
    has_extension = bool(b0 & 0x10)
    csrc_count = b0 & 0x0F
    payload_type = b1 & 0x7F

    offset = HEADER_LEN + 4 * csrc_count
    if len(raw) < offset:
        raise TooShort("datagram shorter than its CSRC list")
    if has_extension:
        if len(raw) < offset + 4:
            raise TooShort("datagram shorter than its extension header")
        ext_words = struct.unpack("!H", raw[offset + 2 : offset + 4])[0]
        offset += 4 + 4 * ext_words
        if len(raw) < offset:
            raise TooShort("datagram shorter than its header extension")
    end = len(raw)
    if has_padding:
        pad = raw[-1]
        if pad == 0 or pad > end - offset:
            raise TooShort(f"invalid padding count {pad}")
        end -= pad
    return RtpPacket(
        payload_type=payload_type,
        sequence=sequence,
        timestamp=timestamp,
        ssrc=ssrc,
        payload=raw[offset:end],
    )


def build_rtp(
    payload_type: int,
    sequence: int,
    timestamp: int,
    ssrc: int,
    payload: bytes = b"",
) -> bytes:
    """Encode a packet with no padding, extension or CSRC entries."""
    if not 0 <= payload_type <= 127:
        raise FieldOutOfRange(f"payload type out of range: {payload_type}")
    if not 0 <= sequence <= 0xFFFF:
        raise FieldOutOfRange(f"sequence out of range: {sequence}")
    if not 0 <= timestamp <= 0xFFFFFFFF:
        raise FieldOutOfRange(f"timestamp out of range: {timestamp}")
    if not 0 <= ssrc <= 0xFFFFFFFF:
        raise FieldOutOfRange(f"ssrc out of range: {ssrc}")
    header = struct.pack("!BBHII", RTP_VERSION << 6, payload_type, sequence, timestamp, ssrc)
    return header + payload
