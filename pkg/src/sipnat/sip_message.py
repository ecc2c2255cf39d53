"""SIP message codec for the REGISTER / INVITE / ACK / BYE subset.

Parses and serializes textual SIP requests and responses with a single Via
hop, the mandatory header set (Via, From, To, Call-ID, CSeq) and an opaque
body framed by Content-Length.  Unknown headers are preserved verbatim so
that ``parse_message(serialize_message(m))`` is field-identical to ``m``.

Input accepts CRLF or bare LF line endings and case-insensitive header
names; output is always CRLF with canonical header capitalization.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from enum import Enum

from .net import TransportAddress

MAX_HEADER_BYTES = 65536


class Method(str, Enum):
    REGISTER = "REGISTER"
    INVITE = "INVITE"
    ACK = "ACK"
    BYE = "BYE"


class SipError(Exception):
    """Base class for SIP codec failures."""


class SipParseError(SipError):
    """Base class for errors raised while parsing wire text."""


class MalformedStartLine(SipParseError):
    pass


class MissingMandatoryHeader(SipParseError):
    def __init__(self, header: str):
        super().__init__(f"missing mandatory header: {header}")
        self.header = header


class BodyLengthMismatch(SipParseError):
    pass


class UnsupportedMethod(SipParseError):
    pass


class MalformedHeader(SipParseError):
    pass


class InvariantViolation(SipError):
    """A message handed to the serializer breaks its own invariants."""


class FramingError(SipError):
    """The TCP stream cannot be split into messages."""


@dataclass
class ViaHeader:
    """Single Via hop: transport, sent-by host, and optional parameters.

    ``received`` carries the source address observed by the server, which is
    what response routing must use when the sent-by host is private.
    """

    transport: str  # "TCP" or "UDP"
    sent_by: str  # host or host:port, as written on the wire
    branch: str | None = None
    received: TransportAddress | None = None
    extra_params: tuple[tuple[str, str | None], ...] = ()

    def render(self) -> str:
        parts = [f"SIP/2.0/{self.transport} {self.sent_by}"]
        if self.branch is not None:
            parts.append(f";branch={self.branch}")
        if self.received is not None:
            parts.append(f";received={self.received}")
        for name, value in self.extra_params:
            parts.append(f";{name}" if value is None else f";{name}={value}")
        return "".join(parts)


@dataclass
class SipMessage:
    """One parsed SIP request or response.

    Exactly one of ``method`` (requests) or ``status_code`` (responses) is
    set.  ``extra_headers`` keeps unrecognized headers in arrival order so
    serialization round-trips.
    """

    via: ViaHeader
    from_: str
    to_: str
    call_id: str
    cseq_num: int
    cseq_method: Method
    method: Method | None = None
    request_uri: str | None = None
    status_code: int | None = None
    reason: str | None = None
    contact: str | None = None
    content_type: str | None = None
    body: bytes = b""
    extra_headers: tuple[tuple[str, str], ...] = ()

    @property
    def is_request(self) -> bool:
        return self.method is not None

    def check_invariants(self) -> None:
        """Raise InvariantViolation unless the message is self-consistent."""
        if (self.method is None) == (self.status_code is None):
            raise InvariantViolation("message must be a request xor a response")
        if self.is_request:
            if not self.request_uri:
                raise InvariantViolation("request without request URI")
            if self.cseq_method is not self.method:
                raise InvariantViolation(
                    f"CSeq method {self.cseq_method} does not match {self.method}"
                )
        else:
            if self.status_code is not None and not 100 <= self.status_code <= 699:
                raise InvariantViolation(f"status code out of range: {self.status_code}")
        if not self.call_id:
            raise InvariantViolation("empty Call-ID")
        if self.cseq_num < 0:
            raise InvariantViolation("negative CSeq number")
        if not isinstance(self.body, bytes):
            raise InvariantViolation("body must be bytes")


_MANDATORY = ("Via", "From", "To", "Call-ID", "CSeq")
_VIA_RE = re.compile(r"^SIP/2\.0/(TCP|UDP)\s+([^;\s]+)\s*(;.*)?$")
_CSEQ_RE = re.compile(r"^(\d+)\s+(\S+)$", re.ASCII)
_CONTENT_LENGTH_RE = re.compile(rb"^content-length\s*:\s*(\d+)\s*$", re.I | re.M)


def _is_ascii_digits(text: str) -> bool:
    # str.isdigit() alone accepts Unicode digits that int() rejects.
    return text.isascii() and text.isdigit()


def _parse_via(value: str) -> ViaHeader:
    m = _VIA_RE.match(value.strip())
    if not m:
        raise MalformedHeader(f"bad Via header: {value!r}")
    transport, sent_by, param_text = m.group(1), m.group(2), m.group(3) or ""
    branch: str | None = None
    received: TransportAddress | None = None
    extras: list[tuple[str, str | None]] = []
    for chunk in param_text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        name, eq, value_part = chunk.partition("=")
        name = name.strip()
        value_part = value_part.strip() if eq else None
        if name.lower() == "branch":
            branch = value_part or ""
        elif name.lower() == "received":
            try:
                received = TransportAddress.parse(value_part or "")
            except ValueError as exc:
                raise MalformedHeader(f"bad received parameter: {value_part!r}") from exc
        else:
            extras.append((name, value_part))
    return ViaHeader(transport, sent_by, branch, received, tuple(extras))


def _strip_name_addr(value: str) -> str:
    """Return the bare URI from a name-addr ('Name <uri>') or plain URI."""
    value = value.strip()
    if "<" in value and ">" in value:
        return value[value.index("<") + 1 : value.index(">")].strip()
    return value.split(";")[0].strip()


def _split_header_block(raw: bytes) -> tuple[bytes, bytes]:
    crlf = raw.find(b"\r\n\r\n")
    lf = raw.find(b"\n\n")
    if crlf == -1 and lf == -1:
        raise MalformedStartLine("message has no blank line terminating the headers")
    if crlf != -1 and (lf == -1 or crlf < lf):
        return raw[:crlf], raw[crlf + 4 :]
    return raw[:lf], raw[lf + 2 :]


def parse_message(raw: bytes) -> SipMessage:
    """Parse one complete SIP message (headers, blank line, body).

    Raises a SipParseError subclass on any malformed input; never any other
    exception, for arbitrary byte strings.
    """
    if not isinstance(raw, (bytes, bytearray)):
        raise TypeError("raw message must be bytes")
    header_block, body = _split_header_block(bytes(raw))
    text = header_block.decode("latin-1")
    lines = re.split(r"\r\n|\n", text)
    if not lines or not lines[0].strip():
        raise MalformedStartLine("empty start line")

    # Unfold continuation lines (leading whitespace joins the previous header).
    unfolded: list[str] = [lines[0]]
    for line in lines[1:]:
        if line[:1] in (" ", "\t") and len(unfolded) > 1:
            unfolded[-1] += " " + line.strip()
        else:
            unfolded.append(line)

    start = unfolded[0].strip()
    method: Method | None = None
    request_uri: str | None = None
    status_code: int | None = None
    reason: str | None = None
    if start.startswith("SIP/2.0"):
        parts = start.split(" ", 2)
        if len(parts) < 2 or parts[0] != "SIP/2.0" or not _is_ascii_digits(parts[1]):
            raise MalformedStartLine(f"bad status line: {start!r}")
        status_code = int(parts[1])
        if not 100 <= status_code <= 699:
            raise MalformedStartLine(f"status code out of range: {status_code}")
        reason = parts[2] if len(parts) > 2 else ""
    else:
        parts = start.split(" ")
        if len(parts) != 3 or parts[2] != "SIP/2.0":
            raise MalformedStartLine(f"bad request line: {start!r}")
        try:
            method = Method(parts[0])
        except ValueError:
            raise UnsupportedMethod(f"unsupported method: {parts[0]!r}") from None
        request_uri = parts[1]

    via: ViaHeader | None = None
    known: dict[str, str] = {}
    extras: list[tuple[str, str]] = []
    for line in unfolded[1:]:
        if not line.strip():
            continue
        name, sep, value = line.partition(":")
        if not sep or not name.strip():
            raise MalformedHeader(f"bad header line: {line!r}")
        name = name.strip()
        value = value.strip()
        lname = name.lower()
        if lname == "via":
            if via is not None:
                raise MalformedHeader("multiple Via headers are not supported")
            via = _parse_via(value)
        elif lname in ("from", "to", "call-id", "cseq", "contact", "content-type", "content-length"):
            if lname in known:
                raise MalformedHeader(f"duplicate {name} header")
            known[lname] = value
        else:
            extras.append((name, value))

    if via is None:
        raise MissingMandatoryHeader("Via")
    for header in ("From", "To", "Call-ID", "CSeq"):
        if header.lower() not in known:
            raise MissingMandatoryHeader(header)
    if not known["call-id"]:
        raise MissingMandatoryHeader("Call-ID")

    m = _CSEQ_RE.match(known["cseq"])
    if not m:
        raise MalformedHeader(f"bad CSeq header: {known['cseq']!r}")
    cseq_num = int(m.group(1))
    try:
        cseq_method = Method(m.group(2))
    except ValueError:
        raise UnsupportedMethod(f"unsupported CSeq method: {m.group(2)!r}") from None
    if method is not None and cseq_method is not method:
        raise MalformedHeader(
            f"CSeq method {cseq_method.value} does not match request method {method.value}"
        )

    if "content-length" in known:
        if not _is_ascii_digits(known["content-length"]):
            raise MalformedHeader(f"bad Content-Length: {known['content-length']!r}")
        declared = int(known["content-length"])
        if declared != len(body):
            raise BodyLengthMismatch(
                f"Content-Length {declared} but body has {len(body)} bytes"
            )

    contact = _strip_name_addr(known["contact"]) if "contact" in known else None
    return SipMessage(
        via=via,
        from_=known["from"],
        to_=known["to"],
        call_id=known["call-id"],
        cseq_num=cseq_num,
        cseq_method=cseq_method,
        method=method,
        request_uri=request_uri,
        status_code=status_code,
        reason=reason,
        contact=contact,
        content_type=known.get("content-type"),
        body=bytes(body),
        extra_headers=tuple(extras),
    )


def serialize_message(msg: SipMessage) -> bytes:
    """Emit CRLF wire text; Content-Length is always recomputed from the body."""
    msg.check_invariants()
    if msg.is_request:
        start = f"{msg.method.value} {msg.request_uri} SIP/2.0"
    else:
        start = f"SIP/2.0 {msg.status_code} {msg.reason or ''}".rstrip()
    lines = [
        start,
        f"Via: {msg.via.render()}",
        f"From: {msg.from_}",
        f"To: {msg.to_}",
        f"Call-ID: {msg.call_id}",
        f"CSeq: {msg.cseq_num} {msg.cseq_method.value}",
    ]
    if msg.contact is not None:
        lines.append(f"Contact: <{msg.contact}>")
    for name, value in msg.extra_headers:
        lines.append(f"{name}: {value}")
    if msg.content_type is not None:
        lines.append(f"Content-Type: {msg.content_type}")
    lines.append(f"Content-Length: {len(msg.body)}")
    try:
        head = "\r\n".join(lines).encode("latin-1")
    except UnicodeEncodeError as exc:
        raise InvariantViolation(f"header contains non latin-1 text: {exc}") from exc
    return head + b"\r\n\r\n" + msg.body


def stamp_received(msg: SipMessage, source: TransportAddress) -> SipMessage:
    """Return a copy of a received request with via.received set to its source.

    Idempotent: stamping twice with the same source yields an equal message.
    """
    if msg.via.received == source:
        return msg
    return replace(msg, via=replace(msg.via, received=source))


def build_response(
    request: SipMessage,
    status_code: int,
    reason: str,
    body: bytes = b"",
    content_type: str | None = None,
    contact: str | None = None,
) -> SipMessage:
    """Build a response echoing the request's Via, From, To, Call-ID and CSeq."""
    return SipMessage(
        via=request.via,
        from_=request.from_,
        to_=request.to_,
        call_id=request.call_id,
        cseq_num=request.cseq_num,
        cseq_method=request.cseq_method,
        status_code=status_code,
        reason=reason,
        contact=contact,
        content_type=content_type if body else None,
        body=body,
    )


class MessageFramer:
    """Splits an ordered TCP byte stream into complete SIP messages.

    Framing rule: read headers up to the blank line, then exactly
    Content-Length body bytes (0 if the header is absent).
    """

    def __init__(self, max_header_bytes: int = MAX_HEADER_BYTES):
        self._buffer = b""
        self._max_header_bytes = max_header_bytes

    def feed(self, data: bytes) -> list[bytes]:
        """Append stream bytes; return every complete raw message now available."""
        self._buffer += data
        messages: list[bytes] = []
        while True:
            crlf = self._buffer.find(b"\r\n\r\n")
            lf = self._buffer.find(b"\n\n")
            if crlf == -1 and lf == -1:
                if len(self._buffer) > self._max_header_bytes:
                    raise FramingError("header section exceeds maximum size")
                return messages
            if crlf != -1 and (lf == -1 or crlf < lf):
                header_end, body_start = crlf, crlf + 4
            else:
                header_end, body_start = lf, lf + 2
            m = _CONTENT_LENGTH_RE.search(self._buffer[:header_end])
            body_len = int(m.group(1)) if m else 0
            total = body_start + body_len
            if len(self._buffer) < total:
                return messages
            messages.append(self._buffer[:total])
            self._buffer = self._buffer[total:]
