"""Proxy/registrar tying signaling connections and the media relay together.

REGISTER binds the client to the TCP connection it arrived on; INVITE and
its answer get their session descriptions rewritten to relay ports before
forwarding; ACK establishes; BYE tears the relay session down.  Request
failures come back as SIP error responses, never silence.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable

from .connection_manager import (
    ConnectionId,
    ConnectionManager,
    MalformedRegister,
    NotRegistered,
    aor_of,
)
from .media_controller import (
    MediaController,
    MediaSession,
    PoolExhausted,
    RelaySend,
    SdpRewriteError,
)
from .net import TransportAddress
from .sdp import SdpError, parse_sdp, serialize_sdp
from .sip_message import (
    Method,
    SipMessage,
    SipParseError,
    ViaHeader,
    build_response,
    parse_message,
    serialize_message,
    stamp_received,
)

Outbound = tuple[ConnectionId, bytes]


class Phase(Enum):
    IDLE = "idle"
    INVITING = "inviting"
    ESTABLISHED = "established"
    TERMINATED = "terminated"


@dataclass
class CallState:
    call_id: str
    caller_aor: str
    callee_aor: str
    caller_conn: ConnectionId
    callee_conn: ConnectionId
    invited_at: float
    phase: Phase = Phase.INVITING
    media: MediaSession | None = None

    def peer_conn(self, conn: ConnectionId) -> ConnectionId:
        return self.callee_conn if conn == self.caller_conn else self.caller_conn


@dataclass
class ProxyConfig:
    public_ip: str
    sip_tcp_port: int = 5060
    media_port_range: tuple[int, int] = (40000, 40199)
    registration_ttl: float = 3600.0
    invite_guard: float = 32.0
    media_relay: bool = True  # off: forward bodies untouched (no relay, no rewrite)
    media_buffer_cap: int = 16
    relatch: bool = False

    def __post_init__(self) -> None:
        lo, hi = self.media_port_range
        if lo <= self.sip_tcp_port <= hi:
            raise ValueError("media port range must not contain the SIP port")


@dataclass
class TickAction:
    kind: str  # "registration_expired" | "invite_timeout"
    detail: str


class SipProxy:
    """Deterministic proxy core; transport adapters feed it bytes and a clock.

    Messages for one call are handled strictly in arrival order; drive the
    proxy from a single event loop.
    """

    def __init__(
        self,
        config: ProxyConfig,
        on_event: Callable[[str, str], None] | None = None,
    ):
        self.config = config
        self.registrar = ConnectionManager(config.registration_ttl)
        self.media = MediaController(
            config.public_ip,
            config.media_port_range,
            buffer_cap=config.media_buffer_cap,
            relatch=config.relatch,
        )
        self.calls: dict[str, CallState] = {}
        self._conn_remote: dict[ConnectionId, TransportAddress] = {}
        self._on_event = on_event or (lambda event, detail: None)

    def set_event_hook(self, hook: Callable[[str, str], None]) -> None:
        """Route proxy events (registrations, errors, releases) to a log."""
        self._on_event = hook

    # -- connection lifecycle ------------------------------------------------

    def connection_opened(self, conn: ConnectionId, remote: TransportAddress) -> None:
        self._conn_remote[conn] = remote

    def connection_closed(self, conn: ConnectionId) -> list[str]:
        self._conn_remote.pop(conn, None)
        removed = self.registrar.on_connection_closed(conn)
        for aor in removed:
            self._on_event("registration_dropped", aor)
        return removed

    # -- signaling -----------------------------------------------------------

    def handle_message(self, conn: ConnectionId, raw: bytes, now: float) -> list[Outbound]:
        """Process one framed SIP message; returns messages to transmit."""
        try:
            msg = parse_message(raw)
        except SipParseError as exc:
            self._on_event("malformed_message", str(exc))
            return [(conn, serialize_message(_bad_request_for_garbage(str(exc))))]

        if msg.is_request:
            source = self._conn_remote.get(conn)
            if source is not None:
                msg = stamp_received(msg, source)
            if msg.method is Method.REGISTER:
                return self._on_register(conn, msg, now)
            if msg.method is Method.INVITE:
                return self._on_invite(conn, msg, now)
            if msg.method is Method.ACK:
                return self._on_ack(conn, msg)
            return self._on_bye(conn, msg)
        return self._on_response(conn, msg, now)

    def _reply(self, conn: ConnectionId, request: SipMessage, code: int, reason: str) -> list[Outbound]:
        self._on_event("error_response", f"{code} {reason} for {request.call_id}")
        return [(conn, serialize_message(build_response(request, code, reason)))]

    def _on_register(self, conn: ConnectionId, msg: SipMessage, now: float) -> list[Outbound]:
        try:
            registration = self.registrar.register(conn, msg, now)
        except MalformedRegister as exc:
            return self._reply(conn, msg, 400, f"Bad Request ({exc})")
        self._on_event("registered", f"{registration.aor} on connection {conn}")
        ok = build_response(msg, 200, "OK", contact=msg.contact)
        return [(conn, serialize_message(ok))]

    def _on_invite(self, conn: ConnectionId, msg: SipMessage, now: float) -> list[Outbound]:
        call_id = msg.call_id
        if call_id in self.calls and self.calls[call_id].phase is not Phase.TERMINATED:
            return self._reply(conn, msg, 400, "Bad Request (duplicate Call-ID)")
        callee_aor = aor_of(msg.request_uri)
        caller_aor = aor_of(msg.from_)
        try:
            callee_conn = self.registrar.route_to(callee_aor)
        except NotRegistered:
            return self._reply(conn, msg, 404, "Not Found")

        session: MediaSession | None = None
        if self.config.media_relay:
            try:
                session = self.media.allocate_session(call_id)
            except PoolExhausted:
                return self._reply(conn, msg, 503, "Service Unavailable (media ports exhausted)")
            try:
                offer = parse_sdp(msg.body)
                rewritten = self.media.process_offer(session, offer)
            except (SdpError, SdpRewriteError) as exc:
                self.media.release_session(call_id)
                return self._reply(conn, msg, 400, f"Bad Request ({exc})")
            msg = _with_body(msg, serialize_sdp(rewritten))

        self.calls[call_id] = CallState(
            call_id=call_id,
            caller_aor=caller_aor,
            callee_aor=callee_aor,
            caller_conn=conn,
            callee_conn=callee_conn,
            invited_at=now,
            media=session,
        )
        self._on_event("invite_forwarded", f"{caller_aor} -> {callee_aor} ({call_id})")
        return [(callee_conn, serialize_message(msg))]

    def _on_ack(self, conn: ConnectionId, msg: SipMessage) -> list[Outbound]:
        call = self.calls.get(msg.call_id)
        if call is None:
            self._on_event("stray_ack", msg.call_id)
            return []
        if call.phase is Phase.INVITING:
            call.phase = Phase.ESTABLISHED
            self._on_event("call_established", msg.call_id)
        return [(call.peer_conn(conn), serialize_message(msg))]

    def _on_bye(self, conn: ConnectionId, msg: SipMessage) -> list[Outbound]:
        call = self.calls.get(msg.call_id)
        if call is None:
            return self._reply(conn, msg, 481, "Call/Transaction Does Not Exist")
        self._terminate(call)
        return [(call.peer_conn(conn), serialize_message(msg))]

    def _on_response(self, conn: ConnectionId, msg: SipMessage, now: float) -> list[Outbound]:
        call = self.calls.get(msg.call_id)
        if call is None:
            self._on_event("stray_response", f"{msg.status_code} for {msg.call_id}")
            return []
        dest = call.peer_conn(conn)
        if msg.cseq_method is Method.INVITE:
            if msg.status_code == 200:
                if self.config.media_relay and call.media is not None:
                    try:
                        answer = parse_sdp(msg.body)
                        rewritten = self.media.process_answer(call.media, answer)
                    except (SdpError, SdpRewriteError) as exc:
                        self._terminate(call)
                        self._on_event("bad_answer", f"{msg.call_id}: {exc}")
                        failure = build_response(msg, 500, "Server Internal Error")
                        return [(dest, serialize_message(failure))]
                    msg = _with_body(msg, serialize_sdp(rewritten))
                self._on_event("answer_forwarded", msg.call_id)
            elif msg.status_code >= 300:
                self._terminate(call)
        return [(dest, serialize_message(msg))]

    # -- media ---------------------------------------------------------------

    def handle_media(
        self, relay_port: int, src: TransportAddress, datagram: bytes, now: float
    ) -> list[RelaySend]:
        """Relay one UDP datagram; returns the datagrams to emit."""
        decision = self.media.on_media_packet(relay_port, src, datagram, now)
        if decision.action == "drop":
            self._on_event("media_dropped", f"port {relay_port}: {decision.reason}")
        return decision.sends(datagram)

    # -- failure and time ----------------------------------------------------

    def delivery_failed(self, conn: ConnectionId, raw: bytes, now: float) -> list[Outbound]:
        """The transport could not deliver an outbound message on ``conn``.

        The connection is treated as dead: its registrations are dropped,
        and an undeliverable forwarded INVITE is answered 404 toward the
        caller.
        """
        removed = self.connection_closed(conn)
        self._on_event("delivery_failed", f"connection {conn} ({', '.join(removed) or 'no registrations'})")
        try:
            msg = parse_message(raw)
        except SipParseError:
            return []
        call = self.calls.get(msg.call_id)
        if call is None:
            return []
        if msg.is_request and msg.method is Method.INVITE and call.phase is Phase.INVITING:
            self._terminate(call)
            failure = build_response(msg, 404, "Not Found")
            return [(call.caller_conn, serialize_message(failure))]
        if call.phase is not Phase.TERMINATED:
            self._terminate(call)
        return []

    def tick(self, now: float) -> list[TickAction]:
        """Expire registrations and time out unanswered calls."""
        actions = [
            TickAction("registration_expired", aor) for aor in self.registrar.expire(now)
        ]
        for call in list(self.calls.values()):
            if call.phase is Phase.INVITING and now - call.invited_at >= self.config.invite_guard:
                self._terminate(call)
                actions.append(TickAction("invite_timeout", call.call_id))
        for action in actions:
            self._on_event(action.kind, action.detail)
        return actions

    def _terminate(self, call: CallState) -> None:
        if call.phase is Phase.TERMINATED:
            return
        call.phase = Phase.TERMINATED
        if call.media is not None and call.media.call_id in self.media.sessions:
            freed = self.media.release_session(call.call_id)
            self._on_event("media_released", f"{call.call_id}: {freed} ports freed")


def _with_body(msg: SipMessage, body: bytes) -> SipMessage:
    return replace(msg, body=body)


def _bad_request_for_garbage(detail: str) -> SipMessage:
    """400 with placeholder headers, for input too broken to echo."""
    return SipMessage(
        via=ViaHeader(transport="TCP", sent_by="0.0.0.0"),
        from_="<sip:unknown@invalid>",
        to_="<sip:unknown@invalid>",
        call_id="malformed@proxy",
        cseq_num=0,
        cseq_method=Method.REGISTER,
        status_code=400,
        reason=f"Bad Request ({detail[:80]})",
    )
