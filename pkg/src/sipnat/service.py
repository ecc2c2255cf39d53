"""Socket adapter running the deterministic proxy core on real transports.

Thin by design: one selector loop accepts TCP signaling connections, frames
them by Content-Length, binds a UDP socket per media pool port, and feeds
everything into the same SipProxy the simulator drives.
"""

from __future__ import annotations

import logging
import selectors
import socket
import threading
import time

from .net import TransportAddress
from .proxy import ProxyConfig, SipProxy
from .sip_message import FramingError, MessageFramer

logger = logging.getLogger(__name__)

TICK_INTERVAL = 1.0


class ProxyService:
    """Serve a SipProxy on real sockets; start()/stop() manage a daemon thread."""

    def __init__(self, config: ProxyConfig, host: str | None = None):
        self.config = config
        self.host = host or config.public_ip
        self.proxy = SipProxy(config)
        self._selector = selectors.DefaultSelector()
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((self.host, config.sip_tcp_port))
        self._listener.listen(16)
        self._listener.setblocking(False)
        self.sip_port = self._listener.getsockname()[1]
        self._selector.register(self._listener, selectors.EVENT_READ, ("accept", None))

        self._udp_socks: dict[int, socket.socket] = {}
        lo, hi = config.media_port_range
        for port in range(lo, hi + 1):
            sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            sock.bind((self.host, port))
            sock.setblocking(False)
            self._udp_socks[port] = sock
            self._selector.register(sock, selectors.EVENT_READ, ("media", port))

        self._conns: dict[int, socket.socket] = {}
        self._framers: dict[int, MessageFramer] = {}
        self._next_conn = 1
        self._running = False
        self._thread: threading.Thread | None = None
        self._last_tick = time.monotonic()

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> None:
        self._running = True
        self._thread = threading.Thread(target=self._loop, name="sipnat-service", daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._running = False
        if self._thread is not None:
            self._thread.join(timeout=5)
        for sock in [self._listener, *self._udp_socks.values(), *self._conns.values()]:
            try:
                sock.close()
            except OSError:
                pass
        self._selector.close()

    def _loop(self) -> None:
        while self._running:
            for key, _ in self._selector.select(timeout=0.05):
                kind, arg = key.data
                if kind == "accept":
                    self._accept()
                elif kind == "media":
                    self._read_media(key.fileobj, arg)
                else:
                    self._read_tcp(arg)
            now = time.monotonic()
            if now - self._last_tick >= TICK_INTERVAL:
                self._last_tick = now
                self.proxy.tick(now)

    # -- TCP signaling -------------------------------------------------------

    def _accept(self) -> None:
        try:
            sock, peer = self._listener.accept()
        except OSError:
            return
        sock.setblocking(False)
        conn = self._next_conn
        self._next_conn += 1
        self._conns[conn] = sock
        self._framers[conn] = MessageFramer()
        self.proxy.connection_opened(conn, TransportAddress(peer[0], peer[1]))
        self._selector.register(sock, selectors.EVENT_READ, ("tcp", conn))
        logger.debug("accepted connection %d from %s:%d", conn, peer[0], peer[1])

    def _read_tcp(self, conn: int) -> None:
        sock = self._conns.get(conn)
        if sock is None:
            return
        try:
            data = sock.recv(65536)
        except (BlockingIOError, InterruptedError):
            return
        except OSError:
            data = b""
        if not data:
            self._close_conn(conn)
            return
        try:
            messages = self._framers[conn].feed(data)
        except FramingError:
            logger.warning("unframeable stream on connection %d, closing", conn)
            self._close_conn(conn)
            return
        for raw in messages:
            outbound = self.proxy.handle_message(conn, raw, time.monotonic())
            self._transmit(outbound)

    def _transmit(self, outbound: list[tuple[int, bytes]]) -> None:
        for conn, raw in outbound:
            sock = self._conns.get(conn)
            if sock is None:
                self._transmit(self.proxy.delivery_failed(conn, raw, time.monotonic()))
                continue
            try:
                sock.sendall(raw)
            except OSError:
                self._close_conn(conn)
                self._transmit(self.proxy.delivery_failed(conn, raw, time.monotonic()))

    def _close_conn(self, conn: int) -> None:
        sock = self._conns.pop(conn, None)
        self._framers.pop(conn, None)
        if sock is not None:
            try:
                self._selector.unregister(sock)
            except (KeyError, ValueError):
                pass
            sock.close()
        self.proxy.connection_closed(conn)

    # -- UDP media -------------------------------------------------------------

    def _read_media(self, sock: socket.socket, port: int) -> None:
        try:
            data, peer = sock.recvfrom(65536)
        except (BlockingIOError, InterruptedError, OSError):
            return
        source = TransportAddress(peer[0], peer[1])
        for send in self.proxy.handle_media(port, source, data, time.monotonic()):
            out = self._udp_socks.get(send.from_port)
            if out is None:
                continue
            try:
                out.sendto(send.payload, (send.to.ip, send.to.port))
            except OSError:
                logger.debug("media send to %s failed", send.to)
