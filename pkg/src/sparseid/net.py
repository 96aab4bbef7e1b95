"""TCP servers and client transport for the STID protocol."""
from __future__ import annotations

import logging
import socket
import socketserver
import threading

from .errors import ProtocolError
from .protocol import (
    HEADER,
    ClientConfig,
    IdentifyResult,
    PrivateService,
    PublicService,
    error_frame,
    identify,
    parse_header,
)

log = logging.getLogger(__name__)

SOCKET_TIMEOUT = 30.0


def parse_endpoint(endpoint) -> tuple:
    if isinstance(endpoint, tuple):
        return endpoint
    host, _, port = str(endpoint).rpartition(":")
    return host or "127.0.0.1", int(port)


def _recv_exact(sock, n):
    """Read exactly ``n`` bytes; ``None`` if the peer closed first."""
    chunks, got = [], 0
    while got < n:
        chunk = sock.recv(min(n - got, 1 << 20))
        if not chunk:
            return None
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        sock = self.request
        sock.settimeout(SOCKET_TIMEOUT)
        service = self.server.service
        try:
            while True:
                header = _recv_exact(sock, HEADER.size)
                if header is None:
                    return
                try:
                    msg_type, length = parse_header(header)
                except ProtocolError as exc:
                    log.info("rejecting frame from %s: %s", self.client_address, exc)
                    sock.sendall(error_frame(exc))
                    return
                payload = _recv_exact(sock, length)
                if payload is None:
                    return
                response, close = service.process(msg_type, payload)
                sock.sendall(response)
                if close:
                    return
        except (OSError, socket.timeout) as exc:
            log.debug("connection %s dropped: %s", self.client_address, exc)


class Server(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, service, endpoint):
        self.service = service
        super().__init__(parse_endpoint(endpoint), _Handler)
        self._thread = None

    @property
    def endpoint(self) -> str:
        host, port = self.server_address[:2]
        return f"{host}:{port}"

    def start(self) -> "Server":
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self.shutdown()
        self.server_close()
        if self._thread is not None:
            self._thread.join()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.stop()


def serve_public(bundle, endpoint, background=False) -> Server:
    """Serve public search over ``bundle``. Blocks unless ``background``."""
    return _serve(PublicService(bundle), endpoint, background)


def serve_private(codebooks, endpoint, thresholds=None, allowed_levels=None, background=False) -> Server:
    kw = {} if thresholds is None else {"thresholds": thresholds}
    return _serve(PrivateService(codebooks, allowed_levels=allowed_levels, **kw), endpoint, background)


def _serve(service, endpoint, background):
    server = Server(service, endpoint)
    if background:
        return server.start()
    log.info("serving %s on %s", type(service).__name__, server.endpoint)
    try:
        server.serve_forever()
    finally:
        server.server_close()
    return server


class TcpTransport:
    """One persistent connection; not shared between threads."""

    def __init__(self, endpoint, timeout=SOCKET_TIMEOUT):
        self.address = parse_endpoint(endpoint)
        self.timeout = timeout
        self.sock = None

    def request(self, data: bytes) -> bytes:
        if self.sock is None:
            self.sock = socket.create_connection(self.address, timeout=self.timeout)
        self.sock.sendall(data)
        header = _recv_exact(self.sock, HEADER.size)
        if header is None:
            self.close()
            raise ConnectionError("server closed the connection")
        _, length = parse_header(header)
        payload = _recv_exact(self.sock, length)
        if payload is None:
            self.close()
            raise ConnectionError("server closed the connection mid-frame")
        return header + payload

    def close(self):
        if self.sock is not None:
            self.sock.close()
            self.sock = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def remote_identify(client: ClientConfig, endpoints, y, rng) -> IdentifyResult:
    """Full client flow against a public and a private server.

    ``endpoints`` is ``(public, private)``, each ``"host:port"`` or a tuple.
    """
    public_ep, private_ep = endpoints
    with TcpTransport(public_ep) as pub, TcpTransport(private_ep) as priv:
        return identify(y, client, pub, priv, rng)
