"""Loopback DoH/DoT test server with configurable method support and misbehaviors."""

import datetime
import ipaddress
import json
import logging
import socket
import socketserver
import ssl
import struct
import tempfile
import threading
import time
from enum import Enum
from pathlib import Path
from typing import Any, Dict, FrozenSet, List, Optional, Tuple
from urllib.parse import parse_qs, urlsplit

import h11
from cryptography import x509
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.x509.oid import NameOID
from h2.config import H2Configuration
from h2.connection import H2Connection
from h2.events import (
    ConnectionTerminated,
    DataReceived,
    RequestReceived,
    StreamEnded,
    StreamReset,
)
from h2.exceptions import ProtocolError as H2ProtocolError
from pydantic import BaseModel, Field, IPvAnyAddress, field_validator

from .dns_codec import (
    ResourceRecord,
    build_response,
    decode_message,
    encode_message,
    from_base64url,
    normalize_name,
)
from .exceptions import DnsCodecError, MockServerError
from .models import DohEncoding, HttpVersion, ProbeTarget, VerificationMethod

logger = logging.getLogger(__name__)

LENGTH_PREFIX = struct.Struct("!H")
MOCK_TTL = 300
DNS_MESSAGE = "application/dns-message"


class Misbehavior(str, Enum):
    """Uniform fault applied to every supported method."""

    NONE = "none"
    HTML_BODY = "html_body"
    WRONG_ID = "wrong_id"
    EMPTY_200 = "empty_200"
    SLOW = "slow"
    ECHO = "echo"
    TRICKLE = "trickle"


class MockConfig(BaseModel):
    """What the mock resolver supports and how it misbehaves."""

    supported: FrozenSet[VerificationMethod] = Field(
        default_factory=lambda: frozenset(VerificationMethod.all_methods()),
        description="DoH methods answered with 200; everything else gets 404",
    )
    dot_enabled: bool = Field(True, description="Start a DoT listener")
    misbehavior: Misbehavior = Field(Misbehavior.NONE)
    slow_ms: int = Field(
        0, ge=0, description="Response delay for slow, per-byte delay for trickle"
    )
    answer_address: ipaddress.IPv4Address = Field(
        ipaddress.IPv4Address("93.184.216.34")
    )
    host: IPvAnyAddress = Field(
        ipaddress.IPv4Address("127.0.0.1"), description="Bind address"
    )
    path: str = Field("/dns-query")
    doh_port: int = Field(0, ge=0, le=65535, description="0 picks a free port")
    dot_port: int = Field(0, ge=0, le=65535, description="0 picks a free port")

    @field_validator("supported", mode="before")
    @classmethod
    def _labels_to_methods(cls, value: Any) -> Any:
        if isinstance(value, (list, tuple, set, frozenset)):
            return frozenset(
                VerificationMethod.from_label(item) if isinstance(item, str) else item
                for item in value
            )
        return value

    @property
    def http2_enabled(self) -> bool:
        return any(
            method.http_version == HttpVersion.HTTP_2 for method in self.supported
        )


class ConnectionEvent(BaseModel):
    """One accepted TCP connection."""

    timestamp: float = Field(..., description="Accept time, seconds since the epoch")
    listener: str = Field(..., description="'doh' or 'dot'")
    client: Tuple[str, int]
    server: Tuple[str, int]


class MockEndpoint(BaseModel):
    """Where a started mock listens."""

    host: IPvAnyAddress
    doh_port: int
    dot_port: Optional[int] = None
    cert_path: str
    key_path: str


def generate_self_signed(directory: Path, host: str) -> Tuple[Path, Path]:
    """
    Write a self-signed EC certificate and key into ``directory``.

    The certificate covers ``localhost``, the loopback addresses and ``host``.
    """
    key = ec.generate_private_key(ec.SECP256R1())
    subject = x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, "localhost")])
    addresses = {
        ipaddress.ip_address("127.0.0.1"),
        ipaddress.ip_address("::1"),
        ipaddress.ip_address(host),
    }
    alt_names: List[x509.GeneralName] = [x509.DNSName("localhost")]
    ordered = sorted(addresses, key=lambda a: (a.version, int(a)))
    alt_names += [x509.IPAddress(address) for address in ordered]
    now = datetime.datetime.now(datetime.timezone.utc)
    certificate = (
        x509.CertificateBuilder()
        .subject_name(subject)
        .issuer_name(subject)
        .public_key(key.public_key())
        .serial_number(x509.random_serial_number())
        .not_valid_before(now - datetime.timedelta(minutes=5))
        .not_valid_after(now + datetime.timedelta(days=2))
        .add_extension(x509.SubjectAlternativeName(alt_names), critical=False)
        .add_extension(x509.BasicConstraints(ca=True, path_length=None), critical=True)
        .sign(key, hashes.SHA256())
    )
    cert_path = directory / "mock-resolver.pem"
    key_path = directory / "mock-resolver.key"
    cert_path.write_bytes(certificate.public_bytes(serialization.Encoding.PEM))
    key_path.write_bytes(
        key.private_bytes(
            serialization.Encoding.PEM,
            serialization.PrivateFormat.PKCS8,
            serialization.NoEncryption(),
        )
    )
    return cert_path, key_path


class _TLSServer(socketserver.ThreadingMixIn, socketserver.TCPServer):
    daemon_threads = True
    allow_reuse_address = True
    request_queue_size = 128

    def __init__(
        self,
        address: Tuple[str, int],
        handler: Any,
        resolver: "MockResolver",
        listener: str,
    ) -> None:
        self.address_family = socket.AF_INET6 if ":" in address[0] else socket.AF_INET
        self.resolver = resolver
        self.listener = listener
        super().__init__(address, handler)


class _DohHandler(socketserver.BaseRequestHandler):
    server: _TLSServer

    def handle(self) -> None:
        resolver = self.server.resolver
        resolver._record(self.server.listener, self.request, self.client_address)
        try:
            tls = resolver._doh_context.wrap_socket(self.request, server_side=True)
        except (ssl.SSLError, OSError) as exc:
            logger.debug("mock TLS handshake failed: %s", exc)
            return
        tls.settimeout(30)
        try:
            if tls.selected_alpn_protocol() == "h2":
                self._serve_h2(tls, resolver)
            else:
                self._serve_http1(tls, resolver)
        except (OSError, ssl.SSLError, h11.ProtocolError, H2ProtocolError) as exc:
            logger.debug("mock connection ended: %s", exc)
        finally:
            try:
                tls.close()
            except OSError:
                pass

    def _serve_http1(self, tls: ssl.SSLSocket, resolver: "MockResolver") -> None:
        conn = h11.Connection(h11.SERVER)
        request: Optional[h11.Request] = None
        body = bytearray()
        while True:
            event = conn.next_event()
            if event is h11.NEED_DATA:
                conn.receive_data(tls.recv(65536))
                continue
            if isinstance(event, h11.Request):
                request, body = event, bytearray()
            elif isinstance(event, h11.Data):
                body += event.data
            elif isinstance(event, h11.EndOfMessage) and request is not None:
                status, content_type, payload = resolver.respond(
                    request.method.decode("ascii"),
                    request.target.decode("ascii"),
                    bytes(body),
                    HttpVersion.HTTP_1_1,
                )
                headers = [
                    ("Content-Type", content_type),
                    ("Content-Length", str(len(payload))),
                ]
                resolver._send(
                    tls, conn.send(h11.Response(status_code=status, headers=headers))
                )
                resolver._send(tls, conn.send(h11.Data(data=payload)))
                resolver._send(tls, conn.send(h11.EndOfMessage()))
                if h11.MUST_CLOSE in (conn.our_state, conn.their_state):
                    return
                conn.start_next_cycle()
                request = None
            elif event is h11.PAUSED or isinstance(event, h11.ConnectionClosed):
                return

    def _serve_h2(self, tls: ssl.SSLSocket, resolver: "MockResolver") -> None:
        conn = H2Connection(
            config=H2Configuration(client_side=False, header_encoding="utf-8")
        )
        conn.initiate_connection()
        resolver._send(tls, conn.data_to_send())
        streams: Dict[int, Tuple[Dict[str, str], bytearray]] = {}
        while True:
            data = tls.recv(65536)
            if not data:
                return
            for event in conn.receive_data(data):
                if isinstance(event, RequestReceived):
                    streams[event.stream_id] = (dict(event.headers), bytearray())
                elif isinstance(event, DataReceived):
                    streams[event.stream_id][1].extend(event.data)
                    conn.acknowledge_received_data(
                        event.flow_controlled_length, event.stream_id
                    )
                elif isinstance(event, StreamEnded):
                    headers, body = streams.pop(event.stream_id)
                    status, content_type, payload = resolver.respond(
                        headers.get(":method", "GET"),
                        headers.get(":path", "/"),
                        bytes(body),
                        HttpVersion.HTTP_2,
                    )
                    response_headers = [
                        (":status", str(status)),
                        ("content-type", content_type),
                        ("content-length", str(len(payload))),
                    ]
                    conn.send_headers(
                        event.stream_id, response_headers, end_stream=not payload
                    )
                    if payload:
                        conn.send_data(event.stream_id, payload, end_stream=True)
                elif isinstance(event, StreamReset):
                    streams.pop(event.stream_id, None)
                elif isinstance(event, ConnectionTerminated):
                    resolver._send(tls, conn.data_to_send())
                    return
            resolver._send(tls, conn.data_to_send())


class _DotHandler(socketserver.BaseRequestHandler):
    server: _TLSServer

    def handle(self) -> None:
        resolver = self.server.resolver
        resolver._record(self.server.listener, self.request, self.client_address)
        try:
            tls = resolver._dot_context.wrap_socket(self.request, server_side=True)
        except (ssl.SSLError, OSError) as exc:
            logger.debug("mock DoT handshake failed: %s", exc)
            return
        tls.settimeout(30)
        try:
            while True:
                prefix = _recv_exactly(tls, LENGTH_PREFIX.size)
                if len(prefix) < LENGTH_PREFIX.size:
                    return
                (length,) = LENGTH_PREFIX.unpack(prefix)
                query = _recv_exactly(tls, length)
                reply = resolver.respond_dot(query)
                if reply is None:
                    return
                resolver._send(tls, LENGTH_PREFIX.pack(len(reply)) + reply)
        except (OSError, ssl.SSLError) as exc:
            logger.debug("mock DoT connection ended: %s", exc)
        finally:
            try:
                tls.close()
            except OSError:
                pass


def _recv_exactly(sock: ssl.SSLSocket, count: int) -> bytes:
    data = bytearray()
    while len(data) < count:
        chunk = sock.recv(count - len(data))
        if not chunk:
            break
        data += chunk
    return bytes(data)


class MockResolver:
    """
    A loopback resolver serving DoH (HTTP/1.1 and HTTP/2) and DoT over TLS.

    Use as a context manager, or call ``start()`` and ``stop()``.
    """

    def __init__(self, config: Optional[MockConfig] = None) -> None:
        self.config = config or MockConfig()
        self._events: List[ConnectionEvent] = []
        self._lock = threading.Lock()
        self._servers: List[_TLSServer] = []
        self._threads: List[threading.Thread] = []
        self._tempdir: Optional[tempfile.TemporaryDirectory] = None
        self._endpoint: Optional[MockEndpoint] = None

    def __enter__(self) -> "MockResolver":
        self.start()
        return self

    def __exit__(self, *exc_info: Any) -> None:
        self.stop()

    @property
    def endpoint(self) -> MockEndpoint:
        if self._endpoint is None:
            raise MockServerError("mock resolver is not running")
        return self._endpoint

    def start(self) -> MockEndpoint:
        """Bind the listeners and start serving."""
        host = str(self.config.host)
        self._tempdir = tempfile.TemporaryDirectory(prefix="encdns-mock-")
        cert_path, key_path = generate_self_signed(Path(self._tempdir.name), host)

        self._doh_context = ssl.SSLContext(ssl.PROTOCOL_TLS_SERVER)
        self._doh_context.load_cert_chain(cert_path, key_path)
        self._doh_context.set_alpn_protocols(
            ["h2", "http/1.1"] if self.config.http2_enabled else ["http/1.1"]
        )
        self._dot_context = ssl.SSLContext(ssl.PROTOCOL_TLS_SERVER)
        self._dot_context.load_cert_chain(cert_path, key_path)

        try:
            doh = self._serve((host, self.config.doh_port), _DohHandler, "doh")
            dot = None
            if self.config.dot_enabled:
                dot = self._serve((host, self.config.dot_port), _DotHandler, "dot")
        except OSError as exc:
            self.stop()
            raise MockServerError(
                f"cannot bind mock resolver on {host}: {exc}"
            ) from exc

        self._endpoint = MockEndpoint(
            host=self.config.host,
            doh_port=doh.server_address[1],
            dot_port=dot.server_address[1] if dot else None,
            cert_path=str(cert_path),
            key_path=str(key_path),
        )
        logger.debug("mock resolver listening: %s", self._endpoint)
        return self._endpoint

    def _serve(
        self, address: Tuple[str, int], handler: Any, listener: str
    ) -> _TLSServer:
        server = _TLSServer(address, handler, self, listener)
        thread = threading.Thread(
            target=server.serve_forever,
            kwargs={"poll_interval": 0.05},
            name=f"mock-{listener}",
            daemon=True,
        )
        thread.start()
        self._servers.append(server)
        self._threads.append(thread)
        return server

    def stop(self) -> None:
        for server in self._servers:
            server.shutdown()
            server.server_close()
        for thread in self._threads:
            thread.join(timeout=5)
        self._servers, self._threads = [], []
        if self._tempdir is not None:
            self._tempdir.cleanup()
            self._tempdir = None
        self._endpoint = None

    def connection_log(self) -> List[ConnectionEvent]:
        """Accepted connections in time order."""
        with self._lock:
            return sorted(self._events, key=lambda event: event.timestamp)

    def clear_log(self) -> None:
        with self._lock:
            self._events.clear()

    def doh_target(self, **overrides: Any) -> ProbeTarget:
        values: Dict[str, Any] = {
            "ip": self.endpoint.host,
            "port": self.endpoint.doh_port,
            "path": self.config.path,
        }
        values.update(overrides)
        return ProbeTarget(**values)

    def dot_target(self, **overrides: Any) -> ProbeTarget:
        if self.endpoint.dot_port is None:
            raise MockServerError("DoT listener is disabled")
        values: Dict[str, Any] = {
            "ip": self.endpoint.host,
            "port": self.endpoint.dot_port,
        }
        values.update(overrides)
        return ProbeTarget(**values)

    def _send(self, sock: ssl.SSLSocket, data: bytes) -> None:
        if self.config.misbehavior != Misbehavior.TRICKLE:
            sock.sendall(data)
            return
        for offset in range(len(data)):
            sock.sendall(data[offset : offset + 1])
            time.sleep(self.config.slow_ms / 1000.0)

    def _record(
        self, listener: str, sock: socket.socket, client: Tuple[Any, ...]
    ) -> None:
        server = sock.getsockname()
        event = ConnectionEvent(
            timestamp=time.time(),
            listener=listener,
            client=(str(client[0]), int(client[1])),
            server=(str(server[0]), int(server[1])),
        )
        with self._lock:
            self._events.append(event)

    # ------------------------------------------------------------------
    # Responses
    # ------------------------------------------------------------------

    def respond(
        self, method: str, target: str, body: bytes, version: HttpVersion
    ) -> Tuple[int, str, bytes]:
        """
        Route one HTTP request.

        Returns:
            (status, content type, payload)
        """
        parts = urlsplit(target)
        if parts.path != self.config.path:
            return 404, "text/plain", b"not found"
        query = parse_qs(parts.query)
        if method == "GET" and "dns" in query:
            encoding, content_type = DohEncoding.WIREFORMAT_GET, DNS_MESSAGE
        elif method == "GET" and "name" in query:
            encoding, content_type = DohEncoding.JSON, "application/dns-json"
        elif method == "POST":
            encoding, content_type = DohEncoding.WIREFORMAT_POST, DNS_MESSAGE
        else:
            return 404, "text/plain", b"not found"
        requested = VerificationMethod(encoding=encoding, http_version=version)
        if requested not in self.config.supported:
            return 404, "text/plain", b"not found"

        misbehavior = self.config.misbehavior
        if misbehavior == Misbehavior.SLOW:
            time.sleep(self.config.slow_ms / 1000.0)
        if misbehavior == Misbehavior.HTML_BODY:
            return 200, "text/html", b"<html><body><h1>It works!</h1></body></html>"
        if misbehavior == Misbehavior.EMPTY_200:
            return 200, content_type, b""

        if encoding == DohEncoding.JSON:
            name = query["name"][0]
            if misbehavior == Misbehavior.ECHO:
                return 200, content_type, parts.query.encode("ascii")
            return 200, content_type, self._json_answer(name)

        try:
            wire = body
            if encoding == DohEncoding.WIREFORMAT_GET:
                wire = from_base64url(query["dns"][0])
            if misbehavior == Misbehavior.ECHO:
                return 200, content_type, wire
            return 200, content_type, self._wire_answer(wire)
        except DnsCodecError as exc:
            return 400, "text/plain", str(exc).encode("utf-8")

    def respond_dot(self, query: bytes) -> Optional[bytes]:
        """Reply bytes for one framed DoT query; ``None`` closes the connection."""
        misbehavior = self.config.misbehavior
        if misbehavior == Misbehavior.SLOW:
            time.sleep(self.config.slow_ms / 1000.0)
        if misbehavior == Misbehavior.ECHO:
            return query
        if misbehavior == Misbehavior.EMPTY_200:
            return None
        if misbehavior == Misbehavior.HTML_BODY:
            return b"<html></html>"
        try:
            return self._wire_answer(query)
        except DnsCodecError:
            return None

    def _wire_answer(self, wire: bytes) -> bytes:
        query = decode_message(wire)
        answers = tuple(
            ResourceRecord.a_record(
                question.qname, str(self.config.answer_address), MOCK_TTL
            )
            for question in query.questions[:1]
        )
        msg_id = None
        if self.config.misbehavior == Misbehavior.WRONG_ID:
            msg_id = (query.id + 1) & 0xFFFF
        return encode_message(build_response(query, answers, msg_id=msg_id))

    def _json_answer(self, name: str) -> bytes:
        qname = normalize_name(name)
        if self.config.misbehavior == Misbehavior.WRONG_ID:
            qname = f"mismatch.{qname}" if qname else "mismatch"
        fqdn = f"{qname}."
        document = {
            "Status": 0,
            "TC": False,
            "RD": True,
            "RA": True,
            "AD": False,
            "CD": False,
            "Question": [{"name": fqdn, "type": 1}],
            "Answer": [
                {
                    "name": fqdn,
                    "type": 1,
                    "TTL": MOCK_TTL,
                    "data": str(self.config.answer_address),
                }
            ],
        }
        return json.dumps(document).encode("utf-8")


def start_mock(config: Optional[MockConfig] = None) -> MockResolver:
    """Start a mock resolver; the caller stops it."""
    resolver = MockResolver(config)
    resolver.start()
    return resolver
