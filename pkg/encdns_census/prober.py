"""DoH method verification and DNS-over-TLS probing for single endpoints."""

import json
import logging
import socket
import ssl
import struct
import time
from contextlib import contextmanager
from typing import Any, Iterable, Iterator, List, Optional, Tuple

import httpcore
import httpx

from .dns_codec import (
    DnsQuestion,
    decode_message,
    encode_query,
    new_query_id,
    normalize_name,
    to_base64url,
)
from .exceptions import DnsCodecError
from .models import (
    DohEncoding,
    DotResult,
    FailureReason,
    HttpVersion,
    MethodResult,
    ProberConfig,
    ProbeTarget,
    VerificationMatrix,
    VerificationMethod,
)

logger = logging.getLogger(__name__)

DNS_MESSAGE = "application/dns-message"
DNS_JSON = "application/dns-json"
LENGTH_PREFIX = struct.Struct("!H")


class _NoGate:
    def acquire(self) -> None:
        pass


def _ssl_context(config: ProberConfig) -> ssl.SSLContext:
    """A fresh context per connection; ALPN is set on it by the transport."""
    if config.verify_certificates:
        return ssl.create_default_context(cafile=config.ca_file)
    context = ssl.create_default_context()
    context.check_hostname = False
    context.verify_mode = ssl.CERT_NONE
    return context


def _caused_by_tls(exc: BaseException) -> bool:
    seen = set()
    current: Optional[BaseException] = exc
    while current is not None and id(current) not in seen:
        if isinstance(current, ssl.SSLError):
            return True
        seen.add(id(current))
        current = current.__cause__ or current.__context__
    return False


# Shortest wait handed to a socket; zero would switch it to non-blocking mode.
_MIN_WAIT = 0.001


class _Deadline:
    """Wall-clock budget of one probe, shared by all of its phases."""

    def __init__(self, seconds: float) -> None:
        self._expires = time.monotonic() + seconds

    def remaining(self, cap: Optional[float] = None) -> float:
        left = max(self._expires - time.monotonic(), _MIN_WAIT)
        return left if cap is None else min(cap, left)


class _DeadlineStream(httpcore.NetworkStream):
    def __init__(self, stream: httpcore.NetworkStream, deadline: _Deadline) -> None:
        self._stream = stream
        self._deadline = deadline

    def read(self, max_bytes: int, timeout: Optional[float] = None) -> bytes:
        return self._stream.read(max_bytes, self._deadline.remaining(timeout))

    def write(self, buffer: bytes, timeout: Optional[float] = None) -> None:
        self._stream.write(buffer, self._deadline.remaining(timeout))

    def close(self) -> None:
        self._stream.close()

    def start_tls(
        self,
        ssl_context: ssl.SSLContext,
        server_hostname: Optional[str] = None,
        timeout: Optional[float] = None,
    ) -> httpcore.NetworkStream:
        stream = self._stream.start_tls(
            ssl_context, server_hostname, self._deadline.remaining(timeout)
        )
        return _DeadlineStream(stream, self._deadline)

    def get_extra_info(self, info: str) -> Any:
        return self._stream.get_extra_info(info)


class _DeadlineBackend(httpcore.NetworkBackend):
    """Clamps each connect, handshake, read and write to the remaining budget."""

    def __init__(self, deadline: _Deadline) -> None:
        self._backend = httpcore.SyncBackend()
        self._deadline = deadline

    def connect_tcp(
        self,
        host: str,
        port: int,
        timeout: Optional[float] = None,
        local_address: Optional[str] = None,
        socket_options: Optional[Iterable[Any]] = None,
    ) -> httpcore.NetworkStream:
        stream = self._backend.connect_tcp(
            host,
            port,
            timeout=self._deadline.remaining(timeout),
            local_address=local_address,
            socket_options=socket_options,
        )
        return _DeadlineStream(stream, self._deadline)

    def sleep(self, seconds: float) -> None:
        self._backend.sleep(seconds)


@contextmanager
def _as_httpx_errors() -> Iterator[None]:
    try:
        yield
    except httpcore.TimeoutException as exc:
        raise httpx.TimeoutException(str(exc)) from exc
    except (
        httpcore.NetworkError,
        httpcore.ProtocolError,
        httpcore.UnsupportedProtocol,
    ) as exc:
        raise httpx.TransportError(str(exc)) from exc


class _CoreByteStream(httpx.SyncByteStream):
    def __init__(self, stream: Iterable[bytes]) -> None:
        self._stream = stream

    def __iter__(self) -> Iterator[bytes]:
        with _as_httpx_errors():
            yield from self._stream

    def close(self) -> None:
        close = getattr(self._stream, "close", None)
        if close is not None:
            close()


class _DeadlineTransport(httpx.BaseTransport):
    """One-connection httpx transport whose socket operations share a deadline."""

    def __init__(
        self, ssl_context: ssl.SSLContext, http2: bool, deadline: _Deadline
    ) -> None:
        self._pool = httpcore.ConnectionPool(
            ssl_context=ssl_context,
            http1=True,
            http2=http2,
            network_backend=_DeadlineBackend(deadline),
        )

    def handle_request(self, request: httpx.Request) -> httpx.Response:
        core_request = httpcore.Request(
            method=request.method,
            url=httpcore.URL(
                scheme=request.url.raw_scheme,
                host=request.url.raw_host,
                port=request.url.port,
                target=request.url.raw_path,
            ),
            headers=request.headers.raw,
            content=request.stream,
            extensions=request.extensions,
        )
        with _as_httpx_errors():
            response = self._pool.handle_request(core_request)
        return httpx.Response(
            status_code=response.status,
            headers=response.headers,
            stream=_CoreByteStream(response.stream),
            extensions=response.extensions,
        )

    def close(self) -> None:
        self._pool.close()


def _elapsed_ms(started: float) -> float:
    return round((time.perf_counter() - started) * 1000.0, 3)


class DohProber:
    """
    Verifies DoH support of endpoints, one fresh connection per probe.

    A shared gate (any object with ``acquire()``, such as the scan rate
    limiter) is acquired before every connection attempt.
    """

    def __init__(
        self, config: Optional[ProberConfig] = None, rate_limiter: Any = None
    ) -> None:
        self.config = config or ProberConfig()
        self.rate_limiter = rate_limiter or _NoGate()

    @property
    def timeout_seconds(self) -> float:
        return self.config.timeout_ms / 1000.0

    def probe_method(
        self, target: ProbeTarget, method: VerificationMethod
    ) -> MethodResult:
        """
        Run one DoH method once.

        Success requires the requested HTTP version to be negotiated, a 200
        status and a body that parses as a DNS answer to this probe.

        Args:
            target: Endpoint to probe
            method: Encoding and HTTP version to use

        Returns:
            MethodResult with status, latency and failure reason
        """
        query_id = new_query_id()
        request_kwargs = self._request_for(target, method, query_id)
        want_http2 = method.http_version == HttpVersion.HTTP_2

        self.rate_limiter.acquire()
        started = time.perf_counter()
        deadline = _Deadline(self.timeout_seconds)
        try:
            with httpx.Client(
                transport=_DeadlineTransport(
                    _ssl_context(self.config), want_http2, deadline
                ),
                timeout=httpx.Timeout(self.timeout_seconds),
                trust_env=False,
            ) as client:
                response = client.request(**request_kwargs)
        except httpx.TimeoutException as exc:
            return self._failed(
                method, FailureReason.CONNECTION, f"timeout: {exc}", started
            )
        except httpx.HTTPError as exc:
            reason = FailureReason.CONNECTION
            if _caused_by_tls(exc):
                reason = FailureReason.TLS
            return self._failed(method, reason, str(exc) or type(exc).__name__, started)
        except ssl.SSLError as exc:
            return self._failed(method, FailureReason.TLS, str(exc), started)
        except OSError as exc:
            return self._failed(method, FailureReason.CONNECTION, str(exc), started)

        latency = _elapsed_ms(started)
        negotiated = response.http_version
        expected = "HTTP/2" if want_http2 else "HTTP/1.1"
        if negotiated != expected:
            return MethodResult(
                method=method,
                success=False,
                status_code=response.status_code,
                latency_ms=latency,
                failure_reason=FailureReason.PROTOCOL_UNAVAILABLE,
                detail=f"server negotiated {negotiated}",
                negotiated_version=negotiated,
            )
        if response.status_code != 200:
            return MethodResult(
                method=method,
                success=False,
                status_code=response.status_code,
                latency_ms=latency,
                failure_reason=FailureReason.HTTP_STATUS,
                negotiated_version=negotiated,
            )

        if method.encoding == DohEncoding.JSON:
            reason, detail = self._check_json_body(response.content, target.probe_name)
        else:
            reason, detail = self._check_wire_body(response.content, query_id)
        return MethodResult(
            method=method,
            success=reason is None,
            status_code=response.status_code,
            latency_ms=latency,
            failure_reason=reason,
            detail=detail,
            negotiated_version=negotiated,
        )

    def probe_with_retries(
        self, target: ProbeTarget, method: VerificationMethod
    ) -> MethodResult:
        """Probe once, then retry a failed method up to ``config.retries`` times."""
        result = self.probe_method(target, method)
        attempts = 1
        while not result.success and attempts <= self.config.retries:
            logger.debug(
                "retrying %s on %s after %s",
                method.label,
                target.ip,
                result.failure_reason,
            )
            result = self.probe_method(target, method)
            attempts += 1
        return result.model_copy(update={"attempts": attempts})

    def verify_endpoint(
        self,
        target: ProbeTarget,
        methods: Optional[Iterable[VerificationMethod]] = None,
    ) -> VerificationMatrix:
        """
        Run the six DoH methods against one endpoint.

        Args:
            target: Endpoint to verify
            methods: Probe order; defaults to the output order

        Returns:
            VerificationMatrix with per-method detail
        """
        results = [
            self.probe_with_retries(target, method)
            for method in (methods or VerificationMethod.all_methods())
        ]
        verified = self.config.verify_certificates and any(
            result.status_code is not None for result in results
        )
        matrix = VerificationMatrix.from_results(results, certificate_verified=verified)
        logger.info(
            "verified %s:%d -> %s",
            target.ip,
            target.port,
            ",".join(label for label, ok in matrix.labelled().items() if ok) or "none",
        )
        return matrix

    def probe_dot(self, target: ProbeTarget) -> DotResult:
        """
        Send one length-prefixed query over TLS and read the framed reply.

        Returns:
            DotResult; ``answered`` only for a QR=1 response with our ID
        """
        query_id = new_query_id()
        wire = encode_query(DnsQuestion(target.probe_name), query_id)
        context = _ssl_context(self.config)
        server_hostname = target.sni
        if self.config.verify_certificates and server_hostname is None:
            server_hostname = str(target.ip)

        self.rate_limiter.acquire()
        started = time.perf_counter()
        deadline = _Deadline(self.timeout_seconds)
        try:
            raw = socket.create_connection(
                (str(target.ip), target.port), timeout=deadline.remaining()
            )
        except OSError as exc:
            return DotResult(
                tls_established=False,
                answered=False,
                latency_ms=_elapsed_ms(started),
                failure_reason=FailureReason.CONNECTION,
                detail=str(exc),
            )
        try:
            try:
                raw.settimeout(deadline.remaining())
                tls = context.wrap_socket(raw, server_hostname=server_hostname)
            except (ssl.SSLError, ssl.CertificateError) as exc:
                return DotResult(
                    tls_established=False,
                    answered=False,
                    latency_ms=_elapsed_ms(started),
                    failure_reason=FailureReason.TLS,
                    detail=str(exc),
                )
            except OSError as exc:
                return DotResult(
                    tls_established=False,
                    answered=False,
                    latency_ms=_elapsed_ms(started),
                    failure_reason=FailureReason.CONNECTION,
                    detail=str(exc),
                )
            with tls:
                return self._exchange_dot(tls, wire, query_id, started, deadline)
        finally:
            raw.close()

    def _exchange_dot(
        self,
        tls: ssl.SSLSocket,
        wire: bytes,
        query_id: int,
        started: float,
        deadline: _Deadline,
    ) -> DotResult:
        try:
            tls.settimeout(deadline.remaining())
            tls.sendall(LENGTH_PREFIX.pack(len(wire)) + wire)
            prefix = _recv_exactly(tls, LENGTH_PREFIX.size, deadline)
            if len(prefix) < LENGTH_PREFIX.size:
                return DotResult(
                    tls_established=True,
                    answered=False,
                    latency_ms=_elapsed_ms(started),
                    failure_reason=FailureReason.SHORT_READ,
                    detail=f"read {len(prefix)} of 2 length bytes",
                )
            (length,) = LENGTH_PREFIX.unpack(prefix)
            body = _recv_exactly(tls, length, deadline)
        except (socket.timeout, OSError) as exc:
            return DotResult(
                tls_established=True,
                answered=False,
                latency_ms=_elapsed_ms(started),
                failure_reason=FailureReason.CONNECTION,
                detail=str(exc),
            )
        latency = _elapsed_ms(started)
        if len(body) < length:
            return DotResult(
                tls_established=True,
                answered=False,
                latency_ms=latency,
                failure_reason=FailureReason.UNPARSEABLE_BODY,
                detail=f"read {len(body)} of {length} message bytes",
            )
        reason, detail = self._check_wire_body(body, query_id)
        return DotResult(
            tls_established=True,
            answered=reason is None,
            latency_ms=latency,
            failure_reason=reason,
            detail=detail,
        )

    def _request_for(
        self, target: ProbeTarget, method: VerificationMethod, query_id: int
    ) -> dict:
        headers = {"Host": target.sni or target.host}
        extensions = {"sni_hostname": target.sni} if target.sni else {}
        if method.encoding == DohEncoding.JSON:
            headers["Accept"] = DNS_JSON
            return {
                "method": "GET",
                "url": target.base_url,
                "params": {"name": target.probe_name, "type": "A"},
                "headers": headers,
                "extensions": extensions,
            }
        wire = encode_query(DnsQuestion(target.probe_name), query_id)
        headers["Accept"] = DNS_MESSAGE
        if method.encoding == DohEncoding.WIREFORMAT_GET:
            return {
                "method": "GET",
                "url": target.base_url,
                "params": {"dns": to_base64url(wire)},
                "headers": headers,
                "extensions": extensions,
            }
        headers["Content-Type"] = DNS_MESSAGE
        return {
            "method": "POST",
            "url": target.base_url,
            "content": wire,
            "headers": headers,
            "extensions": extensions,
        }

    @staticmethod
    def _check_wire_body(
        body: bytes, query_id: int
    ) -> Tuple[Optional[FailureReason], Optional[str]]:
        try:
            message = decode_message(body)
        except DnsCodecError as exc:
            return FailureReason.UNPARSEABLE_BODY, str(exc)
        if not message.qr:
            return FailureReason.UNPARSEABLE_BODY, "QR flag not set"
        if message.id != query_id:
            detail = f"expected id {query_id}, got {message.id}"
            return FailureReason.ID_MISMATCH, detail
        return None, None

    @staticmethod
    def _check_json_body(
        body: bytes, probe_name: str
    ) -> Tuple[Optional[FailureReason], Optional[str]]:
        try:
            document = json.loads(body)
        except (ValueError, UnicodeDecodeError) as exc:
            return FailureReason.UNPARSEABLE_BODY, f"invalid JSON: {exc}"
        if not isinstance(document, dict) or "Status" not in document:
            return FailureReason.UNPARSEABLE_BODY, "no Status member"
        # JSON carries no query ID; the echoed question name stands in for it.
        questions = document.get("Question")
        if isinstance(questions, list):
            expected = normalize_name(probe_name)
            for question in questions:
                if isinstance(question, dict) and "name" in question:
                    if normalize_name(str(question["name"])) != expected:
                        detail = f"answer is for {question['name']!r}"
                        return FailureReason.ID_MISMATCH, detail
        return None, None

    @staticmethod
    def _failed(
        method: VerificationMethod, reason: FailureReason, detail: str, started: float
    ) -> MethodResult:
        return MethodResult(
            method=method,
            success=False,
            latency_ms=_elapsed_ms(started),
            failure_reason=reason,
            detail=detail,
        )


def _recv_exactly(sock: ssl.SSLSocket, count: int, deadline: _Deadline) -> bytes:
    chunks: List[bytes] = []
    remaining = count
    while remaining > 0:
        sock.settimeout(deadline.remaining())
        chunk = sock.recv(remaining)
        if not chunk:
            break
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def probe_method(
    target: ProbeTarget, method: VerificationMethod, timeout_ms: int = 3000
) -> MethodResult:
    """Single attempt of one DoH method."""
    return DohProber(ProberConfig(timeout_ms=timeout_ms)).probe_method(target, method)


def verify_endpoint(
    target: ProbeTarget, timeout_ms: int = 3000, retries: int = 1
) -> VerificationMatrix:
    """Six-method verification with retries."""
    config = ProberConfig(timeout_ms=timeout_ms, retries=retries)
    return DohProber(config).verify_endpoint(target)


def probe_dot(target: ProbeTarget, timeout_ms: int = 3000) -> DotResult:
    """DNS-over-TLS probe; pass a target with port 853 for real resolvers."""
    return DohProber(ProberConfig(timeout_ms=timeout_ms)).probe_dot(target)
