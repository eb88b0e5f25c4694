"""Pydantic models for probing, scanning, resolver data, flows and statistics."""

import ipaddress
from datetime import date, datetime, timezone
from enum import Enum
from typing import Any, Dict, List, Optional, Set, Union

from dateutil import parser as date_parser
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    IPvAnyAddress,
    IPvAnyNetwork,
    field_validator,
    model_validator,
)

IPAddress = Union[ipaddress.IPv4Address, ipaddress.IPv6Address]
IPNetwork = Union[ipaddress.IPv4Network, ipaddress.IPv6Network]


def parse_network(value: Any) -> Any:
    """Accept CIDR text or bare addresses; host bits are cleared."""
    if isinstance(value, str):
        return ipaddress.ip_network(value.strip(), strict=False)
    return value


# --------------------------------------------------------------------------
# Probing
# --------------------------------------------------------------------------


class DohEncoding(str, Enum):
    """How the DNS question travels inside the HTTP request."""

    JSON = "JSON"
    WIREFORMAT_GET = "GET"
    WIREFORMAT_POST = "POST"


class HttpVersion(str, Enum):
    """HTTP versions a DoH method can be probed over."""

    HTTP_1_1 = "HTTP/1.1"
    HTTP_2 = "HTTP/2"


class VerificationMethod(BaseModel):
    """One of the six (encoding, HTTP version) combinations."""

    model_config = ConfigDict(frozen=True)

    encoding: DohEncoding = Field(..., description="Request encoding")
    http_version: HttpVersion = Field(..., description="HTTP version to negotiate")

    @property
    def label(self) -> str:
        """Output label, e.g. ``DoH-GET`` or ``DoH2-POST``."""
        prefix = "DoH2" if self.http_version == HttpVersion.HTTP_2 else "DoH"
        return f"{prefix}-{self.encoding.value}"

    @property
    def field_name(self) -> str:
        """Matching VerificationMatrix field, e.g. ``doh2_post``."""
        return self.label.lower().replace("-", "_")

    @classmethod
    def all_methods(cls) -> List["VerificationMethod"]:
        """The six methods in output order (HTTP/1.1 first; JSON, GET, POST)."""
        return [
            cls(encoding=encoding, http_version=version)
            for version in (HttpVersion.HTTP_1_1, HttpVersion.HTTP_2)
            for encoding in (
                DohEncoding.JSON,
                DohEncoding.WIREFORMAT_GET,
                DohEncoding.WIREFORMAT_POST,
            )
        ]

    @classmethod
    def from_label(cls, label: str) -> "VerificationMethod":
        for method in cls.all_methods():
            if label.lower() in (method.label.lower(), method.field_name):
                return method
        raise ValueError(f"unknown verification method {label!r}")


METHOD_LABELS = [method.label for method in VerificationMethod.all_methods()]
METHOD_FIELDS = [method.field_name for method in VerificationMethod.all_methods()]


class FailureReason(str, Enum):
    """Why a probe did not count as a working resolver."""

    CONNECTION = "connection refused/timeout"
    TLS = "tls failure"
    PROTOCOL_UNAVAILABLE = "protocol-version unavailable"
    HTTP_STATUS = "non-200 status"
    UNPARSEABLE_BODY = "unparseable body"
    ID_MISMATCH = "id mismatch"
    SHORT_READ = "short read on length prefix"


class ProbeTarget(BaseModel):
    """An endpoint to verify."""

    model_config = ConfigDict(frozen=True)

    ip: IPvAnyAddress = Field(..., description="IPv4 or IPv6 address")
    port: int = Field(443, ge=1, le=65535, description="Transport port")
    sni: Optional[str] = Field(None, description="TLS server name and HTTP host")
    path: str = Field("/dns-query", description="DoH URL path")
    probe_name: str = Field("www.example.com", description="Domain to resolve")

    @field_validator("path")
    @classmethod
    def _path_is_absolute(cls, value: str) -> str:
        if not value.startswith("/"):
            raise ValueError("path must begin with '/'")
        return value

    @property
    def host(self) -> str:
        """Address formatted for a URL authority."""
        return f"[{self.ip}]" if self.ip.version == 6 else str(self.ip)

    @property
    def base_url(self) -> str:
        return f"https://{self.host}:{self.port}{self.path}"


class MethodResult(BaseModel):
    """Outcome of one DoH method against one endpoint."""

    method: VerificationMethod = Field(..., description="Method probed")
    success: bool = Field(..., description="Whether the endpoint answered as DoH")
    status_code: Optional[int] = Field(None, description="HTTP status code, if any")
    latency_ms: Optional[float] = Field(
        None, description="Request latency in milliseconds"
    )
    failure_reason: Optional[FailureReason] = Field(
        None, description="Why the probe failed"
    )
    detail: Optional[str] = Field(None, description="Free-text failure detail")
    negotiated_version: Optional[str] = Field(
        None, description="HTTP version actually negotiated"
    )
    attempts: int = Field(1, ge=1, description="Connection attempts used")

    @model_validator(mode="after")
    def _reason_only_on_failure(self) -> "MethodResult":
        if self.success and self.failure_reason is not None:
            raise ValueError("successful probe cannot carry a failure reason")
        return self


class VerificationMatrix(BaseModel):
    """The six DoH method outcomes for one endpoint."""

    doh_json: bool = False
    doh_get: bool = False
    doh_post: bool = False
    doh2_json: bool = False
    doh2_get: bool = False
    doh2_post: bool = False
    details: Dict[str, MethodResult] = Field(
        default_factory=dict, description="Per-method detail"
    )
    certificate_verified: bool = Field(
        False, description="Certificate validation was enforced and passed"
    )

    @model_validator(mode="after")
    def _details_match_fields(self) -> "VerificationMatrix":
        for name, result in self.details.items():
            if name not in METHOD_FIELDS or result.method.field_name != name:
                raise ValueError(f"detail key {name!r} does not name its method")
        return self

    @classmethod
    def from_results(
        cls, results: List[MethodResult], certificate_verified: bool = False
    ) -> "VerificationMatrix":
        values: Dict[str, Any] = {
            result.method.field_name: result.success for result in results
        }
        values["details"] = {result.method.field_name: result for result in results}
        values["certificate_verified"] = certificate_verified
        return cls(**values)

    def supports(self, method: VerificationMethod) -> bool:
        return bool(getattr(self, method.field_name))

    def labelled(self) -> Dict[str, bool]:
        """Outcomes keyed by output label, in output order."""
        return {
            method.label: self.supports(method)
            for method in VerificationMethod.all_methods()
        }

    @property
    def any_supported(self) -> bool:
        return any(self.labelled().values())

    @property
    def http1_supported(self) -> bool:
        return self.doh_json or self.doh_get or self.doh_post

    @property
    def http2_supported(self) -> bool:
        return self.doh2_json or self.doh2_get or self.doh2_post

    def to_record(self) -> Dict[str, Any]:
        """JSON-ready dict with the output labels as keys."""
        record: Dict[str, Any] = dict(self.labelled())
        record["certificate_verified"] = self.certificate_verified
        record["details"] = {
            self.details[name].method.label: self.details[name].model_dump(
                mode="json", exclude={"method"}
            )
            for name in METHOD_FIELDS
            if name in self.details
        }
        return record

    @classmethod
    def from_record(cls, record: Dict[str, Any]) -> "VerificationMatrix":
        values: Dict[str, Any] = {}
        details: Dict[str, MethodResult] = {}
        for method in VerificationMethod.all_methods():
            values[method.field_name] = bool(record.get(method.label, False))
            detail = (record.get("details") or {}).get(method.label)
            if detail is not None:
                details[method.field_name] = MethodResult(method=method, **detail)
        return cls(
            **values,
            details=details,
            certificate_verified=bool(record.get("certificate_verified", False)),
        )


class DotResult(BaseModel):
    """Outcome of a DNS-over-TLS probe."""

    tls_established: bool = Field(..., description="TLS handshake completed")
    answered: bool = Field(..., description="A matching DNS response came back")
    latency_ms: Optional[float] = Field(None, description="Round trip in milliseconds")
    failure_reason: Optional[FailureReason] = Field(
        None, description="Why the probe failed"
    )
    detail: Optional[str] = Field(None, description="Free-text failure detail")

    @model_validator(mode="after")
    def _answer_needs_tls(self) -> "DotResult":
        if self.answered and not self.tls_established:
            raise ValueError("answered implies tls_established")
        return self


class ProberConfig(BaseModel):
    """Per-endpoint probing settings."""

    timeout_ms: int = Field(3000, gt=0, description="Per-connection timeout")
    retries: int = Field(1, ge=0, description="Retries per failed method")
    verify_certificates: bool = Field(
        False, description="Enforce certificate validation"
    )
    ca_file: Optional[str] = Field(None, description="CA bundle for strict mode")
    probe_name: str = Field("www.example.com", description="Domain to resolve")
    path: str = Field("/dns-query", description="DoH URL path")

    def target(
        self, ip: Any, port: int = 443, sni: Optional[str] = None
    ) -> "ProbeTarget":
        """Build a ProbeTarget carrying this config's path and probe name."""
        return ProbeTarget(
            ip=ip, port=port, sni=sni, path=self.path, probe_name=self.probe_name
        )


# --------------------------------------------------------------------------
# Scanning
# --------------------------------------------------------------------------


class ScanConfig(BaseModel):
    """Settings for a verification scan."""

    concurrency: int = Field(32, ge=1, description="Maximum endpoints in flight")
    timeout_ms: int = Field(3000, gt=0, description="Per-connection timeout")
    retries: int = Field(1, ge=0, description="Retries per failed method")
    rate_limit: float = Field(100.0, gt=0, description="New connections per second")
    exclusions: List[IPvAnyNetwork] = Field(
        default_factory=list, description="Never-contact networks"
    )
    exclude_reserved: bool = Field(True, description="Also exclude special-use ranges")
    consent: bool = Field(False, description="Operator acknowledges scan authorization")
    checkpoint_every: int = Field(1000, ge=1, description="Targets between checkpoints")
    verify_certificates: bool = Field(
        False, description="Enforce certificate validation"
    )
    ca_file: Optional[str] = Field(None, description="CA bundle for strict mode")

    @field_validator("exclusions", mode="before")
    @classmethod
    def _parse_exclusions(cls, value: Any) -> Any:
        if isinstance(value, (list, tuple, set)):
            return [parse_network(item) for item in value]
        return value


class RangePartition(BaseModel):
    """A contiguous, inclusive address range assigned to one worker."""

    worker_id: int = Field(..., ge=0)
    start: IPvAnyAddress
    end: IPvAnyAddress

    @model_validator(mode="after")
    def _ordered(self) -> "RangePartition":
        if self.start.version != self.end.version or int(self.start) > int(self.end):
            raise ValueError("partition start must not exceed end")
        return self

    @property
    def size(self) -> int:
        return int(self.end) - int(self.start) + 1


class ScanRecord(BaseModel):
    """One streamed scan result."""

    index: int = Field(..., ge=0, description="Position of the target in the input")
    target: ProbeTarget
    matrix: VerificationMatrix

    def to_json_dict(self) -> Dict[str, Any]:
        record: Dict[str, Any] = {
            "index": self.index,
            "ip": str(self.target.ip),
            "port": self.target.port,
        }
        if self.target.sni:
            record["sni"] = self.target.sni
        record.update(self.matrix.to_record())
        return record

    @classmethod
    def from_json_dict(cls, record: Dict[str, Any]) -> "ScanRecord":
        target = ProbeTarget(
            ip=record["ip"], port=record.get("port", 443), sni=record.get("sni")
        )
        return cls(
            index=record["index"],
            target=target,
            matrix=VerificationMatrix.from_record(record),
        )


# --------------------------------------------------------------------------
# Resolver intelligence
# --------------------------------------------------------------------------


def network_prefix(ip: IPAddress) -> str:
    """Grouping prefix: /24 for IPv4, /48 for IPv6."""
    length = 24 if ip.version == 4 else 48
    return str(ipaddress.ip_network(f"{ip}/{length}", strict=False))


class ResolverRecord(BaseModel):
    """A discovered or well-known resolver with its enrichment."""

    ip: IPvAnyAddress = Field(..., description="Resolver address")
    ptr: Optional[str] = Field(None, description="Reverse DNS hostname")
    passive_names: List[str] = Field(
        default_factory=list, description="Passive DNS hostnames"
    )
    hostnames: List[str] = Field(
        default_factory=list, description="PTR plus passive DNS names"
    )
    selected_hostname: Optional[str] = Field(
        None, description="Hostname used for grouping"
    )
    sld: Optional[str] = Field(
        None, description="Registrable domain of the selected hostname"
    )
    prefix: Optional[str] = Field(None, description="/24 (IPv4) or /48 (IPv6) network")
    asn: Optional[int] = Field(None, description="Origin autonomous system")
    matrix: Optional[VerificationMatrix] = Field(
        None, description="DoH verification outcome"
    )
    source: str = Field("scan", description="'scan' or the name of a well-known list")

    @model_validator(mode="after")
    def _consistent(self) -> "ResolverRecord":
        selected = self.selected_hostname
        if selected is not None and selected not in self.hostnames:
            raise ValueError("selected_hostname must be one of hostnames")
        if self.sld is not None and self.selected_hostname is None:
            raise ValueError("sld requires a selected hostname")
        if self.prefix is None:
            self.prefix = network_prefix(self.ip)
        return self


class ProviderGrouping(BaseModel):
    """Resolvers grouped into assumed providers."""

    sld_groups: Dict[str, List[ResolverRecord]] = Field(default_factory=dict)
    nameless_prefix_groups: Dict[str, List[ResolverRecord]] = Field(
        default_factory=dict
    )
    provider_estimate: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _estimate_is_group_count(self) -> "ProviderGrouping":
        expected = len(self.sld_groups) + len(self.nameless_prefix_groups)
        if self.provider_estimate != expected:
            raise ValueError(
                f"provider_estimate {self.provider_estimate} != {expected} groups"
            )
        return self

    @property
    def record_count(self) -> int:
        return sum(len(group) for group in self.sld_groups.values()) + sum(
            len(group) for group in self.nameless_prefix_groups.values()
        )


class CatalogEntry(BaseModel):
    """A well-known resolver address."""

    ip: IPvAnyAddress
    hostnames: List[str] = Field(default_factory=list)
    version: int = Field(..., description="IP version, 4 or 6")
    asn: Optional[int] = None
    source: str = Field(..., description="Name of the list the entry came from")

    @model_validator(mode="after")
    def _version_matches(self) -> "CatalogEntry":
        if self.version != self.ip.version:
            raise ValueError(f"{self.ip} is not IPv{self.version}")
        return self


class CatalogSummary(BaseModel):
    """Counts describing a well-known resolver catalog."""

    total: int = Field(0, ge=0, description="Total unique servers")
    ipv4_count: int = Field(0, ge=0, description="Total unique IPv4 servers")
    ipv6_count: int = Field(0, ge=0, description="Total unique IPv6 servers")
    unique_asn: int = Field(0, ge=0, description="Unique autonomous systems")
    unique_domains: int = Field(0, ge=0, description="Unique domain names")

    @model_validator(mode="after")
    def _versions_add_up(self) -> "CatalogSummary":
        if self.ipv4_count + self.ipv6_count != self.total:
            raise ValueError("ipv4_count + ipv6_count must equal total")
        return self


class CrossReference(BaseModel):
    """Scan results split by membership in a catalog."""

    known_found: int = Field(0, ge=0)
    unknown_found: int = Field(0, ge=0)

    @property
    def total(self) -> int:
        return self.known_found + self.unknown_found


class GroupingReport(BaseModel):
    """Hostname and prefix analysis of discovered resolvers."""

    total_unique_ips: int = Field(
        ..., ge=0, description="Total number of unique IP addresses"
    )
    ips_with_ptr: int = Field(..., ge=0, description="IP addresses with PTR records")
    ips_without_ptr: int = Field(
        ..., ge=0, description="IP addresses without PTR records"
    )
    ips_with_hostname: int = Field(
        ..., ge=0, description="IP addresses with a PTR or passive DNS name"
    )
    unique_sld: int = Field(..., ge=0, description="Unique SLD")
    unique_prefixes: int = Field(
        ..., ge=0, description="Unique prefixes of nameless addresses"
    )
    assumed_providers: int = Field(
        ..., ge=0, description="Assumed number of unique providers"
    )
    known_resolvers_found: int = Field(
        ..., ge=0, description="Discovered well-known resolvers"
    )
    unknown_resolvers_found: int = Field(
        ..., ge=0, description="Discovered unknown resolvers"
    )

    @model_validator(mode="after")
    def _partitions(self) -> "GroupingReport":
        if self.ips_with_ptr + self.ips_without_ptr != self.total_unique_ips:
            raise ValueError("PTR split must add up to the total")
        found = self.known_resolvers_found + self.unknown_resolvers_found
        if found != self.total_unique_ips:
            raise ValueError("known + unknown must equal the total")
        if self.assumed_providers != self.unique_sld + self.unique_prefixes:
            raise ValueError(
                "assumed providers must equal SLD groups plus prefix groups"
            )
        return self


# --------------------------------------------------------------------------
# Flows
# --------------------------------------------------------------------------


class TransportProtocol(str, Enum):
    TCP = "TCP"
    UDP = "UDP"


class FlowCategory(str, Enum):
    """Traffic classes, in classification precedence order."""

    DOH = "DoH"
    DOT = "DoT"
    DOQ = "DoQ"
    DNS = "DNS"
    OTHER = "Other"


_TRUE_TEXT = {"true", "t", "1", "yes", "y"}
_FALSE_TEXT = {"false", "f", "0", "no", "n"}


def parse_optional_bool(value: Any) -> Optional[bool]:
    """Flow-file boolean cell: empty means unknown."""
    if value is None or isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("", "nan", "none", "<na>"):
        return None
    if text in _TRUE_TEXT:
        return True
    if text in _FALSE_TEXT:
        return False
    raise ValueError(f"not a boolean: {value!r}")


class FlowRecord(BaseModel):
    """A single flow observation."""

    ts: datetime = Field(..., description="Flow start time, UTC")
    src_ip: IPvAnyAddress
    dst_ip: IPvAnyAddress
    proto: TransportProtocol
    src_port: int = Field(..., ge=0, le=65535)
    dst_port: int = Field(..., ge=0, le=65535)
    tls_established: Optional[bool] = None
    sni: Optional[str] = None
    bytes: Optional[int] = Field(None, ge=0)
    packets: Optional[int] = Field(None, ge=0)

    @field_validator("ts", mode="before")
    @classmethod
    def _parse_ts(cls, value: Any) -> Any:
        if isinstance(value, str):
            value = date_parser.isoparse(value)
        if isinstance(value, datetime):
            if value.tzinfo is None:
                return value.replace(tzinfo=timezone.utc)
            return value.astimezone(timezone.utc)
        return value

    @field_validator("proto", mode="before")
    @classmethod
    def _upper_proto(cls, value: Any) -> Any:
        return value.upper() if isinstance(value, str) else value

    @field_validator("tls_established", mode="before")
    @classmethod
    def _parse_tls(cls, value: Any) -> Any:
        return parse_optional_bool(value)

    @field_validator("sni", mode="before")
    @classmethod
    def _blank_sni(cls, value: Any) -> Any:
        if value is None:
            return None
        text = str(value).strip()
        return text or None


def _normalize_hostname(name: str) -> str:
    return name.strip().lower().rstrip(".")


class ClassifierConfig(BaseModel):
    """Which flows count as DoH/DoT/DoQ/DNS."""

    provider_ips: Set[IPvAnyAddress] = Field(
        default_factory=set, description="DoH provider addresses"
    )
    sni_names: Set[str] = Field(
        default_factory=set, description="Exact DoH provider hostnames"
    )
    sni_suffixes: Set[str] = Field(
        default_factory=set,
        description="Explicit suffix entries, stored as '.example.com'",
    )
    official_resolvers: Set[IPvAnyAddress] = Field(
        default_factory=set,
        description="Organization resolvers excluded from DNS counts",
    )
    local_prefixes: List[IPvAnyNetwork] = Field(
        default_factory=list,
        description="Only flows started from these networks are kept",
    )
    doh_port: int = Field(443, ge=1, le=65535)
    dot_port: int = Field(853, ge=1, le=65535)
    doq_port: int = Field(784, ge=1, le=65535)
    dns_port: int = Field(53, ge=1, le=65535)

    @field_validator("sni_names", mode="before")
    @classmethod
    def _lower_names(cls, value: Any) -> Any:
        if value is None:
            return value
        return {_normalize_hostname(name) for name in value}

    @field_validator("sni_suffixes", mode="before")
    @classmethod
    def _dotted_suffixes(cls, value: Any) -> Any:
        if value is None:
            return value
        suffixes = set()
        for entry in value:
            entry = _normalize_hostname(entry)
            if entry.startswith("*."):
                entry = entry[1:]
            suffixes.add(entry if entry.startswith(".") else f".{entry}")
        return suffixes

    @field_validator("local_prefixes", mode="before")
    @classmethod
    def _parse_prefixes(cls, value: Any) -> Any:
        if isinstance(value, (list, tuple, set)):
            return [parse_network(item) for item in value]
        return value

    @model_validator(mode="after")
    def _has_providers(self) -> "ClassifierConfig":
        if not (self.provider_ips or self.sni_names or self.sni_suffixes):
            raise ValueError("at least one DoH provider address or SNI is required")
        return self

    def sni_matches(self, sni: Optional[str]) -> bool:
        """Exact hostname match or an explicit suffix entry."""
        if not sni:
            return False
        name = _normalize_hostname(sni)
        if name in self.sni_names:
            return True
        return any(name.endswith(suffix) for suffix in self.sni_suffixes)

    def is_local(self, ip: IPAddress) -> bool:
        """Whether a flow from ``ip`` was started inside the organization."""
        if not self.local_prefixes:
            return True
        return any(
            ip.version == net.version and ip in net for net in self.local_prefixes
        )


class DailyCounts(BaseModel):
    """Per-day flow counts."""

    date: date
    doh: int = Field(0, ge=0)
    dot: int = Field(0, ge=0)
    doq: int = Field(0, ge=0)
    dns: int = Field(0, ge=0)
    total: int = Field(0, ge=0)
    tls_established: int = Field(0, ge=0)
    port443: int = Field(0, ge=0)
    unique_src_ips: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _doh_within_port443(self) -> "DailyCounts":
        if self.doh > self.port443:
            raise ValueError("doh cannot exceed port443")
        if self.doh + self.dot + self.doq + self.dns > self.total:
            raise ValueError("category counts exceed total")
        return self


DAILY_COUNT_COLUMNS = [
    "date",
    "doh",
    "dot",
    "doq",
    "dns",
    "total",
    "tls_established",
    "port443",
    "unique_src_ips",
]


# --------------------------------------------------------------------------
# Statistics
# --------------------------------------------------------------------------


class StationarityVerdict(str, Enum):
    STATIONARY = "Stationary"
    NON_STATIONARY = "Non-Stationary"


class AdfResult(BaseModel):
    """Augmented Dickey-Fuller test outcome (constant-only regression)."""

    statistic: float = Field(..., description="t-ratio of the lagged level coefficient")
    p_value: float = Field(
        ..., ge=0.0, le=1.0, description="MacKinnon approximate p-value"
    )
    used_lag: int = Field(..., ge=0, description="Lagged differences in the regression")
    n_obs: int = Field(..., ge=1, description="Observations in the final regression")
    alpha: float = Field(0.05, gt=0.0, lt=1.0, description="Significance level")
    verdict: StationarityVerdict
    critical_values: Dict[str, float] = Field(
        default_factory=dict, description="1%/5%/10% values"
    )
    ic_best: Optional[float] = Field(None, description="Best AIC during lag selection")

    @model_validator(mode="after")
    def _verdict_matches_p(self) -> "AdfResult":
        expected = StationarityVerdict.NON_STATIONARY
        if self.p_value < self.alpha:
            expected = StationarityVerdict.STATIONARY
        if self.verdict != expected:
            raise ValueError("verdict must be Stationary iff p_value < alpha")
        return self


class TrendFit(BaseModel):
    """Least-squares line over the day index."""

    slope: float = Field(..., description="Value units per day")
    intercept: float = Field(..., description="Value at day 0")
    residual_std_error: float = Field(..., ge=0.0)
    n_obs: int = Field(..., ge=2)


class SeriesReport(BaseModel):
    """Descriptive statistics, stationarity and trend for one daily series."""

    value: str = Field(..., description="Series name")
    n_obs: int = Field(..., ge=0)
    mean: Optional[float] = None
    std: Optional[float] = None
    adf_stat: Optional[float] = None
    p_value: Optional[float] = None
    used_lag: Optional[int] = None
    conclusion: Optional[StationarityVerdict] = None
    slope: Optional[float] = None
    intercept: Optional[float] = None
    note: Optional[str] = Field(None, description="Why a statistic is missing")


class StatsReport(BaseModel):
    """Stats report over the series of a daily-counts file."""

    source: str
    alpha: float
    trimmed: bool = False
    rows: List[SeriesReport] = Field(default_factory=list)


# --------------------------------------------------------------------------
# Reports
# --------------------------------------------------------------------------


class ReportCell(BaseModel):
    count: int = Field(..., ge=0)
    percent: Optional[str] = Field(
        None, description="Share of the table total, one decimal"
    )


class ReportRow(BaseModel):
    label: str
    cells: List[ReportCell]


class ReportTable(BaseModel):
    """A count/percent table in the published style."""

    title: str
    columns: List[str]
    rows: List[ReportRow] = Field(default_factory=list)
    total: int = Field(0, ge=0, description="Denominator of the percentages")
    note: Optional[str] = Field(None, description="Set when the table has no data")

    @model_validator(mode="after")
    def _row_width(self) -> "ReportTable":
        for row in self.rows:
            if len(row.cells) != len(self.columns):
                raise ValueError(
                    f"row {row.label!r} has {len(row.cells)} cells "
                    f"for {len(self.columns)} columns"
                )
        return self
