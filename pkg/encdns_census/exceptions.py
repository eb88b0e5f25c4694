"""Exception hierarchy for encdns-census."""

from typing import Optional


class EncDnsError(Exception):
    """Base exception for all encdns-census errors."""
    pass


class DnsCodecError(EncDnsError):
    """Base exception for DNS wireformat encoding and decoding."""
    pass


class DnsValidationError(DnsCodecError):
    """Raised when a DNS name or question violates wireformat limits."""
    pass


class DnsParseError(DnsCodecError):
    """Raised when a wireformat message cannot be decoded."""

    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class Base64UrlError(DnsCodecError):
    """Raised on malformed base64url text."""
    pass


class ScanError(EncDnsError):
    """Base exception for scan orchestration."""
    pass


class ConsentRequiredError(ScanError):
    """Raised when a multi-prefix scan is started without the consent flag."""
    pass


class TargetFileError(ScanError):
    """Raised when a candidate list contains an unparseable line."""

    def __init__(self, message: str, line_number: Optional[int] = None) -> None:
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class PartitionError(ScanError):
    """Raised when an address range cannot be partitioned as requested."""
    pass


class SinkWriteError(ScanError):
    """Raised when scan results cannot be written; aborts the scan."""
    pass


class EnrichmentError(EncDnsError):
    """Base exception for resolver enrichment and cataloguing."""
    pass


class LookupFailure(EnrichmentError):
    """A lookup provider failed (I/O, timeout). Distinct from 'no record'."""
    pass


class HostnameError(EnrichmentError):
    """Raised for hostnames that have no registrable domain."""
    pass


class CatalogError(EnrichmentError):
    """Raised for malformed catalog files or inconsistent catalog rows."""
    pass


class StatisticsError(EncDnsError):
    """Base exception for trend statistics."""
    pass


class DegenerateSeriesError(StatisticsError):
    """Raised when a series has no variance or no distinct x positions."""
    pass


class SeriesTooShortError(StatisticsError):
    """Raised when a series is too short for the requested statistic."""
    pass


class UndefinedRatioError(StatisticsError):
    """Raised when a ratio has a zero denominator."""
    pass


class ReportError(EncDnsError):
    """Raised when a report cannot be built."""
    pass


class MockServerError(EncDnsError):
    """Raised when the mock resolver cannot start."""
    pass


class FlowInputError(EncDnsError):
    """Raised when a flow or daily-counts file is malformed."""

    def __init__(self, message: str, row_number: Optional[int] = None) -> None:
        if row_number is not None:
            message = f"row {row_number}: {message}"
        super().__init__(message)
        self.row_number = row_number
