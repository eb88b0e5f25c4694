"""Resolver enrichment (PTR, passive DNS, ASN), provider grouping and the
well-known catalog."""

import ipaddress
import json
import logging
import re
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import (
    Any,
    Callable,
    Dict,
    Iterable,
    List,
    Optional,
    Sequence,
    Tuple,
    TypeVar,
    Union,
)

import dns.exception
import dns.resolver
import dns.reversename
import pandas as pd

from .exceptions import CatalogError, EnrichmentError, HostnameError, LookupFailure
from .models import (
    CatalogEntry,
    CatalogSummary,
    CrossReference,
    GroupingReport,
    IPAddress,
    IPNetwork,
    ProviderGrouping,
    ResolverRecord,
    ScanRecord,
    VerificationMatrix,
    network_prefix,
)
from .public_suffix import PublicSuffixList, bundled_suffix_list

logger = logging.getLogger(__name__)

CATALOG_COLUMNS = ["ip", "hostname", "version", "asn", "source"]
_LABEL = re.compile(r"^[a-z0-9_](?:[a-z0-9_-]{0,61}[a-z0-9_])?$")

T = TypeVar("T")


def _get_data_dir() -> Path:
    return Path(__file__).parent / "data"


def _hostname(value: str) -> str:
    return value.strip().lower().rstrip(".")


def _read_csv(path: Union[str, Path], required: Sequence[str]) -> pd.DataFrame:
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, comment=None)
    frame.columns = [column.strip().lower() for column in frame.columns]
    missing = [column for column in required if column not in frame.columns]
    if missing:
        raise EnrichmentError(f"{path}: missing columns {', '.join(missing)}")
    return frame


# --------------------------------------------------------------------------
# Lookup providers
# --------------------------------------------------------------------------


class DnsPtrProvider:
    """Live reverse DNS through dnspython."""

    def __init__(
        self,
        nameservers: Optional[List[str]] = None,
        timeout: float = 5.0,
        lifetime: float = 10.0,
    ) -> None:
        self.resolver = dns.resolver.Resolver(configure=not nameservers)
        if nameservers:
            self.resolver.nameservers = nameservers
        self.resolver.timeout = timeout
        self.resolver.lifetime = lifetime

    def lookup_ptr(self, ip: IPAddress) -> Optional[str]:
        """
        Reverse-resolve ``ip``.

        Returns:
            The first PTR target, or None when no record exists

        Raises:
            LookupFailure: timeouts and other resolution failures
        """
        reverse_name = dns.reversename.from_address(str(ip))
        try:
            answers = self.resolver.resolve(reverse_name, "PTR")
        except (dns.resolver.NXDOMAIN, dns.resolver.NoAnswer):
            return None
        except dns.exception.DNSException as exc:
            raise LookupFailure(f"PTR lookup for {ip} failed: {exc}") from exc
        for answer in answers:
            return _hostname(str(answer.target))
        return None


class PtrSnapshot:
    """File-backed PTR data: CSV with columns ip,hostname."""

    def __init__(self, table: Dict[IPAddress, str]) -> None:
        self.table = table

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "PtrSnapshot":
        frame = _read_csv(path, ["ip", "hostname"])
        table: Dict[IPAddress, str] = {}
        for row_number, row in enumerate(frame.itertuples(index=False), start=2):
            try:
                ip = ipaddress.ip_address(row.ip.strip())
            except ValueError as exc:
                raise EnrichmentError(
                    f"{path} line {row_number}: invalid address {row.ip!r}"
                ) from exc
            if row.hostname.strip():
                table.setdefault(ip, _hostname(row.hostname))
        return cls(table)

    def lookup_ptr(self, ip: IPAddress) -> Optional[str]:
        return self.table.get(ip)


class PassiveDnsSnapshot:
    """File-backed passive DNS: JSON lines of ``{"ip": ..., "names": [...]}``."""

    def __init__(self, table: Dict[IPAddress, List[str]]) -> None:
        self.table = table

    @classmethod
    def from_jsonl(cls, path: Union[str, Path]) -> "PassiveDnsSnapshot":
        table: Dict[IPAddress, List[str]] = {}
        with open(path, "r", encoding="utf-8") as handle:
            for line_number, line in enumerate(handle, start=1):
                if not line.strip():
                    continue
                try:
                    document = json.loads(line)
                    ip = ipaddress.ip_address(str(document["ip"]).strip())
                    names = [_hostname(str(name)) for name in document.get("names", [])]
                except (ValueError, KeyError, TypeError) as exc:
                    raise EnrichmentError(f"{path} line {line_number}: {exc}") from exc
                known = table.setdefault(ip, [])
                known.extend(name for name in names if name and name not in known)
        return cls(table)

    def passive_lookup(self, ip: IPAddress) -> List[str]:
        return list(self.table.get(ip, []))


class AsnTable:
    """Prefix-to-ASN table with longest-prefix matching; CSV columns prefix,asn."""

    def __init__(self, entries: Iterable[Tuple[IPNetwork, int]]) -> None:
        self._by_length: Dict[Tuple[int, int], Dict[IPNetwork, int]] = {}
        for network, asn in entries:
            key = (network.version, network.prefixlen)
            by_network = self._by_length.setdefault(key, {})
            by_network[network] = asn
        self._lengths = sorted(self._by_length, key=lambda key: key[1], reverse=True)

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "AsnTable":
        frame = _read_csv(path, ["prefix", "asn"])
        entries = []
        for row_number, row in enumerate(frame.itertuples(index=False), start=2):
            try:
                asn_text = row.asn.strip().upper()
                asn = int(asn_text[2:] if asn_text.startswith("AS") else asn_text)
                entries.append(
                    (ipaddress.ip_network(row.prefix.strip(), strict=False), asn)
                )
            except ValueError as exc:
                raise EnrichmentError(f"{path} line {row_number}: {exc}") from exc
        return cls(entries)

    def lookup_asn(self, ip: IPAddress) -> Optional[int]:
        for version, length in self._lengths:
            if version != ip.version:
                continue
            candidate = ipaddress.ip_network(f"{ip}/{length}", strict=False)
            asn = self._by_length[(version, length)].get(candidate)
            if asn is not None:
                return asn
        return None


# --------------------------------------------------------------------------
# Hostnames
# --------------------------------------------------------------------------


def select_hostname(ptr: Optional[str], passive: Sequence[str]) -> Optional[str]:
    """
    Choose the hostname used for grouping.

    PTR wins; otherwise the first passive name containing "doh" or "dns";
    otherwise the first passive name.
    """
    if ptr:
        return ptr
    for name in passive:
        lowered = name.lower()
        if "doh" in lowered or "dns" in lowered:
            return name
    return passive[0] if passive else None


def extract_sld(hostname: str, suffixes: Optional[PublicSuffixList] = None) -> str:
    """
    Registrable domain of ``hostname`` ("doh.example.co.uk" -> "example.co.uk").

    Unknown suffixes fall back to the last two labels.

    Raises:
        HostnameError: empty, single-label or syntactically invalid names
    """
    name = _hostname(hostname or "")
    labels = name.split(".") if name else []
    if len(labels) < 2:
        raise HostnameError(f"{hostname!r} has no registrable domain")
    for label in labels:
        if not _LABEL.match(label):
            raise HostnameError(f"invalid label {label!r} in {hostname!r}")
    registrable = (suffixes or bundled_suffix_list()).registrable_domain(name)
    return registrable or ".".join(labels[-2:])


# --------------------------------------------------------------------------
# Enrichment and grouping
# --------------------------------------------------------------------------


class ResolverEnricher:
    """
    Attaches PTR, passive DNS and ASN data to resolvers.

    Any provider may be omitted. Provider failures are logged and leave the
    field empty; they never abort the run.
    """

    def __init__(
        self,
        ptr_provider: Any = None,
        passive_provider: Any = None,
        asn_provider: Any = None,
        suffixes: Optional[PublicSuffixList] = None,
        max_workers: int = 8,
    ) -> None:
        self.ptr_provider = ptr_provider
        self.passive_provider = passive_provider
        self.asn_provider = asn_provider
        self.suffixes = suffixes or bundled_suffix_list()
        self.max_workers = max_workers
        self.failures = 0

    def _safe(self, lookup: Callable[[IPAddress], T], ip: IPAddress, default: T) -> T:
        try:
            return lookup(ip)
        except LookupFailure as exc:
            logger.warning("%s", exc)
            self.failures += 1
            return default

    def enrich_one(
        self,
        ip: IPAddress,
        matrix: Optional[VerificationMatrix] = None,
        source: str = "scan",
    ) -> ResolverRecord:
        ptr = None
        passive: List[str] = []
        asn = None
        if self.ptr_provider:
            ptr = self._safe(self.ptr_provider.lookup_ptr, ip, None)
        if self.passive_provider:
            passive = self._safe(self.passive_provider.passive_lookup, ip, [])
        if self.asn_provider:
            asn = self._safe(self.asn_provider.lookup_asn, ip, None)

        hostnames: List[str] = []
        for name in ([ptr] if ptr else []) + list(passive):
            if name not in hostnames:
                hostnames.append(name)
        selected = select_hostname(ptr, passive)
        sld = None
        if selected is not None:
            try:
                sld = extract_sld(selected, self.suffixes)
            except HostnameError as exc:
                logger.info("no SLD for %s: %s", ip, exc)
        return ResolverRecord(
            ip=ip,
            ptr=ptr,
            passive_names=list(passive),
            hostnames=hostnames,
            selected_hostname=selected,
            sld=sld,
            asn=asn,
            matrix=matrix,
            source=source,
        )

    def enrich(self, records: Sequence[ScanRecord]) -> List[ResolverRecord]:
        """Enrich scan records concurrently; output keeps input order."""
        with ThreadPoolExecutor(
            max_workers=self.max_workers, thread_name_prefix="enrich"
        ) as executor:
            return list(
                executor.map(
                    lambda record: self.enrich_one(record.target.ip, record.matrix),
                    records,
                )
            )


def group_providers(records: Iterable[ResolverRecord]) -> ProviderGrouping:
    """Group named resolvers by SLD and nameless ones by /24 (/48) prefix."""
    sld_groups: Dict[str, List[ResolverRecord]] = {}
    prefix_groups: Dict[str, List[ResolverRecord]] = {}
    for record in records:
        if record.sld:
            sld_groups.setdefault(record.sld, []).append(record)
        else:
            prefix = record.prefix or network_prefix(record.ip)
            prefix_groups.setdefault(prefix, []).append(record)
    return ProviderGrouping(
        sld_groups=dict(sorted(sld_groups.items())),
        nameless_prefix_groups=dict(sorted(prefix_groups.items())),
        provider_estimate=len(sld_groups) + len(prefix_groups),
    )


# --------------------------------------------------------------------------
# Catalog
# --------------------------------------------------------------------------


def _parse_asn(value: str, where: str) -> Optional[int]:
    text = value.strip().upper()
    if not text:
        return None
    try:
        return int(text[2:] if text.startswith("AS") else text)
    except ValueError as exc:
        raise CatalogError(f"{where}: invalid ASN {value!r}") from exc


def load_catalog(
    path: Union[str, Path], source: Optional[str] = None
) -> List[CatalogEntry]:
    """
    Load a catalog CSV (ip,hostname,version,asn,source).

    Rows for the same address are merged. Empty ``source`` cells take
    ``source`` or the file stem.

    Raises:
        CatalogError: missing columns or inconsistent rows
    """
    path = Path(path)
    try:
        frame = _read_csv(path, CATALOG_COLUMNS)
    except EnrichmentError as exc:
        raise CatalogError(str(exc)) from exc
    default_source = source or path.stem
    entries = []
    for row_number, row in enumerate(frame.itertuples(index=False), start=2):
        where = f"{path} line {row_number}"
        try:
            ip = ipaddress.ip_address(row.ip.strip())
        except ValueError as exc:
            raise CatalogError(f"{where}: invalid address {row.ip!r}") from exc
        version_text = row.version.strip()
        try:
            entry = CatalogEntry(
                ip=ip,
                hostnames=[_hostname(row.hostname)] if row.hostname.strip() else [],
                version=int(version_text) if version_text else ip.version,
                asn=_parse_asn(row.asn, where),
                source=row.source.strip() or default_source,
            )
        except ValueError as exc:
            raise CatalogError(f"{where}: {exc}") from exc
        entries.append(entry)
    return merge_catalogs(entries)


def merge_catalogs(*catalogs: Iterable[CatalogEntry]) -> List[CatalogEntry]:
    """
    Merge catalogs in priority order.

    The same address keeps the union of hostnames and the earliest source.
    """
    merged: "OrderedDict[IPAddress, CatalogEntry]" = OrderedDict()
    for catalog in catalogs:
        for entry in catalog:
            existing = merged.get(entry.ip)
            if existing is None:
                merged[entry.ip] = entry.model_copy(deep=True)
                continue
            hostnames = existing.hostnames + [
                name for name in entry.hostnames if name not in existing.hostnames
            ]
            asn = existing.asn
            if asn is None:
                asn = entry.asn
            elif entry.asn is not None and entry.asn != asn:
                logger.warning(
                    "conflicting ASN for %s: keeping AS%d over AS%d",
                    entry.ip,
                    asn,
                    entry.asn,
                )
            merged[entry.ip] = existing.model_copy(
                update={"hostnames": hostnames, "asn": asn}
            )
    return list(merged.values())


def save_catalog(entries: Iterable[CatalogEntry], path: Union[str, Path]) -> None:
    """Write a catalog CSV, one row per (address, hostname)."""
    rows = []
    for entry in entries:
        for hostname in entry.hostnames or [""]:
            rows.append(
                {
                    "ip": str(entry.ip),
                    "hostname": hostname,
                    "version": entry.version,
                    "asn": "" if entry.asn is None else entry.asn,
                    "source": entry.source,
                }
            )
    pd.DataFrame(rows, columns=CATALOG_COLUMNS).to_csv(path, index=False)


def bundled_major_providers() -> List[CatalogEntry]:
    """The eleven major DoH providers shipped with the package."""
    return load_catalog(
        _get_data_dir() / "major_providers.csv", source="major-providers"
    )


def summarize_catalog(catalog: Iterable[CatalogEntry]) -> CatalogSummary:
    entries = merge_catalogs(catalog)
    ipv4 = sum(1 for entry in entries if entry.ip.version == 4)
    return CatalogSummary(
        total=len(entries),
        ipv4_count=ipv4,
        ipv6_count=len(entries) - ipv4,
        unique_asn=len({entry.asn for entry in entries if entry.asn is not None}),
        unique_domains=len({name for entry in entries for name in entry.hostnames}),
    )


def _ip_of(item: Any) -> IPAddress:
    if isinstance(item, (ipaddress.IPv4Address, ipaddress.IPv6Address)):
        return item
    if isinstance(item, ScanRecord):
        return item.target.ip
    if hasattr(item, "ip"):
        return item.ip
    return ipaddress.ip_address(str(item))


def cross_reference(
    scan_records: Iterable[Any], catalog: Iterable[CatalogEntry]
) -> CrossReference:
    """Split the unique scanned addresses into catalog members and the rest."""
    scanned = {_ip_of(item) for item in scan_records}
    known = {entry.ip for entry in catalog}
    known_found = len(scanned & known)
    return CrossReference(
        known_found=known_found, unknown_found=len(scanned) - known_found
    )


def build_grouping_report(
    records: Sequence[ResolverRecord], catalog: Iterable[CatalogEntry]
) -> GroupingReport:
    """Hostname, prefix and catalog counts over enriched resolvers."""
    unique: "OrderedDict[IPAddress, ResolverRecord]" = OrderedDict()
    for record in records:
        unique.setdefault(record.ip, record)
    grouping = group_providers(unique.values())
    reference = cross_reference(unique.keys(), catalog)
    with_ptr = sum(1 for record in unique.values() if record.ptr)
    return GroupingReport(
        total_unique_ips=len(unique),
        ips_with_ptr=with_ptr,
        ips_without_ptr=len(unique) - with_ptr,
        ips_with_hostname=sum(
            1 for record in unique.values() if record.selected_hostname
        ),
        unique_sld=len(grouping.sld_groups),
        unique_prefixes=len(grouping.nameless_prefix_groups),
        assumed_providers=grouping.provider_estimate,
        known_resolvers_found=reference.known_found,
        unknown_resolvers_found=reference.unknown_found,
    )


def save_resolver_records(
    records: Iterable[ResolverRecord], path: Union[str, Path]
) -> None:
    """Write enriched resolvers as JSON lines."""
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            document = record.model_dump(mode="json", exclude={"matrix"})
            document["matrix"] = record.matrix.to_record() if record.matrix else None
            handle.write(json.dumps(document) + "\n")


def load_resolver_records(path: Union[str, Path]) -> List[ResolverRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            if not line.strip():
                continue
            document = json.loads(line)
            matrix = document.pop("matrix", None)
            records.append(
                ResolverRecord(
                    **document,
                    matrix=VerificationMatrix.from_record(matrix) if matrix else None,
                )
            )
    return records
