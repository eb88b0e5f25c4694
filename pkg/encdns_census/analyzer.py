"""Flow classification and daily aggregation of encrypted-DNS traffic."""

import ipaddress
import logging
from datetime import date, timedelta
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Set, Union

import numpy as np
import pandas as pd

from .exceptions import FlowInputError, UndefinedRatioError
from .models import (
    DAILY_COUNT_COLUMNS,
    ClassifierConfig,
    DailyCounts,
    FlowCategory,
    FlowRecord,
    TransportProtocol,
    parse_optional_bool,
)

logger = logging.getLogger(__name__)

FLOW_COLUMNS = [
    "ts",
    "src_ip",
    "dst_ip",
    "proto",
    "src_port",
    "dst_port",
    "tls_established",
    "sni",
]
REQUIRED_FLOW_COLUMNS = ["ts", "src_ip", "dst_ip", "proto", "src_port", "dst_port"]
COUNT_COLUMNS = ["doh", "dot", "doq", "dns", "total", "tls_established", "port443"]


def classify(flow: FlowRecord, cfg: ClassifierConfig) -> FlowCategory:
    """
    Assign one category, first match wins: DoH, DoT, DoQ, DNS, Other.

    DoH needs TCP to the DoH port, a provider SNI or provider address, and
    a TLS handshake that did not fail. DNS to an official resolver is Other.
    """
    tcp = flow.proto == TransportProtocol.TCP
    if (
        tcp
        and flow.dst_port == cfg.doh_port
        and flow.tls_established is not False
        and (cfg.sni_matches(flow.sni) or flow.dst_ip in cfg.provider_ips)
    ):
        return FlowCategory.DOH
    if tcp and flow.dst_port == cfg.dot_port:
        return FlowCategory.DOT
    if flow.proto == TransportProtocol.UDP and flow.dst_port == cfg.doq_port:
        return FlowCategory.DOQ
    if flow.dst_port == cfg.dns_port and flow.dst_ip not in cfg.official_resolvers:
        return FlowCategory.DNS
    return FlowCategory.OTHER


def _canonical_ip(text: str) -> Optional[str]:
    try:
        return str(ipaddress.ip_address(str(text).strip()))
    except ValueError:
        return None


def _map_unique(series: pd.Series, func) -> pd.Series:
    """Apply ``func`` once per distinct value."""
    uniques = series.unique()
    return series.map(dict(zip(uniques, (func(value) for value in uniques))))


def prepare_flows(frame: pd.DataFrame, row_offset: int = 0) -> pd.DataFrame:
    """
    Normalize a raw flow frame: UTC timestamps, canonical addresses,
    integer ports, upper-case protocol and nullable TLS flag.

    Raises:
        FlowInputError: missing columns or unparseable cells (1-based file row)
    """
    frame = frame.copy()
    frame.columns = [str(column).strip().lower() for column in frame.columns]
    missing = [
        column for column in REQUIRED_FLOW_COLUMNS if column not in frame.columns
    ]
    if missing:
        raise FlowInputError(f"missing flow columns: {', '.join(missing)}")
    for column in ("tls_established", "sni"):
        if column not in frame.columns:
            frame[column] = None

    def first_bad(mask: pd.Series) -> int:
        return row_offset + int(np.flatnonzero(mask.to_numpy())[0]) + 2

    try:
        frame["ts"] = pd.to_datetime(frame["ts"], utc=True, format="ISO8601")
    except (ValueError, TypeError) as exc:
        raise FlowInputError(f"unparseable timestamp: {exc}") from exc

    for column in ("src_ip", "dst_ip"):
        frame[column] = _map_unique(frame[column].astype(str), _canonical_ip)
        if frame[column].isna().any():
            raise FlowInputError(f"invalid {column}", first_bad(frame[column].isna()))

    frame["proto"] = frame["proto"].astype(str).str.strip().str.upper()
    bad_proto = ~frame["proto"].isin([member.value for member in TransportProtocol])
    if bad_proto.any():
        raise FlowInputError("proto must be TCP or UDP", first_bad(bad_proto))

    for column in ("src_port", "dst_port"):
        ports = pd.to_numeric(frame[column], errors="coerce")
        bad = ports.isna() | (ports < 0) | (ports > 65535) | (ports % 1 != 0)
        if bad.any():
            raise FlowInputError(f"invalid {column}", first_bad(bad))
        frame[column] = ports.astype("int64")

    try:
        frame["tls_established"] = _map_unique(
            frame["tls_established"].astype(object), parse_optional_bool
        )
    except ValueError as exc:
        raise FlowInputError(str(exc)) from exc

    sni = frame["sni"].fillna("").astype(str).str.strip().str.lower().str.rstrip(".")
    frame["sni"] = sni.where(sni != "", None)
    return frame


def classify_frame(frame: pd.DataFrame, cfg: ClassifierConfig) -> pd.Series:
    """Vectorized ``classify`` over a prepared flow frame; returns category values."""
    if frame.empty:
        return pd.Series([], dtype=object, index=frame.index)
    tcp = frame["proto"] == TransportProtocol.TCP.value
    udp = frame["proto"] == TransportProtocol.UDP.value
    dst_port = frame["dst_port"]
    tls_failed = frame["tls_established"].map(lambda value: value is False).astype(bool)

    provider_ips = {str(ip) for ip in cfg.provider_ips}
    official = {str(ip) for ip in cfg.official_resolvers}
    sni_match = (
        _map_unique(frame["sni"].astype(object), cfg.sni_matches)
        .fillna(False)
        .astype(bool)
    )
    provider_dst = frame["dst_ip"].isin(provider_ips)

    conditions = [
        tcp & (dst_port == cfg.doh_port) & ~tls_failed & (sni_match | provider_dst),
        tcp & (dst_port == cfg.dot_port),
        udp & (dst_port == cfg.doq_port),
        (dst_port == cfg.dns_port) & ~frame["dst_ip"].isin(official),
    ]
    choices = [
        FlowCategory.DOH.value,
        FlowCategory.DOT.value,
        FlowCategory.DOQ.value,
        FlowCategory.DNS.value,
    ]
    return pd.Series(
        np.select(conditions, choices, default=FlowCategory.OTHER.value),
        index=frame.index,
        dtype=object,
    )


class DailyAccumulator:
    """
    Partial per-day aggregate. ``merge`` is associative and commutative,
    so chunks and partitions can be aggregated independently.
    """

    def __init__(self) -> None:
        self.counts: Dict[date, Dict[str, int]] = {}
        self.sources: Dict[date, Set[str]] = {}

    def add_frame(self, frame: pd.DataFrame, cfg: ClassifierConfig) -> None:
        """Aggregate a prepared flow frame, dropping flows not started locally."""
        if frame.empty:
            return
        if cfg.local_prefixes:
            local = _map_unique(
                frame["src_ip"], lambda text: cfg.is_local(ipaddress.ip_address(text))
            ).astype(bool)
            frame = frame[local]
            if frame.empty:
                return
        category = classify_frame(frame, cfg)
        flags = pd.DataFrame(
            {
                "date": frame["ts"].dt.date,
                "doh": category == FlowCategory.DOH.value,
                "dot": category == FlowCategory.DOT.value,
                "doq": category == FlowCategory.DOQ.value,
                "dns": category == FlowCategory.DNS.value,
                "total": True,
                "tls_established": frame["tls_established"]
                .map(lambda value: value is True)
                .astype(bool),
                "port443": (frame["proto"] == TransportProtocol.TCP.value)
                & (frame["dst_port"] == cfg.doh_port),
                "src_ip": frame["src_ip"],
            }
        )
        grouped = flags.groupby("date")
        sums = grouped[COUNT_COLUMNS].sum()
        sources = grouped["src_ip"].agg(set)
        partial = DailyAccumulator()
        for day, row in sums.iterrows():
            partial.counts[day] = {column: int(row[column]) for column in COUNT_COLUMNS}
            partial.sources[day] = set(sources[day])
        self.merge(partial)

    def merge(self, other: "DailyAccumulator") -> "DailyAccumulator":
        for day, counts in other.counts.items():
            mine = self.counts.setdefault(day, {column: 0 for column in COUNT_COLUMNS})
            for column, value in counts.items():
                mine[column] += value
        for day, sources in other.sources.items():
            self.sources.setdefault(day, set()).update(sources)
        return self

    def to_daily_counts(self) -> List[DailyCounts]:
        """One row per day from the first to the last observed day, zeros for gaps."""
        if not self.counts:
            return []
        first, last = min(self.counts), max(self.counts)
        rows = []
        day = first
        while day <= last:
            counts = self.counts.get(day, {column: 0 for column in COUNT_COLUMNS})
            unique = len(self.sources.get(day, ()))
            rows.append(DailyCounts(date=day, unique_src_ips=unique, **counts))
            day += timedelta(days=1)
        return rows


def aggregate_daily(
    flows: Iterable[FlowRecord], cfg: ClassifierConfig
) -> List[DailyCounts]:
    """Daily counts over in-memory flow records."""
    rows = [flow.model_dump(mode="json") for flow in flows]
    accumulator = DailyAccumulator()
    if rows:
        accumulator.add_frame(prepare_flows(pd.DataFrame(rows)), cfg)
    return accumulator.to_daily_counts()


def daily_counts_to_frame(counts: Iterable[DailyCounts]) -> pd.DataFrame:
    frame = pd.DataFrame(
        [row.model_dump() for row in counts], columns=DAILY_COUNT_COLUMNS
    )
    return frame


def ratio_per_million(part: float, whole: float) -> float:
    """``part`` per one million of ``whole``."""
    if whole <= 0:
        raise UndefinedRatioError(f"ratio undefined for denominator {whole}")
    return part / whole * 1_000_000


def per_capita_rate(
    country_count: float, total_users: float, population_millions: float
) -> float:
    """Country DoH flows per DoH user, per million inhabitants."""
    if total_users <= 0 or population_millions <= 0:
        raise UndefinedRatioError("per-capita rate needs positive users and population")
    return country_count / total_users / population_millions


def compute_ratios(daily: Union[pd.DataFrame, Iterable[DailyCounts]]) -> pd.DataFrame:
    """
    Per-day adoption ratios. Days with a zero denominator get NaN.

    Columns: date, doh_per_million_flows, doh_per_million_dns,
    dot_per_million_flows, doh_share_pct, dot_share_pct,
    encrypted_share_of_dns_pct, doh_per_src_ip, dot_per_src_ip,
    encrypted_total.
    """
    frame = daily if isinstance(daily, pd.DataFrame) else daily_counts_to_frame(daily)
    frame = frame.copy()

    def safe_div(numerator: pd.Series, denominator: pd.Series) -> pd.Series:
        denominator = denominator.astype(float)
        return numerator.astype(float) / denominator.where(denominator > 0)

    encrypted = frame["doh"] + frame["dot"] + frame["doq"]
    return pd.DataFrame(
        {
            "date": frame["date"],
            "doh_per_million_flows": safe_div(frame["doh"], frame["total"]) * 1_000_000,
            "doh_per_million_dns": safe_div(frame["doh"], frame["dns"]) * 1_000_000,
            "dot_per_million_flows": safe_div(frame["dot"], frame["total"]) * 1_000_000,
            "doh_share_pct": safe_div(frame["doh"], frame["total"]) * 100,
            "dot_share_pct": safe_div(frame["dot"], frame["total"]) * 100,
            "encrypted_share_of_dns_pct": safe_div(encrypted, encrypted + frame["dns"])
            * 100,
            "doh_per_src_ip": safe_div(frame["doh"], frame["unique_src_ips"]),
            "dot_per_src_ip": safe_div(frame["dot"], frame["unique_src_ips"]),
            "encrypted_total": encrypted.astype("int64"),
        }
    )


class FlowAnalyzer:
    """Loads flow files and produces daily encrypted-DNS counts."""

    def __init__(self, config: ClassifierConfig, chunk_size: int = 100_000) -> None:
        """
        Initialize the flow analyzer.

        Args:
            config: Classification rules and provider set
            chunk_size: Rows per chunk when streaming CSV input
        """
        self.config = config
        self.chunk_size = chunk_size

    def analyze_file(self, file_path: Union[str, Path]) -> List[DailyCounts]:
        """
        Classify and aggregate a CSV or Parquet flow file.

        Args:
            file_path: Flow file with ts,src_ip,dst_ip,proto,src_port,dst_port
                and optional tls_established,sni

        Returns:
            Daily counts ordered by date
        """
        accumulator = DailyAccumulator()
        rows = 0
        for offset, chunk in self._load_chunks(file_path):
            accumulator.add_frame(prepare_flows(chunk, row_offset=offset), self.config)
            rows += len(chunk)
        daily = accumulator.to_daily_counts()
        logger.info(
            "classified %d flows from %s into %d days", rows, file_path, len(daily)
        )
        return daily

    def _load_chunks(self, file_path: Union[str, Path]) -> Iterator:
        path = Path(file_path)
        if not path.exists():
            raise FileNotFoundError(f"File not found: {path}")
        suffix = path.suffix.lower()
        if suffix == ".parquet":
            yield 0, pd.read_parquet(path)
            return
        if suffix not in (".csv", ".txt"):
            raise FlowInputError(f"Unsupported flow file format: {path.suffix}")
        offset = 0
        reader = pd.read_csv(
            path, dtype=str, keep_default_na=False, chunksize=self.chunk_size
        )
        for chunk in reader:
            yield offset, chunk
            offset += len(chunk)

    def save_daily_counts(
        self, counts: List[DailyCounts], output_path: Union[str, Path]
    ) -> None:
        """Write daily counts as CSV, or Parquet for a ``.parquet`` path."""
        save_daily_counts(counts, output_path)


def save_daily_counts(
    counts: Iterable[DailyCounts], output_path: Union[str, Path]
) -> None:
    frame = daily_counts_to_frame(counts)
    if Path(output_path).suffix.lower() == ".parquet":
        frame["date"] = pd.to_datetime(frame["date"])
        frame.to_parquet(output_path, index=False)
    else:
        frame.to_csv(output_path, index=False)


def load_daily_counts(path: Union[str, Path]) -> pd.DataFrame:
    """
    Read a daily-counts CSV or Parquet file into a date-ordered frame.

    Raises:
        FlowInputError: no ``date`` column or unparseable dates
    """
    path = Path(path)
    if path.suffix.lower() == ".parquet":
        frame = pd.read_parquet(path)
    else:
        frame = pd.read_csv(path)
    if "date" not in frame.columns:
        raise FlowInputError(f"{path}: daily counts need a 'date' column")
    try:
        frame["date"] = pd.to_datetime(frame["date"]).dt.date
    except (ValueError, TypeError) as exc:
        raise FlowInputError(f"{path}: {exc}") from exc
    return frame.sort_values("date").reset_index(drop=True)
