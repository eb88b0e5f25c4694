"""Scan orchestration: target ingestion, range partitioning, rate limiting
and result streaming."""

import ipaddress
import json
import logging
import os
import threading
import time
from concurrent.futures import FIRST_COMPLETED, Future, ThreadPoolExecutor, wait
from pathlib import Path
from typing import (
    Callable,
    Dict,
    Iterable,
    Iterator,
    List,
    Optional,
    Sequence,
    Set,
    Tuple,
    Union,
)

from .exceptions import (
    ConsentRequiredError,
    PartitionError,
    SinkWriteError,
    TargetFileError,
)
from .models import (
    IPAddress,
    IPNetwork,
    ProberConfig,
    ProbeTarget,
    RangePartition,
    ScanConfig,
    ScanRecord,
    network_prefix,
)
from .prober import DohProber

logger = logging.getLogger(__name__)

RESERVED_NETWORKS: List[IPNetwork] = [
    ipaddress.ip_network(cidr)
    for cidr in (
        "0.0.0.0/8",  # current network
        "10.0.0.0/8",  # RFC1918
        "100.64.0.0/10",  # CGNAT
        "127.0.0.0/8",  # loopback
        "169.254.0.0/16",  # link-local
        "172.16.0.0/12",  # RFC1918
        "192.0.0.0/24",  # IETF protocol assignments
        "192.0.2.0/24",  # TEST-NET-1
        "192.168.0.0/16",  # RFC1918
        "198.18.0.0/15",  # benchmarking
        "198.51.100.0/24",  # TEST-NET-2
        "203.0.113.0/24",  # TEST-NET-3
        "224.0.0.0/4",  # multicast
        "240.0.0.0/4",  # reserved
        "255.255.255.255/32",
        "::/128",
        "::1/128",
        "::ffff:0:0/96",  # IPv4-mapped
        "64:ff9b::/96",  # NAT64
        "100::/64",  # discard
        "2001:db8::/32",  # documentation
        "fc00::/7",  # unique local
        "fe80::/10",  # link-local
        "ff00::/8",  # multicast
    )
]


class RateLimiter:
    """
    Hands out evenly spaced connection slots across threads.

    Each ``acquire()`` reserves the next slot and sleeps until it arrives,
    so N acquisitions span at least ``(N - 1) / rate`` seconds.
    """

    def __init__(
        self,
        rate: float,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.interval = 1.0 / rate
        self._clock = clock
        self._sleep = sleep
        self._next_slot: Optional[float] = None
        self._lock = threading.Lock()

    def acquire(self) -> None:
        with self._lock:
            now = self._clock()
            slot = now if self._next_slot is None else max(now, self._next_slot)
            self._next_slot = slot + self.interval
        delay = slot - now
        if delay > 0:
            self._sleep(delay)


def exclusion_networks(config: ScanConfig) -> List[IPNetwork]:
    networks = list(config.exclusions)
    if config.exclude_reserved:
        networks.extend(RESERVED_NETWORKS)
    return networks


def is_excluded(ip: IPAddress, networks: Sequence[IPNetwork]) -> bool:
    return any(ip.version == network.version and ip in network for network in networks)


def load_exclusions(path: Union[str, Path]) -> List[IPNetwork]:
    """Read a CIDR-per-line file; ``#`` starts a comment."""
    networks: List[IPNetwork] = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            try:
                networks.append(ipaddress.ip_network(text, strict=False))
            except ValueError as exc:
                raise TargetFileError(
                    f"invalid network {text!r}: {exc}", line_number
                ) from exc
    return networks


def requires_consent(targets: Iterable[ProbeTarget]) -> bool:
    """Whether the targets span more than one /24 (IPv4) or /48 (IPv6)."""
    prefixes: Set[str] = set()
    for target in targets:
        prefixes.add(network_prefix(target.ip))
        if len(prefixes) > 1:
            return True
    return False


def _round_half_up_div(numerator: int, denominator: int) -> int:
    return (2 * numerator + denominator) // (2 * denominator)


def partition_ranges(
    start: Union[str, IPAddress],
    end: Union[str, IPAddress],
    n: int,
    first_octet: bool = False,
) -> List[RangePartition]:
    """
    Split an inclusive address range into ``n`` contiguous partitions.

    Args:
        start: First address of the range
        end: Last address of the range
        n: Number of workers
        first_octet: Cut only at first-octet boundaries (IPv4). Each
            partition takes the remaining octets divided by the remaining
            workers, rounded half up; 0-255 over 5 workers gives
            0-51, 52-103, 104-154, 155-205, 206-255.

    Returns:
        Partitions ordered by address, worker ids 0..n-1

    Raises:
        PartitionError: n < 1, n larger than the range, or an invalid range
    """
    low = ipaddress.ip_address(str(start))
    high = ipaddress.ip_address(str(end))
    if low.version != high.version or int(low) > int(high):
        raise PartitionError(f"invalid range {low} - {high}")
    if n < 1:
        raise PartitionError("worker count must be at least 1")

    if first_octet:
        return _partition_first_octet(low, high, n)

    size = int(high) - int(low) + 1
    if n > size:
        raise PartitionError(f"{n} workers exceed range size {size}")
    base, extra = divmod(size, n)
    factory = type(low)
    partitions = []
    cursor = int(low)
    for worker_id in range(n):
        length = base + (1 if worker_id < extra else 0)
        partitions.append(
            RangePartition(
                worker_id=worker_id,
                start=factory(cursor),
                end=factory(cursor + length - 1),
            )
        )
        cursor += length
    return partitions


def _partition_first_octet(
    low: IPAddress, high: IPAddress, n: int
) -> List[RangePartition]:
    if low.version != 4:
        raise PartitionError("first-octet partitioning is IPv4 only")
    first, last = low.packed[0], high.packed[0]
    octets = last - first + 1
    if n > octets:
        raise PartitionError(f"{n} workers exceed {octets} first octets")
    partitions = []
    cursor = first
    for worker_id in range(n):
        remaining_workers = n - worker_id
        stop = cursor + _round_half_up_div(last - cursor, remaining_workers)
        stop = min(stop, last - (remaining_workers - 1))
        partitions.append(
            RangePartition(
                worker_id=worker_id,
                start=max(low, ipaddress.IPv4Address(f"{cursor}.0.0.0")),
                end=min(high, ipaddress.IPv4Address(f"{stop}.255.255.255")),
            )
        )
        cursor = stop + 1
    return partitions


def _parse_target_line(
    text: str, line_number: int, default_port: int
) -> Tuple[IPAddress, int]:
    address_text, _, port_text = text.partition(",")
    address_text = address_text.strip().strip("[]")
    try:
        address = ipaddress.ip_address(address_text)
    except ValueError as exc:
        raise TargetFileError(f"invalid address {address_text!r}", line_number) from exc
    port = default_port
    if port_text.strip():
        try:
            port = int(port_text.strip())
        except ValueError as exc:
            raise TargetFileError(
                f"invalid port {port_text.strip()!r}", line_number
            ) from exc
        if not 1 <= port <= 65535:
            raise TargetFileError(f"port {port} out of range", line_number)
    return address, port


def ingest_targets(
    source: Union[str, Path],
    config: Optional[ScanConfig] = None,
    prober_config: Optional[ProberConfig] = None,
    default_port: int = 443,
) -> List[ProbeTarget]:
    """
    Read a candidate list: one ``ip`` or ``ip,port`` per line.

    Returns:
        Targets in file order, deduplicated, with excluded addresses removed

    Raises:
        TargetFileError: missing file or unparseable line
    """
    config = config or ScanConfig()
    prober_config = prober_config or ProberConfig()
    networks = exclusion_networks(config)
    try:
        lines = Path(source).read_text(encoding="utf-8").splitlines()
    except FileNotFoundError as exc:
        raise TargetFileError(f"target file not found: {source}") from exc

    targets: List[ProbeTarget] = []
    seen: Set[Tuple[IPAddress, int]] = set()
    dropped = 0
    for line_number, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        address, port = _parse_target_line(text, line_number, default_port)
        if (address, port) in seen:
            continue
        seen.add((address, port))
        if is_excluded(address, networks):
            dropped += 1
            continue
        targets.append(prober_config.target(address, port))
    if dropped:
        logger.info("dropped %d excluded targets from %s", dropped, source)
    return targets


class JsonlResultSink:
    """
    Appends scan records to a JSON-lines file from many workers.

    The results file exists from construction on, so an empty scan leaves
    an empty file. A checkpoint file next to it holds the highest index
    below which every target has completed.
    """

    def __init__(self, path: Union[str, Path], checkpoint_every: int = 1000) -> None:
        self.path = Path(path)
        self.checkpoint_path = Path(f"{self.path}.checkpoint")
        self.checkpoint_every = checkpoint_every
        self._lock = threading.Lock()
        try:
            self.path.touch(exist_ok=True)
        except OSError as exc:
            raise SinkWriteError(f"cannot create {self.path}: {exc}") from exc
        self._done: Set[int] = self.completed_indices()
        self._watermark = -1
        self._advance_watermark()
        self._since_checkpoint = 0

    def completed_indices(self) -> Set[int]:
        """Indices already present in the results file."""
        if not self.path.exists():
            return set()
        indices = set()
        with open(self.path, "r", encoding="utf-8") as handle:
            for line in handle:
                line = line.strip()
                if not line:
                    continue
                try:
                    indices.add(int(json.loads(line)["index"]))
                except (ValueError, KeyError, TypeError):
                    logger.warning("ignoring malformed line in %s", self.path)
        return indices

    @property
    def last_index(self) -> int:
        return self._watermark

    def _advance_watermark(self) -> None:
        while self._watermark + 1 in self._done:
            self._watermark += 1

    def write(self, record: ScanRecord) -> None:
        line = json.dumps(record.to_json_dict(), sort_keys=False)
        with self._lock:
            try:
                with open(self.path, "a", encoding="utf-8") as handle:
                    handle.write(line + "\n")
            except OSError as exc:
                raise SinkWriteError(f"cannot append to {self.path}: {exc}") from exc
            self._done.add(record.index)
            self._advance_watermark()
            self._since_checkpoint += 1
            if self._since_checkpoint >= self.checkpoint_every:
                self._write_checkpoint()

    def close(self) -> None:
        with self._lock:
            self._write_checkpoint()

    def _write_checkpoint(self) -> None:
        temporary = Path(f"{self.checkpoint_path}.tmp")
        try:
            temporary.write_text(
                json.dumps({"last_index": self._watermark}), encoding="utf-8"
            )
            os.replace(temporary, self.checkpoint_path)
        except OSError as exc:
            raise SinkWriteError(
                f"cannot write checkpoint {self.checkpoint_path}: {exc}"
            ) from exc
        self._since_checkpoint = 0


def read_checkpoint(path: Union[str, Path]) -> int:
    """Last contiguous completed index recorded for a results file, or -1."""
    checkpoint = Path(f"{path}.checkpoint")
    if not checkpoint.exists():
        return -1
    return int(json.loads(checkpoint.read_text(encoding="utf-8")).get("last_index", -1))


class ScanOrchestrator:
    """Runs the verification matrix over many targets with a bounded worker pool."""

    def __init__(
        self, config: Optional[ScanConfig] = None, prober: Optional[DohProber] = None
    ) -> None:
        self.config = config or ScanConfig()
        self.rate_limiter = RateLimiter(self.config.rate_limit)
        self.prober = prober or DohProber(
            ProberConfig(
                timeout_ms=self.config.timeout_ms,
                retries=self.config.retries,
                verify_certificates=self.config.verify_certificates,
                ca_file=self.config.ca_file,
            ),
            rate_limiter=self.rate_limiter,
        )
        self._exclusions = exclusion_networks(self.config)

    def run(
        self,
        targets: Sequence[ProbeTarget],
        sink: Optional[JsonlResultSink] = None,
        skip: Optional[Set[int]] = None,
    ) -> Iterator[ScanRecord]:
        """
        Verify every target, yielding records as workers finish.

        Args:
            targets: Endpoints in input order; record indices refer to it
            sink: Optional result sink, written before each record is yielded
            skip: Indices already completed in an earlier run

        Raises:
            ConsentRequiredError: more than one /24 without consent
            SinkWriteError: the sink failed; the scan is aborted
        """
        if not self.config.consent and requires_consent(targets):
            raise ConsentRequiredError(
                "targets span more than one /24; "
                "pass consent to confirm the scan is authorized"
            )
        skip = skip or set()
        pending_work: List[Tuple[int, ProbeTarget]] = []
        for index, target in enumerate(targets):
            if index in skip:
                continue
            if is_excluded(target.ip, self._exclusions):
                logger.warning("not probing excluded address %s", target.ip)
                continue
            pending_work.append((index, target))
        logger.info(
            "scanning %d targets (concurrency=%d, rate=%.1f/s)",
            len(pending_work),
            self.config.concurrency,
            self.config.rate_limit,
        )

        window = self.config.concurrency * 2
        work = iter(pending_work)
        executor = ThreadPoolExecutor(
            max_workers=self.config.concurrency, thread_name_prefix="scan"
        )
        in_flight: Dict[Future, Tuple[int, ProbeTarget]] = {}
        try:
            for index, target in work:
                submitted = executor.submit(self.prober.verify_endpoint, target)
                in_flight[submitted] = (index, target)
                if len(in_flight) >= window:
                    break
            while in_flight:
                done, _ = wait(in_flight, return_when=FIRST_COMPLETED)
                for future in done:
                    index, target = in_flight.pop(future)
                    record = ScanRecord(
                        index=index, target=target, matrix=future.result()
                    )
                    if sink is not None:
                        sink.write(record)
                    yield record
                    next_item = next(work, None)
                    if next_item is not None:
                        submitted = executor.submit(
                            self.prober.verify_endpoint, next_item[1]
                        )
                        in_flight[submitted] = next_item
        finally:
            executor.shutdown(wait=True, cancel_futures=True)
            if sink is not None:
                sink.close()


def run_scan(
    targets: Sequence[ProbeTarget],
    config: Optional[ScanConfig] = None,
    sink: Optional[JsonlResultSink] = None,
) -> Iterator[ScanRecord]:
    """Stream one ScanRecord per target; see ``ScanOrchestrator.run``."""
    return ScanOrchestrator(config).run(targets, sink=sink)


def scan_to_file(
    targets: Sequence[ProbeTarget],
    results_path: Union[str, Path],
    config: Optional[ScanConfig] = None,
    resume: bool = True,
) -> int:
    """
    Scan into a JSON-lines file, resuming past indices it already holds.

    Returns:
        Number of records written in this run
    """
    config = config or ScanConfig()
    if not resume:
        for stale in (Path(results_path), Path(f"{results_path}.checkpoint")):
            stale.unlink(missing_ok=True)
    sink = JsonlResultSink(results_path, checkpoint_every=config.checkpoint_every)
    skip = sink.completed_indices() if resume else set()
    if skip:
        logger.info("resuming: %d targets already in %s", len(skip), results_path)
    written = 0
    for _ in ScanOrchestrator(config).run(targets, sink=sink, skip=skip):
        written += 1
    return written


def load_scan_records(path: Union[str, Path]) -> List[ScanRecord]:
    """Read a results file, ordered by index."""
    records = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                records.append(ScanRecord.from_json_dict(json.loads(line)))
    return sorted(records, key=lambda record: record.index)
