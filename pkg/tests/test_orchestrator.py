import ipaddress
import json
import shutil

import pytest

from encdns_census.exceptions import (
    ConsentRequiredError,
    PartitionError,
    SinkWriteError,
    TargetFileError,
)
from encdns_census.models import ProbeTarget, ScanConfig
from encdns_census.orchestrator import (
    JsonlResultSink,
    RateLimiter,
    ingest_targets,
    load_exclusions,
    load_scan_records,
    partition_ranges,
    read_checkpoint,
    requires_consent,
    run_scan,
    scan_to_file,
)

LOOPBACK_CONFIG = dict(exclude_reserved=False, timeout_ms=2000, rate_limit=1000.0)


# --------------------------------------------------------------------------
# Partitioning
# --------------------------------------------------------------------------


@pytest.mark.parametrize("size", [1, 2, 3, 7, 16, 255, 256, 1000, 4097, 65536])
def test_partitions_are_a_disjoint_contiguous_cover(size):
    start = ipaddress.IPv4Address("10.0.0.0")
    end = start + (size - 1)
    for n in range(1, min(16, size) + 1):
        partitions = partition_ranges(start, end, n)
        assert [p.worker_id for p in partitions] == list(range(n))
        assert partitions[0].start == start
        assert partitions[-1].end == end
        for before, after in zip(partitions, partitions[1:]):
            assert int(after.start) == int(before.end) + 1
        sizes = [p.size for p in partitions]
        assert sum(sizes) == size
        assert max(sizes) - min(sizes) <= 1


def test_ipv6_partition():
    partitions = partition_ranges("2001:db8::", "2001:db8::ff", 4)
    assert [str(p.start) for p in partitions] == [
        "2001:db8::",
        "2001:db8::40",
        "2001:db8::80",
        "2001:db8::c0",
    ]


def test_first_octet_partition_of_ipv4_space():
    partitions = partition_ranges("0.0.0.0", "255.255.255.255", 5, first_octet=True)
    bounds = [(p.start.packed[0], p.end.packed[0]) for p in partitions]
    assert bounds == [(0, 51), (52, 103), (104, 154), (155, 205), (206, 255)]
    assert str(partitions[-1].end) == "255.255.255.255"


@pytest.mark.parametrize("n", range(1, 17))
def test_first_octet_partitions_cover_every_octet(n):
    partitions = partition_ranges("1.0.0.0", "223.255.255.255", n, first_octet=True)
    octets = [
        octet
        for p in partitions
        for octet in range(p.start.packed[0], p.end.packed[0] + 1)
    ]
    assert octets == list(range(1, 224))


@pytest.mark.parametrize(
    "start, end, n",
    [
        ("10.0.0.5", "10.0.0.1", 2),
        ("10.0.0.0", "10.0.0.3", 5),
        ("10.0.0.0", "10.0.0.3", 0),
        ("10.0.0.0", "2001:db8::1", 2),
    ],
)
def test_invalid_partitions(start, end, n):
    with pytest.raises(PartitionError):
        partition_ranges(start, end, n)


# --------------------------------------------------------------------------
# Target ingestion
# --------------------------------------------------------------------------


def test_ingest_targets(tmp_path):
    source = tmp_path / "targets.txt"
    source.write_text(
        "# candidates\n"
        "1.1.1.1\n"
        "8.8.8.8,8443   # alternate port\n"
        "1.1.1.1\n"
        "\n"
        "2606:4700:4700::1111\n"
        "[2001:4860:4860::8888],443\n"
        "10.1.2.3\n"
        "192.168.0.1,853\n"
    )
    targets = ingest_targets(source)
    assert [(str(t.ip), t.port) for t in targets] == [
        ("1.1.1.1", 443),
        ("8.8.8.8", 8443),
        ("2606:4700:4700::1111", 443),
        ("2001:4860:4860::8888", 443),
    ]


def test_ingest_applies_exclusion_list(tmp_path):
    source = tmp_path / "targets.txt"
    source.write_text("9.9.9.9\n9.9.9.10\n149.112.112.112\n")
    excludes = tmp_path / "exclude.txt"
    excludes.write_text("9.9.9.0/24  # do not contact\n")
    config = ScanConfig(exclusions=load_exclusions(excludes))
    assert [str(t.ip) for t in ingest_targets(source, config)] == ["149.112.112.112"]


@pytest.mark.parametrize(
    "line", ["not-an-ip", "1.1.1.1,http", "1.1.1.1,70000", "300.1.1.1"]
)
def test_ingest_reports_bad_line_number(tmp_path, line):
    source = tmp_path / "targets.txt"
    source.write_text(f"1.1.1.1\n{line}\n")
    with pytest.raises(TargetFileError) as excinfo:
        ingest_targets(source)
    assert excinfo.value.line_number == 2


def test_ingest_missing_file(tmp_path):
    with pytest.raises(TargetFileError):
        ingest_targets(tmp_path / "missing.txt")


def test_bad_exclusion_line(tmp_path):
    excludes = tmp_path / "exclude.txt"
    excludes.write_text("10.0.0.0/8\nnonsense\n")
    with pytest.raises(TargetFileError, match="line 2"):
        load_exclusions(excludes)


# --------------------------------------------------------------------------
# Rate limiting
# --------------------------------------------------------------------------


class FakeClock:
    def __init__(self):
        self.now = 100.0

    def __call__(self):
        return self.now

    def sleep(self, seconds):
        self.now += seconds


def test_rate_limiter_spaces_slots_evenly():
    clock = FakeClock()
    limiter = RateLimiter(10.0, clock=clock, sleep=clock.sleep)
    times = []
    for _ in range(21):
        limiter.acquire()
        times.append(clock.now)
    assert times[-1] - times[0] == pytest.approx(2.0)


def test_rate_limiter_does_not_bank_idle_time():
    clock = FakeClock()
    limiter = RateLimiter(2.0, clock=clock, sleep=clock.sleep)
    limiter.acquire()
    clock.now += 10
    limiter.acquire()
    start = clock.now
    limiter.acquire()
    assert clock.now - start == pytest.approx(0.5)


def test_rate_limiter_rejects_non_positive_rate():
    with pytest.raises(ValueError):
        RateLimiter(0)


def test_measured_connection_rate_within_limit(make_mock):
    mocks = [make_mock(dot_enabled=False) for _ in range(3)]
    targets = [mock.doh_target() for mock in mocks]
    config = ScanConfig(**{**LOOPBACK_CONFIG, "rate_limit": 30.0, "concurrency": 3})
    records = list(run_scan(targets, config))
    assert len(records) == 3

    stamps = sorted(
        event.timestamp for mock in mocks for event in mock.connection_log()
    )
    assert len(stamps) == 18
    measured = (len(stamps) - 1) / (stamps[-1] - stamps[0])
    assert measured <= 30.0 * 1.2


# --------------------------------------------------------------------------
# Scanning
# --------------------------------------------------------------------------


def test_scan_yields_one_record_per_target(make_mock):
    mock = make_mock(supported=["DoH-GET", "DoH2-POST"], dot_enabled=False)
    targets = [mock.doh_target() for _ in range(10)]
    config = ScanConfig(**{**LOOPBACK_CONFIG, "concurrency": 4, "retries": 0})
    records = list(run_scan(targets, config))
    assert sorted(record.index for record in records) == list(range(10))
    assert all(record.matrix.doh_get and record.matrix.doh2_post for record in records)
    assert all(not record.matrix.doh_json for record in records)
    assert len(mock.connection_log()) == 10 * 6


def test_excluded_addresses_are_never_contacted(make_mock, tmp_path):
    allowed = make_mock(host="127.0.0.2", dot_enabled=False)
    excluded = make_mock(host="127.0.0.3", dot_enabled=False)
    config = ScanConfig(**LOOPBACK_CONFIG, exclusions=["127.0.0.3/32"])

    direct = list(run_scan([allowed.doh_target(), excluded.doh_target()], config))
    assert [str(record.target.ip) for record in direct] == ["127.0.0.2"]

    source = tmp_path / "targets.txt"
    source.write_text(
        f"127.0.0.2,{allowed.endpoint.doh_port}\n"
        f"127.0.0.3,{excluded.endpoint.doh_port}\n"
    )
    assert [str(t.ip) for t in ingest_targets(source, config)] == ["127.0.0.2"]

    assert excluded.connection_log() == []
    assert len(allowed.connection_log()) == 6


def test_reserved_ranges_are_excluded_by_default(make_mock):
    mock = make_mock(dot_enabled=False)
    records = list(run_scan([mock.doh_target()], ScanConfig(timeout_ms=1000)))
    assert records == []
    assert mock.connection_log() == []


def test_consent_required_for_more_than_one_prefix():
    targets = [
        ProbeTarget(ip="127.0.0.1", port=1),
        ProbeTarget(ip="127.0.1.1", port=1),
    ]
    assert requires_consent(targets)
    assert not requires_consent(targets[:1])
    with pytest.raises(ConsentRequiredError):
        list(run_scan(targets, ScanConfig(**LOOPBACK_CONFIG)))


def test_scan_to_file_checkpoints_and_resumes(make_mock, tmp_path):
    mock = make_mock(dot_enabled=False)
    targets = [mock.doh_target() for _ in range(5)]
    results = tmp_path / "results.jsonl"
    config = ScanConfig(**LOOPBACK_CONFIG, checkpoint_every=2)

    assert scan_to_file(targets, results, config) == 5
    assert read_checkpoint(results) == 4
    records = load_scan_records(results)
    assert [record.index for record in records] == list(range(5))
    assert all(record.matrix.any_supported for record in records)

    mock.clear_log()
    assert scan_to_file(targets, results, config) == 0
    assert mock.connection_log() == []

    lines = results.read_text().splitlines()
    kept = [line for line in lines if json.loads(line)["index"] in (0, 1, 3)]
    results.write_text("\n".join(kept) + "\n")
    assert scan_to_file(targets, results, config) == 2
    assert read_checkpoint(results) == 4
    assert len(mock.connection_log()) == 2 * 6

    assert scan_to_file(targets, results, config, resume=False) == 5
    assert len(results.read_text().splitlines()) == 5


def test_result_lines_use_method_labels(make_mock, tmp_path):
    mock = make_mock(dot_enabled=False)
    results = tmp_path / "results.jsonl"
    scan_to_file(
        [mock.doh_target(sni="localhost")], results, ScanConfig(**LOOPBACK_CONFIG)
    )
    line = json.loads(results.read_text().splitlines()[0])
    assert line["index"] == 0
    assert line["ip"] == "127.0.0.1"
    assert line["sni"] == "localhost"
    assert line["DoH-JSON"] is True and line["DoH2-POST"] is True


def test_sink_in_missing_directory_fails_early(tmp_path):
    with pytest.raises(SinkWriteError):
        JsonlResultSink(tmp_path / "missing-dir" / "results.jsonl")


def test_sink_write_failure_aborts_scan(make_mock, tmp_path):
    mock = make_mock(dot_enabled=False)
    out_dir = tmp_path / "out"
    out_dir.mkdir()
    sink = JsonlResultSink(out_dir / "results.jsonl")
    shutil.rmtree(out_dir)
    with pytest.raises(SinkWriteError):
        list(run_scan([mock.doh_target()], ScanConfig(**LOOPBACK_CONFIG), sink=sink))


def test_empty_scan_leaves_empty_results_file(tmp_path):
    results = tmp_path / "results.jsonl"
    assert scan_to_file([], results, ScanConfig(**LOOPBACK_CONFIG)) == 0
    assert results.read_text() == ""
    assert load_scan_records(results) == []
    assert read_checkpoint(results) == -1


def test_checkpoint_missing_is_minus_one(tmp_path):
    assert read_checkpoint(tmp_path / "results.jsonl") == -1
