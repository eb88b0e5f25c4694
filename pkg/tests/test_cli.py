import json

import pandas as pd
import pytest
from click.testing import CliRunner

from encdns_census import __version__
from encdns_census.analyzer import (
    daily_counts_to_frame,
    load_daily_counts,
    save_daily_counts,
)
from encdns_census.cli import main
from encdns_census.models import (
    DailyCounts,
    ProbeTarget,
    ScanRecord,
    VerificationMatrix,
)
from encdns_census.resolver_intel import bundled_major_providers, summarize_catalog
from encdns_census.synthetic import (
    LOCAL_PREFIX,
    OFFICIAL_RESOLVER,
    PROVIDER_SNI,
    PROVIDER_SUFFIX,
    planted_flows,
)

LABELS = ["DoH-JSON", "DoH-GET", "DoH-POST", "DoH2-JSON", "DoH2-GET", "DoH2-POST"]


@pytest.fixture
def runner():
    return CliRunner()


def write_results(path, matrices):
    lines = [
        json.dumps(
            ScanRecord(
                index=i, target=ProbeTarget(ip=f"192.0.2.{i + 1}"), matrix=m
            ).to_json_dict()
        )
        for i, m in enumerate(matrices)
    ]
    path.write_text("\n".join(lines) + "\n")


def test_version(runner):
    result = runner.invoke(main, ["--version"])
    assert result.exit_code == 0
    assert __version__ in result.output


def test_unknown_option_exits_1(runner):
    result = runner.invoke(main, ["partition", "10.0.0.0", "10.0.0.9", "--bogus"])
    assert result.exit_code == 1
    assert "No such option" in result.output


def test_missing_file_exits_1(runner, tmp_path):
    result = runner.invoke(
        main,
        ["analyze", str(tmp_path / "missing.csv"), "-o", str(tmp_path / "out.csv")],
    )
    assert result.exit_code == 1


# --------------------------------------------------------------------------
# verify / scan / partition
# --------------------------------------------------------------------------


def test_verify_against_mock(runner, make_mock):
    mock = make_mock(supported=["DoH-GET", "DoH2-GET", "DoH2-POST"])
    port = mock.endpoint.doh_port
    result = runner.invoke(
        main,
        [
            "verify",
            "127.0.0.1",
            "--port",
            str(port),
            "--timeout-ms",
            "2000",
            "--dot-port",
            str(mock.endpoint.dot_port),
        ],
    )
    assert result.exit_code == 0, result.output
    assert result.output.splitlines() == [
        f"127.0.0.1:{port}",
        "| dns-doh-check:",
        "|   DoH-JSON: false",
        "|   DoH-GET: true",
        "|   DoH-POST: false",
        "|   DoH2-JSON: false",
        "|   DoH2-GET: true",
        "|   DoH2-POST: true",
        "|   DoT: true",
    ]


def test_verify_json(runner, mock_resolver):
    result = runner.invoke(
        main,
        [
            "verify",
            "127.0.0.1",
            "--port",
            str(mock_resolver.endpoint.doh_port),
            "--format",
            "json",
        ],
    )
    assert result.exit_code == 0, result.output
    payload = json.loads(result.output)
    assert all(payload[label] for label in LABELS)
    assert payload["certificate_verified"] is False


def test_verify_rejects_bad_address(runner):
    result = runner.invoke(main, ["verify", "not-an-address"])
    assert result.exit_code == 1
    assert "Error" in result.output


def test_scan_writes_results(runner, make_mock, tmp_path):
    mock = make_mock(dot_enabled=False)
    targets = tmp_path / "targets.txt"
    targets.write_text(f"127.0.0.1,{mock.endpoint.doh_port}\n")
    results = tmp_path / "results.jsonl"
    result = runner.invoke(
        main,
        [
            "scan",
            str(targets),
            "-o",
            str(results),
            "--include-reserved",
            "--timeout-ms",
            "2000",
        ],
    )
    assert result.exit_code == 0, result.output
    line = json.loads(results.read_text().splitlines()[0])
    assert all(line[label] for label in LABELS)
    assert "DoH resolvers found: 1 of 1" in result.output


def test_scan_skips_reserved_by_default(runner, make_mock, tmp_path):
    mock = make_mock(dot_enabled=False)
    targets = tmp_path / "targets.txt"
    targets.write_text(f"127.0.0.1,{mock.endpoint.doh_port}\n")
    result = runner.invoke(
        main, ["scan", str(targets), "-o", str(tmp_path / "results.jsonl")]
    )
    assert result.exit_code == 0, result.output
    assert "Scanning 0 targets" in result.output
    assert mock.connection_log() == []


def test_scan_without_consent_exits_1(runner, tmp_path):
    targets = tmp_path / "targets.txt"
    targets.write_text("127.0.0.1,9\n127.0.1.1,9\n")
    result = runner.invoke(
        main,
        ["scan", str(targets), "-o", str(tmp_path / "r.jsonl"), "--include-reserved"],
    )
    assert result.exit_code == 1
    assert "consent" in result.output


def test_scan_bad_target_line_exits_1(runner, tmp_path):
    targets = tmp_path / "targets.txt"
    targets.write_text("1.1.1.1\nbogus\n")
    result = runner.invoke(
        main, ["scan", str(targets), "-o", str(tmp_path / "r.jsonl")]
    )
    assert result.exit_code == 1
    assert "line 2" in result.output


def test_partition_first_octet(runner):
    result = runner.invoke(
        main,
        [
            "partition",
            "0.0.0.0",
            "255.255.255.255",
            "-n",
            "5",
            "--first-octet",
            "--format",
            "csv",
        ],
    )
    assert result.exit_code == 0
    rows = [line.split(",") for line in result.output.splitlines()[1:]]
    assert [(row[1], row[2]) for row in rows] == [
        ("0.0.0.0", "51.255.255.255"),
        ("52.0.0.0", "103.255.255.255"),
        ("104.0.0.0", "154.255.255.255"),
        ("155.0.0.0", "205.255.255.255"),
        ("206.0.0.0", "255.255.255.255"),
    ]


def test_partition_too_many_workers(runner):
    result = runner.invoke(main, ["partition", "10.0.0.0", "10.0.0.3", "-n", "5"])
    assert result.exit_code == 1


# --------------------------------------------------------------------------
# analyze / stats
# --------------------------------------------------------------------------


def test_analyze_reproduces_planted_counts(runner, tmp_path):
    flows, expected = planted_flows(seed=5, days=10)
    flow_file = tmp_path / "flows.csv"
    flows.to_csv(flow_file, index=False)
    providers = tmp_path / "providers.csv"
    providers.write_text(
        f"ip,hostname,version,asn,source\n1.1.1.1,{PROVIDER_SNI},4,13335,test\n"
    )
    daily = tmp_path / "daily.csv"
    ratios = tmp_path / "ratios.csv"
    args = [
        "analyze", str(flow_file), "-o", str(daily), "--providers", str(providers),
        "--sni-suffix", PROVIDER_SUFFIX, "--official-resolver", OFFICIAL_RESOLVER,
        "--local-prefix", LOCAL_PREFIX, "--ratios", str(ratios), "--chunk-size", "5000",
    ]
    result = runner.invoke(main, args)
    assert result.exit_code == 0, result.output
    pd.testing.assert_frame_equal(
        load_daily_counts(daily), daily_counts_to_frame(expected)
    )
    assert len(pd.read_csv(ratios)) == 10
    assert "TRAFFIC SUMMARY" in result.output

    first = daily.read_bytes()
    assert runner.invoke(main, args).exit_code == 0
    assert daily.read_bytes() == first


def test_analyze_bad_row_exits_1(runner, tmp_path):
    flow_file = tmp_path / "flows.csv"
    flow_file.write_text(
        "ts,src_ip,dst_ip,proto,src_port,dst_port\n"
        "2021-01-01T00:00:00Z,x,1.1.1.1,TCP,1,443\n"
    )
    result = runner.invoke(
        main, ["analyze", str(flow_file), "-o", str(tmp_path / "d.csv")]
    )
    assert result.exit_code == 1
    assert "row 2" in result.output


@pytest.fixture
def daily_file(tmp_path):
    _, counts = planted_flows(seed=9, days=45)
    path = tmp_path / "daily.csv"
    save_daily_counts(counts, path)
    return path


def test_stats_json(runner, daily_file):
    result = runner.invoke(
        main,
        [
            "stats",
            str(daily_file),
            "-s",
            "doh",
            "-s",
            "dns",
            "--max-lag",
            "2",
            "--format",
            "json",
        ],
    )
    assert result.exit_code == 0, result.output
    payload = json.loads(result.output)
    assert payload["source"] == "daily.csv"
    assert [row["value"] for row in payload["rows"]] == ["doh", "dns"]
    assert all(
        row["conclusion"] in ("Stationary", "Non-Stationary") for row in payload["rows"]
    )


def test_stats_text_and_output_file(runner, daily_file, tmp_path):
    out = tmp_path / "stats.txt"
    result = runner.invoke(
        main, ["stats", str(daily_file), "--ratios", "--max-lag", "2", "-o", str(out)]
    )
    assert result.exit_code == 0, result.output
    text = out.read_text()
    assert text.startswith("Augmented Dickey-Fuller test for stationarity\n")
    assert "doh_per_million_flows" in text


@pytest.fixture
def constant_daily_file(tmp_path):
    counts = [
        DailyCounts(
            date=f"2021-01-{day:02d}", doh=5, port443=5, total=100, unique_src_ips=3
        )
        for day in range(1, 31)
    ]
    path = tmp_path / "daily.csv"
    save_daily_counts(counts, path)
    return path


def test_stats_on_constant_series_exits_2(runner, constant_daily_file):
    result = runner.invoke(main, ["stats", str(constant_daily_file), "--series", "doh"])
    assert result.exit_code == 2
    assert "constant" in result.output


def test_stats_notes_constant_series_without_series_option(runner, constant_daily_file):
    result = runner.invoke(
        main, ["stats", str(constant_daily_file), "--format", "json"]
    )
    assert result.exit_code == 0, result.output
    rows = {row["value"]: row for row in json.loads(result.output)["rows"]}
    assert rows["doh"]["conclusion"] is None
    assert "constant" in rows["doh"]["note"]


def test_stats_unknown_series_exits_1(runner, daily_file):
    result = runner.invoke(main, ["stats", str(daily_file), "--series", "nope"])
    assert result.exit_code == 1
    assert "unknown series" in result.output


# --------------------------------------------------------------------------
# catalog / enrich / report
# --------------------------------------------------------------------------


def test_catalog_bundled_json(runner):
    result = runner.invoke(main, ["catalog", "--format", "json"])
    assert result.exit_code == 0, result.output
    summary = summarize_catalog(bundled_major_providers())
    rows = json.loads(result.output)["tables"][0]["rows"]
    assert rows[0]["cells"][0]["count"] == summary.total
    assert rows[1]["cells"][0]["count"] == summary.ipv4_count


def test_catalog_merge_writes_file(runner, tmp_path):
    extra = tmp_path / "extra.csv"
    extra.write_text("ip,hostname,version,asn,source\n192.0.2.1,doh.example.net,4,,\n")
    merged = tmp_path / "merged.csv"
    result = runner.invoke(
        main,
        [
            "catalog",
            str(extra),
            "--no-bundled",
            "--merged",
            str(merged),
            "--format",
            "csv",
        ],
    )
    assert result.exit_code == 0, result.output
    assert "192.0.2.1,doh.example.net,4,,extra" in merged.read_text()


def test_catalog_bad_file_exits_1(runner, tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("ip\n1.1.1.1\n")
    assert runner.invoke(main, ["catalog", str(bad)]).exit_code == 1


def test_enrich_and_report(runner, tmp_path):
    results = tmp_path / "results.jsonl"
    write_results(
        results,
        [
            VerificationMatrix(doh_get=True, doh_post=True),
            VerificationMatrix(doh2_get=True),
            VerificationMatrix(),
        ],
    )
    ptr = tmp_path / "ptr.csv"
    ptr.write_text("ip,hostname\n192.0.2.1,doh.alpha.com\n")
    resolvers = tmp_path / "resolvers.jsonl"
    result = runner.invoke(
        main, ["enrich", str(results), "-o", str(resolvers), "--ptr-snapshot", str(ptr)]
    )
    assert result.exit_code == 0, result.output
    assert len(resolvers.read_text().splitlines()) == 2

    result = runner.invoke(
        main,
        ["report", str(results), "--resolvers", str(resolvers), "--format", "json"],
    )
    assert result.exit_code == 0, result.output
    tables = {table["title"]: table for table in json.loads(result.output)["tables"]}
    versions = {
        row["label"]: row["cells"][0]["count"]
        for row in tables["Supported HTTP versions by the resolvers found"]["rows"]
    }
    assert versions == {"Only HTTP/1": 1, "Only HTTP/2": 1, "Both": 0}
    grouping = {
        row["label"]: row["cells"][0]["count"]
        for row in tables["Analysis of the discovered resolvers"]["rows"]
    }
    assert grouping["Assumed number of unique providers"] == 2
    assert grouping["Discovered well-known resolvers"] == 0


def test_report_html_with_stats(runner, tmp_path, daily_file):
    results = tmp_path / "results.jsonl"
    write_results(results, [VerificationMatrix(doh_json=True, doh2_json=True)])
    stats_json = tmp_path / "stats.json"
    stats_args = [
        "stats",
        str(daily_file),
        "--max-lag",
        "2",
        "--format",
        "json",
        "-o",
        str(stats_json),
    ]
    assert runner.invoke(main, stats_args).exit_code == 0
    out = tmp_path / "report.html"
    result = runner.invoke(
        main,
        [
            "report",
            str(results),
            "--stats",
            str(stats_json),
            "--format",
            "html",
            "-o",
            str(out),
        ],
    )
    assert result.exit_code == 0, result.output
    html = out.read_text()
    assert "Encrypted DNS resolver census" in html
    assert "Augmented Dickey-Fuller test for stationarity" in html


def test_report_without_resolvers_says_no_data(runner, tmp_path):
    results = tmp_path / "results.jsonl"
    write_results(results, [VerificationMatrix()])
    result = runner.invoke(main, ["report", str(results)])
    assert result.exit_code == 0
    assert result.output.count("(no data)") == 2
