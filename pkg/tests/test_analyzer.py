import json
from datetime import date

import pandas as pd
import pytest
from pandas.testing import assert_frame_equal

from encdns_census.analyzer import (
    REQUIRED_FLOW_COLUMNS,
    DailyAccumulator,
    FlowAnalyzer,
    aggregate_daily,
    classify,
    classify_frame,
    compute_ratios,
    daily_counts_to_frame,
    load_daily_counts,
    per_capita_rate,
    prepare_flows,
    ratio_per_million,
    save_daily_counts,
)
from encdns_census.exceptions import FlowInputError, UndefinedRatioError
from encdns_census.models import ClassifierConfig, DailyCounts, FlowCategory, FlowRecord
from encdns_census.synthetic import (
    LOCAL_PREFIX,
    OFFICIAL_RESOLVER,
    PROVIDER_SNI,
    PROVIDER_SUFFIX,
    fixture_classifier,
    planted_flows,
)


def flow(
    dst_ip,
    dst_port,
    proto="TCP",
    tls=True,
    sni=None,
    src_ip="10.1.0.1",
    ts="2021-02-01T12:00:00Z",
):
    return FlowRecord(
        ts=ts,
        src_ip=src_ip,
        dst_ip=dst_ip,
        proto=proto,
        src_port=50000,
        dst_port=dst_port,
        tls_established=tls,
        sni=sni,
    )


def records_of(frame):
    return [FlowRecord(**row) for row in json.loads(frame.to_json(orient="records"))]


@pytest.fixture(scope="module")
def planted():
    return planted_flows(seed=7, days=30)


@pytest.fixture
def cfg():
    return fixture_classifier()


# --------------------------------------------------------------------------
# Classification
# --------------------------------------------------------------------------


@pytest.mark.parametrize(
    "record, category",
    [
        (flow("1.1.1.1", 443), FlowCategory.DOH),
        (flow("104.16.0.1", 443, sni="Cloudflare-DNS.com."), FlowCategory.DOH),
        (flow("142.250.1.1", 443, sni="doh.dns.google"), FlowCategory.DOH),
        (flow("142.250.1.1", 443, sni="dns.google"), FlowCategory.OTHER),
        (flow("1.1.1.1", 443, tls=False), FlowCategory.OTHER),
        (flow("1.1.1.1", 443, tls=None), FlowCategory.DOH),
        (flow("1.1.1.1", 443, proto="UDP", tls=None), FlowCategory.OTHER),
        (flow("9.9.9.9", 853), FlowCategory.DOT),
        (flow("94.140.14.14", 784, proto="UDP", tls=None), FlowCategory.DOQ),
        (flow("94.140.14.14", 784, proto="TCP"), FlowCategory.OTHER),
        (flow("8.8.8.8", 53, proto="UDP", tls=None), FlowCategory.DNS),
        (flow("8.8.8.8", 53, proto="TCP", tls=None), FlowCategory.DNS),
        (flow(OFFICIAL_RESOLVER, 53, proto="UDP", tls=None), FlowCategory.OTHER),
        (flow("93.184.216.34", 443, sni="www.example.org"), FlowCategory.OTHER),
    ],
)
def test_classify(cfg, record, category):
    assert classify(record, cfg) == category


def test_classifier_needs_a_provider():
    with pytest.raises(ValueError):
        ClassifierConfig(official_resolvers={OFFICIAL_RESOLVER})


def test_suffix_entries_are_normalized():
    config = ClassifierConfig(sni_suffixes=["*.Example.COM", "dns.test."])
    assert config.sni_suffixes == {".example.com", ".dns.test"}
    assert config.sni_matches("doh.example.com")
    assert not config.sni_matches("example.com")
    assert not config.sni_matches(None)


def test_classify_frame_agrees_with_classify(planted, cfg):
    flows, _ = planted
    sample = flows.iloc[:3000]
    expected = [classify(record, cfg).value for record in records_of(sample)]
    assert classify_frame(prepare_flows(sample), cfg).tolist() == expected


def test_classify_frame_empty(cfg):
    empty = prepare_flows(pd.DataFrame(columns=REQUIRED_FLOW_COLUMNS))
    assert classify_frame(empty, cfg).empty


# --------------------------------------------------------------------------
# Aggregation
# --------------------------------------------------------------------------


def test_two_day_planted_counts():
    config = ClassifierConfig(provider_ips={"1.1.1.1"})
    flows = []
    for day in ("2021-03-01", "2021-03-02"):
        ts = f"{day}T08:00:00Z"
        flows += [flow("1.1.1.1", 443, ts=ts) for _ in range(5)]
        flows += [flow("9.9.9.9", 853, ts=ts) for _ in range(3)]
        flows += [flow("8.8.8.8", 53, proto="UDP", tls=None, ts=ts) for _ in range(2)]
    counts = aggregate_daily(flows, config)
    assert [c.date for c in counts] == [date(2021, 3, 1), date(2021, 3, 2)]
    for c in counts:
        assert (c.doh, c.dot, c.doq, c.dns, c.total) == (5, 3, 0, 2, 10)
        assert c.tls_established == 8
        assert c.port443 == 5
        assert c.unique_src_ips == 1


def test_empty_input():
    assert aggregate_daily([], fixture_classifier()) == []


def test_unique_sources_mix_address_families():
    config = ClassifierConfig(provider_ips={"1.1.1.1"})
    flows = [
        flow("1.1.1.1", 443, src_ip="192.0.2.1"),
        flow("1.1.1.1", 443, src_ip="192.0.2.1"),
        flow("1.1.1.1", 443, src_ip="192.0.2.2"),
        flow("1.1.1.1", 443, src_ip="2001:db8::1"),
    ]
    assert aggregate_daily(flows, config)[0].unique_src_ips == 3


def test_utc_day_boundaries(cfg):
    flows = [
        flow("1.1.1.1", 443, ts="2021-02-01T23:30:00-02:00"),
        flow("1.1.1.1", 443, ts="2021-02-01T23:30:00Z"),
    ]
    counts = aggregate_daily(flows, cfg)
    assert [(c.date, c.doh) for c in counts] == [
        (date(2021, 2, 1), 1),
        (date(2021, 2, 2), 1),
    ]


def test_planted_fixture_counts_exactly(planted, cfg, tmp_path):
    flows, expected = planted
    path = tmp_path / "flows.csv"
    flows.to_csv(path, index=False)
    assert FlowAnalyzer(cfg).analyze_file(path) == expected
    assert FlowAnalyzer(cfg, chunk_size=997).analyze_file(path) == expected


def test_planted_fixture_from_parquet(planted, cfg, tmp_path):
    flows, expected = planted
    path = tmp_path / "flows.parquet"
    flows.to_parquet(path, index=False)
    assert FlowAnalyzer(cfg).analyze_file(path) == expected


def test_foreign_sources_are_dropped(planted, cfg):
    flows, expected = planted
    counted = DailyAccumulator()
    counted.add_frame(prepare_flows(flows), cfg)
    assert counted.to_daily_counts() == expected

    open_config = cfg.model_copy(update={"local_prefixes": []})
    everything = DailyAccumulator()
    everything.add_frame(prepare_flows(flows), open_config)
    widened = sum(c.doh for c in everything.to_daily_counts())
    assert widened > sum(c.doh for c in expected)


def test_aggregation_ignores_order(planted, cfg):
    flows, expected = planted
    prepared = prepare_flows(flows)
    for seed in (1, 2):
        accumulator = DailyAccumulator()
        accumulator.add_frame(prepared.sample(frac=1.0, random_state=seed), cfg)
        assert accumulator.to_daily_counts() == expected


def test_partial_aggregates_merge(planted, cfg):
    flows, expected = planted
    prepared = prepare_flows(flows)
    halves = [DailyAccumulator(), DailyAccumulator()]
    halves[0].add_frame(prepared.iloc[::2], cfg)
    halves[1].add_frame(prepared.iloc[1::2], cfg)
    merged = DailyAccumulator().merge(halves[1]).merge(halves[0])
    assert merged.to_daily_counts() == expected


def test_outage_days_are_zero_rows(cfg):
    flows, expected = planted_flows(seed=3, days=6, outage_days=(2, 3))
    analyzer = DailyAccumulator()
    analyzer.add_frame(prepare_flows(flows), cfg)
    counts = analyzer.to_daily_counts()
    assert counts == expected
    assert [c.total for c in counts[2:4]] == [0, 0]


def test_more_providers_never_lower_doh(planted):
    flows, _ = planted
    prepared = prepare_flows(flows)
    narrow = ClassifierConfig(sni_names={PROVIDER_SNI}, local_prefixes=[LOCAL_PREFIX])
    wide = narrow.model_copy(update={"sni_suffixes": {f".{PROVIDER_SUFFIX}"}})
    counts = []
    for config in (narrow, wide, fixture_classifier()):
        accumulator = DailyAccumulator()
        accumulator.add_frame(prepared, config)
        counts.append([c.doh for c in accumulator.to_daily_counts()])
    for smaller, larger in zip(counts, counts[1:]):
        assert all(a <= b for a, b in zip(smaller, larger))
    assert sum(counts[0]) < sum(counts[2])


def test_categories_never_exceed_total(planted):
    _, expected = planted
    for c in expected:
        assert c.doh + c.dot + c.doq + c.dns <= c.total
        assert c.doh <= c.port443


def test_daily_counts_invariant():
    with pytest.raises(ValueError):
        DailyCounts(date=date(2021, 1, 1), doh=5, port443=4, total=10)


# --------------------------------------------------------------------------
# Input errors
# --------------------------------------------------------------------------


def write_flows(path, rows):
    header = "ts,src_ip,dst_ip,proto,src_port,dst_port,tls_established,sni\n"
    path.write_text(header + "".join(row + "\n" for row in rows))


GOOD_ROW = "2021-02-01T00:00:00Z,10.1.0.1,1.1.1.1,TCP,5000,443,true,"


@pytest.mark.parametrize(
    "bad_row",
    [
        "2021-02-01T00:00:00Z,10.1.0.1,1.1.1.1,TCP,5000,http,true,",
        "2021-02-01T00:00:00Z,10.1.0.1,1.1.1.1,TCP,5000,70000,true,",
        "2021-02-01T00:00:00Z,10.1.0.999,1.1.1.1,TCP,5000,443,true,",
        "2021-02-01T00:00:00Z,10.1.0.1,1.1.1.1,SCTP,5000,443,true,",
    ],
)
@pytest.mark.parametrize("chunk_size", [2, 100])
def test_bad_flow_row_is_reported(tmp_path, cfg, bad_row, chunk_size):
    path = tmp_path / "flows.csv"
    write_flows(path, [GOOD_ROW, GOOD_ROW, bad_row])
    with pytest.raises(FlowInputError) as excinfo:
        FlowAnalyzer(cfg, chunk_size=chunk_size).analyze_file(path)
    assert excinfo.value.row_number == 4


def test_bad_boolean_cell(tmp_path, cfg):
    path = tmp_path / "flows.csv"
    write_flows(path, ["2021-02-01T00:00:00Z,10.1.0.1,1.1.1.1,TCP,5000,443,maybe,"])
    with pytest.raises(FlowInputError, match="boolean"):
        FlowAnalyzer(cfg).analyze_file(path)


def test_missing_columns(tmp_path, cfg):
    path = tmp_path / "flows.csv"
    path.write_text("ts,src_ip,dst_ip\n2021-02-01T00:00:00Z,10.1.0.1,1.1.1.1\n")
    with pytest.raises(FlowInputError, match="proto"):
        FlowAnalyzer(cfg).analyze_file(path)


def test_unsupported_and_missing_files(tmp_path, cfg):
    with pytest.raises(FileNotFoundError):
        FlowAnalyzer(cfg).analyze_file(tmp_path / "nope.csv")
    odd = tmp_path / "flows.xlsx"
    odd.write_bytes(b"")
    with pytest.raises(FlowInputError, match="Unsupported"):
        FlowAnalyzer(cfg).analyze_file(odd)


def test_optional_columns_may_be_absent(tmp_path):
    path = tmp_path / "flows.csv"
    path.write_text(
        "ts,src_ip,dst_ip,proto,src_port,dst_port\n"
        "2021-02-01T00:00:00Z,10.1.0.1,1.1.1.1,tcp,5000,443\n"
    )
    counts = FlowAnalyzer(ClassifierConfig(provider_ips={"1.1.1.1"})).analyze_file(path)
    assert (counts[0].doh, counts[0].tls_established) == (1, 0)


# --------------------------------------------------------------------------
# Ratios
# --------------------------------------------------------------------------


@pytest.mark.parametrize(
    "part, whole, expected", [(15, 1_000_000, 15.0), (50, 10_000_000, 5.0), (0, 7, 0.0)]
)
def test_ratio_per_million(part, whole, expected):
    assert ratio_per_million(part, whole) == pytest.approx(expected)


def test_ratio_needs_positive_denominator():
    with pytest.raises(UndefinedRatioError):
        ratio_per_million(1, 0)


def test_per_capita_rate():
    assert per_capita_rate(100, 10, 2.0) == pytest.approx(5.0)
    assert per_capita_rate(0, 10, 2.0) == 0.0
    for k in (2, 7, 1000):
        assert per_capita_rate(k * 100, k * 10, 2.0) == pytest.approx(
            per_capita_rate(100, 10, 2.0)
        )


@pytest.mark.parametrize("users, population", [(0, 2.0), (10, 0.0)])
def test_per_capita_rate_errors(users, population):
    with pytest.raises(UndefinedRatioError):
        per_capita_rate(5, users, population)


def test_ratios_match_planted_truth(planted, cfg):
    flows, expected = planted
    accumulator = DailyAccumulator()
    accumulator.add_frame(prepare_flows(flows), cfg)
    ratios = compute_ratios(accumulator.to_daily_counts())
    for row, truth in zip(ratios.itertuples(index=False), expected):
        encrypted = truth.doh + truth.dot + truth.doq
        assert row.date == truth.date
        expected_values = {
            "doh_per_million_flows": truth.doh / truth.total * 1e6,
            "doh_per_million_dns": truth.doh / truth.dns * 1e6,
            "dot_per_million_flows": truth.dot / truth.total * 1e6,
            "doh_share_pct": truth.doh / truth.total * 100,
            "encrypted_share_of_dns_pct": encrypted / (encrypted + truth.dns) * 100,
            "doh_per_src_ip": truth.doh / truth.unique_src_ips,
        }
        for column, value in expected_values.items():
            assert getattr(row, column) == pytest.approx(value, rel=1e-9), column
        assert row.encrypted_total == encrypted


def test_ratio_series_reproduces_configured_mean():
    counts = [
        DailyCounts(date=date(2021, 1, day), doh=doh, port443=doh, total=10_000_000)
        for day, doh in zip(range(1, 5), (140, 150, 160, 158))
    ]
    assert compute_ratios(counts)["doh_per_million_flows"].mean() == pytest.approx(15.2)


def test_zero_denominators_give_nan():
    ratios = compute_ratios([DailyCounts(date=date(2021, 1, 1))])
    assert ratios["doh_per_million_flows"].isna().all()
    assert ratios["encrypted_total"].tolist() == [0]


# --------------------------------------------------------------------------
# Daily count files
# --------------------------------------------------------------------------


@pytest.mark.parametrize("suffix", [".csv", ".parquet"])
def test_daily_counts_file_roundtrip(planted, tmp_path, suffix):
    _, expected = planted
    path = tmp_path / f"daily{suffix}"
    save_daily_counts(expected, path)
    assert_frame_equal(load_daily_counts(path), daily_counts_to_frame(expected))


def test_daily_counts_need_date_column(tmp_path):
    path = tmp_path / "daily.csv"
    path.write_text("day,doh\n2021-01-01,3\n")
    with pytest.raises(FlowInputError, match="date"):
        load_daily_counts(path)
