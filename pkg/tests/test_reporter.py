import io
import json

import pandas as pd
import pytest

from encdns_census.exceptions import ReportError
from encdns_census.models import (
    CatalogSummary,
    GroupingReport,
    SeriesReport,
    StationarityVerdict,
    StatsReport,
    VerificationMatrix,
)
from encdns_census.reporter import (
    ReportRenderer,
    catalog_summary_table,
    format_percent,
    grouping_table,
    http_version_report,
    method_support_report,
    stationarity_table,
    table_to_frame,
)

ALL = VerificationMatrix(
    doh_json=True,
    doh_get=True,
    doh_post=True,
    doh2_json=True,
    doh2_get=True,
    doh2_post=True,
)
GET_ONLY = VerificationMatrix(doh_get=True)
NONE = VerificationMatrix()


def counts(table):
    return {row.label: [cell.count for cell in row.cells] for row in table.rows}


@pytest.mark.parametrize(
    "count, total, text",
    [
        (328, 931, "35.2 %"),
        (865, 931, "92.9 %"),
        (800, 931, "85.9 %"),
        (0, 931, "0.0 %"),
        (931, 931, "100.0 %"),
        (1, 16, "6.3 %"),
        (1, 8, "12.5 %"),
    ],
)
def test_format_percent(count, total, text):
    assert format_percent(count, total) == text


@pytest.mark.parametrize("count, total", [(1, 0), (0, 0), (-1, 10)])
def test_format_percent_errors(count, total):
    with pytest.raises(ReportError):
        format_percent(count, total)


# --------------------------------------------------------------------------
# Method and HTTP version tables
# --------------------------------------------------------------------------


def test_method_support_hand_enumerated():
    table = method_support_report([ALL, GET_ONLY, NONE])
    assert table.columns == ["HTTP/1", "HTTP/2"]
    assert table.total == 3
    assert [row.label for row in table.rows] == [
        "JSON", "GET", "POST", "JSON,GET", "JSON,POST", "POST,GET", "JSON,GET,POST",
    ]
    assert counts(table)["GET"] == [2, 1]
    assert counts(table)["JSON,GET,POST"] == [1, 1]
    assert counts(table)["JSON"] == [1, 1]
    assert table.rows[1].cells[0].percent == "66.7 %"


def test_method_support_all_false():
    table = method_support_report([NONE, NONE])
    assert all(value == [0, 0] for value in counts(table).values())


def test_method_support_single_all_true():
    table = method_support_report([ALL])
    assert all(value == [1, 1] for value in counts(table).values())


def test_combination_needs_every_method_on_that_version():
    mixed = VerificationMatrix(doh_json=True, doh2_get=True)
    table = method_support_report([mixed])
    assert counts(table)["JSON,GET"] == [0, 0]
    assert counts(table)["JSON"] == [1, 0]
    assert counts(table)["GET"] == [0, 1]


@pytest.mark.parametrize(
    "matrix, bucket",
    [
        (GET_ONLY, "Only HTTP/1"),
        (VerificationMatrix(doh2_post=True), "Only HTTP/2"),
        (VerificationMatrix(doh_get=True, doh2_get=True), "Both"),
    ],
)
def test_http_version_buckets(matrix, bucket):
    table = http_version_report([matrix])
    assert {label: value for label, (value,) in counts(table).items()} == {
        label: int(label == bucket) for label in ("Only HTTP/1", "Only HTTP/2", "Both")
    }


def test_resolvers_without_methods_are_in_no_bucket():
    table = http_version_report([NONE, GET_ONLY, ALL])
    assert sum(value for (value,) in counts(table).values()) == 2
    assert table.total == 3


def test_empty_inputs_give_no_data_tables():
    for table in (method_support_report([]), http_version_report([])):
        assert table.rows == []
        assert table.note == "no data"
    assert catalog_summary_table(CatalogSummary()).note == "no data"


# --------------------------------------------------------------------------
# Catalog, grouping and stationarity tables
# --------------------------------------------------------------------------


def test_catalog_summary_table():
    summary = CatalogSummary(
        total=234, ipv4_count=131, ipv6_count=103, unique_asn=52, unique_domains=110
    )
    table = catalog_summary_table(summary)
    assert counts(table)["Total unique servers"] == [234]
    assert table.rows[1].cells[0].percent == "56.0 %"
    assert table.rows[0].cells[0].percent is None


def test_grouping_table():
    report = GroupingReport(
        total_unique_ips=931,
        ips_with_ptr=400,
        ips_without_ptr=531,
        ips_with_hostname=789,
        unique_sld=131,
        unique_prefixes=142,
        assumed_providers=273,
        known_resolvers_found=32,
        unknown_resolvers_found=899,
    )
    table = grouping_table(report)
    assert counts(table)["Assumed number of unique providers"] == [273]
    assert table.rows[-1].cells[0].percent == "96.6 %"


def stats_report():
    return StatsReport(
        source="daily.csv",
        alpha=0.05,
        rows=[
            SeriesReport(
                value="doq",
                n_obs=90,
                mean=1234.5,
                std=10.0,
                adf_stat=-8.7,
                p_value=2.66e-14,
                used_lag=0,
                conclusion=StationarityVerdict.STATIONARY,
                slope=0.25,
            ),
            SeriesReport(
                value="unique_src_ips",
                n_obs=90,
                mean=250.0,
                std=0.0,
                note="constant series",
            ),
        ],
    )


def test_stationarity_table():
    frame = stationarity_table(stats_report())
    assert list(frame.columns) == [
        "Value",
        "Mean",
        "STD",
        "ADF Stat",
        "p-value",
        "Conclusion",
        "Slope",
    ]
    first, second = frame.to_dict("records")
    assert first["Mean"] == "1,234.500"
    assert first["ADF Stat"] == "-8.700"
    assert first["p-value"] == "2.66e-14"
    assert first["Conclusion"] == "Stationary"
    assert second["ADF Stat"] == "-"
    assert second["Conclusion"] == "constant series"


def test_table_to_frame_is_long():
    frame = table_to_frame(method_support_report([ALL, GET_ONLY]))
    assert list(frame.columns) == ["table", "label", "column", "count", "percent"]
    assert len(frame) == 7 * 2
    row = frame[(frame["label"] == "GET") & (frame["column"] == "HTTP/1")].iloc[0]
    assert (row["count"], row["percent"]) == (2, "100.0 %")


# --------------------------------------------------------------------------
# Rendering
# --------------------------------------------------------------------------


@pytest.fixture
def renderer():
    return ReportRenderer()


def test_render_text_layout(renderer):
    text = renderer.render_text([http_version_report([GET_ONLY])])
    assert text == (
        "Supported HTTP versions by the resolvers found\n"
        "             Resolvers\n"
        "-----------  -----------\n"
        "Only HTTP/1  1 (100.0 %)\n"
        "Only HTTP/2  0 (0.0 %)\n"
        "Both         0 (0.0 %)\n"
    )


def test_render_text_several_tables(renderer):
    text = renderer.render_text(
        [method_support_report([]), stationarity_table(stats_report())],
        titles=[None, "Stationarity"],
    )
    assert "Supported DoH methods by the resolvers found" in text
    assert "(no data)" in text
    assert "\n\nStationarity\n" in text
    assert "2.66e-14" in text


def test_render_text_is_deterministic(renderer):
    tables = [method_support_report([ALL, GET_ONLY, NONE]), http_version_report([ALL])]
    assert renderer.render_text(tables) == renderer.render_text(tables)


def test_render_json(renderer):
    payload = json.loads(
        renderer.render_json([http_version_report([GET_ONLY])], stats_report())
    )
    table = payload["tables"][0]
    assert table["rows"][0] == {
        "label": "Only HTTP/1",
        "cells": [{"count": 1, "percent": "100.0 %"}],
    }
    assert payload["stats"]["rows"][0]["conclusion"] == "Stationary"


def test_render_csv(renderer):
    text = renderer.render_csv(
        [method_support_report([ALL]), http_version_report([ALL])]
    )
    frame = pd.read_csv(io.StringIO(text), keep_default_na=False)
    assert len(frame) == 7 * 2 + 3
    assert set(frame["table"]) == {
        "Supported DoH methods by the resolvers found",
        "Supported HTTP versions by the resolvers found",
    }


def test_render_csv_without_tables(renderer):
    assert renderer.render_csv([]) == "table,label,column,count,percent\n"


def test_render_html_escapes(renderer, tmp_path):
    html = renderer.render_html(
        [http_version_report([ALL]), stationarity_table(stats_report())],
        title="Resolvers <scan>",
        titles=[None, "Stationarity"],
    )
    assert "<html" in html
    assert "Resolvers &lt;scan&gt;" in html
    assert "<td>1 (100.0 %)</td>" in html
    path = tmp_path / "report.html"
    renderer.write(html, path)
    assert path.read_text(encoding="utf-8") == html
