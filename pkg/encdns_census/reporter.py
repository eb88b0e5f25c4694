"""Count/percent report tables and their text, HTML, JSON and CSV renderings."""

import json
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import pandas as pd
from jinja2 import Environment, FileSystemLoader

from .exceptions import ReportError
from .models import (
    CatalogSummary,
    DohEncoding,
    GroupingReport,
    HttpVersion,
    ReportCell,
    ReportRow,
    ReportTable,
    StatsReport,
    VerificationMatrix,
    VerificationMethod,
)

NO_DATA = "no data"

# Rows of the method-support table, in published order.
METHOD_COMBINATIONS: List[Tuple[str, ...]] = [
    ("JSON",),
    ("GET",),
    ("POST",),
    ("JSON", "GET"),
    ("JSON", "POST"),
    ("POST", "GET"),
    ("JSON", "GET", "POST"),
]

HTTP_VERSION_COLUMNS = {HttpVersion.HTTP_1_1: "HTTP/1", HttpVersion.HTTP_2: "HTTP/2"}

STATIONARITY_COLUMNS = [
    "Value",
    "Mean",
    "STD",
    "ADF Stat",
    "p-value",
    "Conclusion",
    "Slope",
]


def format_percent(count: int, total: int) -> str:
    """
    ``count / total`` as a percentage with one decimal, rounded half-up.

    Raises:
        ReportError: non-positive total or negative count
    """
    if total <= 0:
        raise ReportError(f"percentage undefined for total {total}")
    if count < 0:
        raise ReportError(f"negative count {count}")
    share = Decimal(count) * 100 / Decimal(total)
    share = share.quantize(Decimal("0.1"), rounding=ROUND_HALF_UP)
    return f"{share} %"


def _cell(count: int, total: Optional[int]) -> ReportCell:
    return ReportCell(
        count=count, percent=format_percent(count, total) if total else None
    )


def _row(label: str, count: int, total: Optional[int]) -> ReportRow:
    return ReportRow(label=label, cells=[_cell(count, total)])


def _supports_all(
    matrix: VerificationMatrix, encodings: Sequence[str], version: HttpVersion
) -> bool:
    return all(
        matrix.supports(
            VerificationMethod(encoding=DohEncoding(encoding), http_version=version)
        )
        for encoding in encodings
    )


def method_support_report(matrices: Iterable[VerificationMatrix]) -> ReportTable:
    """
    Resolvers supporting each method combination, per HTTP version.

    A combination row counts a resolver iff every named encoding works on
    that HTTP version.
    """
    matrices = list(matrices)
    title = "Supported DoH methods by the resolvers found"
    columns = list(HTTP_VERSION_COLUMNS.values())
    if not matrices:
        return ReportTable(title=title, columns=columns, note=NO_DATA)
    total = len(matrices)
    rows = []
    for combination in METHOD_COMBINATIONS:
        cells = [
            _cell(
                sum(_supports_all(matrix, combination, version) for matrix in matrices),
                total,
            )
            for version in HTTP_VERSION_COLUMNS
        ]
        rows.append(ReportRow(label=",".join(combination), cells=cells))
    return ReportTable(title=title, columns=columns, rows=rows, total=total)


def http_version_report(matrices: Iterable[VerificationMatrix]) -> ReportTable:
    """
    Only-HTTP/1, Only-HTTP/2 and Both buckets.

    Resolvers with no working method are in none of them.
    """
    matrices = list(matrices)
    title = "Supported HTTP versions by the resolvers found"
    if not matrices:
        return ReportTable(title=title, columns=["Resolvers"], note=NO_DATA)
    total = len(matrices)
    only_h1 = sum(m.http1_supported and not m.http2_supported for m in matrices)
    only_h2 = sum(m.http2_supported and not m.http1_supported for m in matrices)
    both = sum(m.http1_supported and m.http2_supported for m in matrices)
    rows = [
        _row("Only HTTP/1", only_h1, total),
        _row("Only HTTP/2", only_h2, total),
        _row("Both", both, total),
    ]
    return ReportTable(title=title, columns=["Resolvers"], rows=rows, total=total)


def catalog_summary_table(summary: CatalogSummary) -> ReportTable:
    title = "Well-known DoH resolvers"
    if summary.total == 0:
        return ReportTable(title=title, columns=["Count"], note=NO_DATA)
    rows = [
        _row("Total unique servers", summary.total, None),
        _row("Total unique IPv4 servers", summary.ipv4_count, summary.total),
        _row("Total unique IPv6 servers", summary.ipv6_count, summary.total),
        _row("Unique ASN", summary.unique_asn, None),
        _row("Unique domain names", summary.unique_domains, None),
    ]
    return ReportTable(title=title, columns=["Count"], rows=rows, total=summary.total)


def grouping_table(report: GroupingReport) -> ReportTable:
    """Hostname, prefix and catalog breakdown of discovered resolvers."""
    title = "Analysis of the discovered resolvers"
    total = report.total_unique_ips
    if total == 0:
        return ReportTable(title=title, columns=["Count"], note=NO_DATA)
    rows = [
        _row("Total number of unique IP addresses", total, None),
        _row("IP addresses with PTR records", report.ips_with_ptr, total),
        _row("IP addresses without PTR records", report.ips_without_ptr, total),
        _row("IP addresses with a hostname", report.ips_with_hostname, total),
        _row("Unique SLD", report.unique_sld, None),
        _row("Unique prefixes of nameless addresses", report.unique_prefixes, None),
        _row("Assumed number of unique providers", report.assumed_providers, None),
        _row("Discovered well-known resolvers", report.known_resolvers_found, total),
        _row("Discovered unknown resolvers", report.unknown_resolvers_found, total),
    ]
    return ReportTable(title=title, columns=["Count"], rows=rows, total=total)


def _number(value: Optional[float], digits: int = 3) -> str:
    if value is None:
        return "-"
    if value != 0 and abs(value) < 10 ** -digits:
        return f"{value:.2e}"
    return f"{value:,.{digits}f}"


def stationarity_table(stats: StatsReport) -> pd.DataFrame:
    """One row per series: mean, STD, ADF statistic, p-value, verdict and slope."""
    records = [
        {
            "Value": row.value,
            "Mean": _number(row.mean),
            "STD": _number(row.std),
            "ADF Stat": _number(row.adf_stat),
            "p-value": _number(row.p_value),
            "Conclusion": row.conclusion.value if row.conclusion else (row.note or "-"),
            "Slope": _number(row.slope),
        }
        for row in stats.rows
    ]
    return pd.DataFrame(records, columns=STATIONARITY_COLUMNS)


def table_to_frame(table: ReportTable) -> pd.DataFrame:
    """Long format: table, label, column, count, percent."""
    records = [
        {
            "table": table.title,
            "label": row.label,
            "column": column,
            "count": cell.count,
            "percent": cell.percent or "",
        }
        for row in table.rows
        for column, cell in zip(table.columns, row.cells)
    ]
    return pd.DataFrame(
        records, columns=["table", "label", "column", "count", "percent"]
    )


def _cell_text(cell: ReportCell) -> str:
    return f"{cell.count:,} ({cell.percent})" if cell.percent else f"{cell.count:,}"


def _grid(
    report: Union[ReportTable, pd.DataFrame], title: Optional[str] = None
) -> Dict[str, Any]:
    """Title, header, string rows and column widths for the templates."""
    if isinstance(report, ReportTable):
        header = [""] + report.columns
        rows = [
            [row.label] + [_cell_text(cell) for cell in row.cells]
            for row in report.rows
        ]
        title, note = report.title, report.note
    else:
        header = list(report.columns)
        rows = [
            [str(value) for value in record]
            for record in report.itertuples(index=False)
        ]
        note = None if rows else NO_DATA
    widths = [
        max([len(header[i])] + [len(row[i]) for row in rows])
        for i in range(len(header))
    ]
    rule = ["-" * width for width in widths]
    return {
        "title": title or "",
        "header": header,
        "rows": rows,
        "widths": widths,
        "rule": rule,
        "note": note,
    }


def _grids(
    tables: Sequence[Union[ReportTable, pd.DataFrame]],
    titles: Optional[Sequence[str]],
) -> List[Dict[str, Any]]:
    return [
        _grid(table, titles[i] if titles else None)
        for i, table in enumerate(tables)
    ]


class ReportRenderer:
    """Renders report tables through the bundled jinja2 templates."""

    def __init__(self) -> None:
        self.env = Environment(
            loader=FileSystemLoader(self._get_template_dir()),
            keep_trailing_newline=True,
            autoescape=False,
        )
        self.html_env = Environment(
            loader=FileSystemLoader(self._get_template_dir()), autoescape=True
        )

    def _get_template_dir(self) -> str:
        """Get the directory containing report templates."""
        return str(Path(__file__).parent / "templates")

    def render_text(
        self,
        tables: Sequence[Union[ReportTable, pd.DataFrame]],
        titles: Optional[Sequence[str]] = None,
    ) -> str:
        """
        Fixed-width plain-text tables.

        Args:
            tables: ReportTables or DataFrames, rendered in order
            titles: Titles for DataFrame entries, by position

        Returns:
            The rendered text, ending with a newline
        """
        template = self.env.get_template("tables.txt")
        grids = _grids(tables, titles)
        return template.render(grids=grids)

    def render_html(
        self,
        tables: Sequence[Union[ReportTable, pd.DataFrame]],
        title: str,
        titles: Optional[Sequence[str]] = None,
    ) -> str:
        template = self.html_env.get_template("report.html")
        grids = _grids(tables, titles)
        return template.render(title=title, grids=grids)

    @staticmethod
    def render_json(
        tables: Sequence[ReportTable], stats: Optional[StatsReport] = None
    ) -> str:
        payload: Dict[str, Any] = {
            "tables": [table.model_dump(mode="json") for table in tables]
        }
        if stats is not None:
            payload["stats"] = stats.model_dump(mode="json")
        return json.dumps(payload, indent=2, ensure_ascii=False) + "\n"

    @staticmethod
    def render_csv(tables: Sequence[ReportTable]) -> str:
        frames = [table_to_frame(table) for table in tables]
        if not frames:
            frames = [table_to_frame(ReportTable(title="", columns=[]))]
        frame = pd.concat(frames, ignore_index=True)
        return frame.to_csv(index=False, lineterminator="\n")

    def write(self, content: str, output_path: Union[str, Path]) -> None:
        with open(output_path, "w", encoding="utf-8") as f:
            f.write(content)
