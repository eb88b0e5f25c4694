"""Command-line interface for encdns-census."""

import json
import logging
import sys
from pathlib import Path
from typing import Any, List, Optional, Sequence, Tuple

import click
from pydantic import ValidationError

from . import __version__
from .analyzer import (
    FlowAnalyzer,
    compute_ratios,
    daily_counts_to_frame,
    load_daily_counts,
)
from .exceptions import (
    CatalogError,
    ConsentRequiredError,
    EncDnsError,
    FlowInputError,
    PartitionError,
    TargetFileError,
)
from .models import ClassifierConfig, ProberConfig, ScanConfig, StatsReport
from .orchestrator import (
    ingest_targets,
    load_exclusions,
    load_scan_records,
    partition_ranges,
    scan_to_file,
)
from .prober import DohProber
from .reporter import (
    ReportRenderer,
    catalog_summary_table,
    grouping_table,
    http_version_report,
    method_support_report,
    stationarity_table,
)
from .resolver_intel import (
    AsnTable,
    DnsPtrProvider,
    PassiveDnsSnapshot,
    PtrSnapshot,
    ResolverEnricher,
    build_grouping_report,
    bundled_major_providers,
    cross_reference,
    load_catalog,
    load_resolver_records,
    merge_catalogs,
    save_catalog,
    save_resolver_records,
    summarize_catalog,
)
from .statistics import analyze_daily_counts

logger = logging.getLogger(__name__)

# Raised for bad input files or arguments; everything else is a runtime failure.
INPUT_ERRORS = (
    FileNotFoundError,
    ValidationError,
    ValueError,
    TargetFileError,
    FlowInputError,
    CatalogError,
    ConsentRequiredError,
    PartitionError,
)

EXIT_INPUT_ERROR = 1
EXIT_RUNTIME_ERROR = 2

STATIONARITY_TITLE = "Augmented Dickey-Fuller test for stationarity"

EXISTING_FILE = click.Path(exists=True, dir_okay=False, path_type=Path)
EXISTING_PATH_STR = click.Path(exists=True, dir_okay=False)


class EncDnsGroup(click.Group):
    """Click group whose usage errors exit with status 1."""

    def main(self, *args: Any, **kwargs: Any) -> Any:
        kwargs["standalone_mode"] = False
        try:
            result = super().main(*args, **kwargs)
        except click.ClickException as e:
            e.show()
            sys.exit(EXIT_INPUT_ERROR)
        except click.exceptions.Abort:
            click.echo("Aborted!", err=True)
            sys.exit(EXIT_INPUT_ERROR)
        sys.exit(result if isinstance(result, int) else 0)


def _fail(error: Exception, code: int) -> None:
    click.echo(f"❌ Error: {error}", err=True)
    sys.exit(code)


def _emit(content: str, output: Optional[Path]) -> None:
    if output is None:
        click.echo(content, nl=False)
    else:
        ReportRenderer().write(content, output)
        click.echo(f"✅ Report saved to: {output}", err=True)


@click.group(cls=EncDnsGroup)
@click.version_option(version=__version__)
@click.option(
    "--verbose", "-v", count=True, help="Log progress (-v) or debug detail (-vv)"
)
def main(verbose: int) -> None:
    """encdns-census - Encrypted DNS resolver census and traffic analysis."""
    if verbose == 0:
        level = logging.WARNING
    elif verbose == 1:
        level = logging.INFO
    else:
        level = logging.DEBUG
    logging.basicConfig(
        level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s"
    )


def _format_option(*choices: str) -> Any:
    return click.option(
        "--format",
        "output_format",
        type=click.Choice(list(choices), case_sensitive=False),
        default="text",
        show_default=True,
        help="Output format",
    )


_output_option = click.option(
    "--output",
    "-o",
    type=click.Path(path_type=Path),
    help="Write to this file instead of stdout",
)


# --------------------------------------------------------------------------
# Scanning
# --------------------------------------------------------------------------


@main.command()
@click.argument("targets_file", type=EXISTING_FILE)
@click.option(
    "--output",
    "-o",
    type=click.Path(path_type=Path),
    required=True,
    help="Results JSON-lines file",
)
@click.option(
    "--timeout-ms",
    type=click.IntRange(min=1),
    default=3000,
    show_default=True,
    help="Wall-time budget of one probe",
)
@click.option(
    "--retries",
    type=click.IntRange(min=0),
    default=1,
    show_default=True,
    help="Retries per failed method",
)
@click.option(
    "--concurrency",
    type=click.IntRange(min=1),
    default=32,
    show_default=True,
    help="Endpoints in flight",
)
@click.option(
    "--rate-limit",
    type=click.FloatRange(min=0, min_open=True),
    default=100.0,
    show_default=True,
    help="New connections per second",
)
@click.option(
    "--exclude",
    "exclude_file",
    type=EXISTING_FILE,
    help="File of CIDRs never to contact",
)
@click.option(
    "--include-reserved", is_flag=True, help="Do not skip special-use address ranges"
)
@click.option(
    "--consent",
    is_flag=True,
    help="Confirm the scan of more than one /24 is authorized",
)
@click.option(
    "--verify-certificates", is_flag=True, help="Enforce TLS certificate validation"
)
@click.option(
    "--ca-file", type=EXISTING_PATH_STR, help="CA bundle for --verify-certificates"
)
@click.option(
    "--no-resume", is_flag=True, help="Start over instead of skipping completed targets"
)
def scan(
    targets_file: Path,
    output: Path,
    timeout_ms: int,
    retries: int,
    concurrency: int,
    rate_limit: float,
    exclude_file: Optional[Path],
    include_reserved: bool,
    consent: bool,
    verify_certificates: bool,
    ca_file: Optional[str],
    no_resume: bool,
) -> None:
    """
    Verify the DoH methods of every endpoint in a targets file.

    TARGETS_FILE: One ip or ip,port per line
    """
    try:
        config = ScanConfig(
            concurrency=concurrency,
            timeout_ms=timeout_ms,
            retries=retries,
            rate_limit=rate_limit,
            exclusions=load_exclusions(exclude_file) if exclude_file else [],
            exclude_reserved=not include_reserved,
            consent=consent,
            verify_certificates=verify_certificates,
            ca_file=ca_file,
        )
        targets = ingest_targets(targets_file, config)
        click.echo(f"🔍 Scanning {len(targets)} targets from: {targets_file}")
        written = scan_to_file(targets, output, config, resume=not no_resume)
        records = load_scan_records(output)
        found = sum(record.matrix.any_supported for record in records)
        click.echo(f"✅ {written} new results saved to: {output}")
        click.echo(f"📡 DoH resolvers found: {found} of {len(records)} endpoints")
    except INPUT_ERRORS as e:
        _fail(e, EXIT_INPUT_ERROR)
    except EncDnsError as e:
        _fail(e, EXIT_RUNTIME_ERROR)


@main.command()
@click.argument("start")
@click.argument("end")
@click.option(
    "--workers",
    "-n",
    type=click.IntRange(min=1),
    default=1,
    show_default=True,
    help="Worker count",
)
@click.option("--first-octet", is_flag=True, help="Cut only at first-octet boundaries")
@_format_option("text", "json", "csv")
def partition(
    start: str, end: str, workers: int, first_octet: bool, output_format: str
) -> None:
    """
    Split an address range between scan workers.

    START, END: First and last address of the range (inclusive)
    """
    try:
        partitions = partition_ranges(start, end, workers, first_octet=first_octet)
    except INPUT_ERRORS as e:
        _fail(e, EXIT_INPUT_ERROR)
        return
    if output_format == "json":
        payload = [p.model_dump(mode="json") for p in partitions]
        click.echo(json.dumps(payload, indent=2))
    elif output_format == "csv":
        click.echo("worker_id,start,end,size")
        for p in partitions:
            click.echo(f"{p.worker_id},{p.start},{p.end},{p.size}")
    else:
        for p in partitions:
            click.echo(
                f"worker {p.worker_id}: {p.start} - {p.end} ({p.size:,} addresses)"
            )


@main.command()
@click.argument("ip")
@click.option(
    "--port",
    type=click.IntRange(1, 65535),
    default=443,
    show_default=True,
    help="DoH port",
)
@click.option("--sni", help="TLS server name and HTTP Host")
@click.option(
    "--path", "doh_path", default="/dns-query", show_default=True, help="DoH URL path"
)
@click.option(
    "--name",
    "probe_name",
    default="www.example.com",
    show_default=True,
    help="Domain to resolve",
)
@click.option(
    "--timeout-ms", type=click.IntRange(min=1), default=3000, show_default=True
)
@click.option("--retries", type=click.IntRange(min=0), default=1, show_default=True)
@click.option(
    "--verify-certificates", is_flag=True, help="Enforce TLS certificate validation"
)
@click.option(
    "--ca-file", type=EXISTING_PATH_STR, help="CA bundle for --verify-certificates"
)
@click.option(
    "--dot-port",
    type=click.IntRange(1, 65535),
    help="Also probe DNS-over-TLS on this port",
)
@_format_option("text", "json")
def verify(
    ip: str,
    port: int,
    sni: Optional[str],
    doh_path: str,
    probe_name: str,
    timeout_ms: int,
    retries: int,
    verify_certificates: bool,
    ca_file: Optional[str],
    dot_port: Optional[int],
    output_format: str,
) -> None:
    """
    Show which DoH methods one endpoint supports.

    IP: Endpoint address (IPv4 or IPv6)
    """
    try:
        config = ProberConfig(
            timeout_ms=timeout_ms,
            retries=retries,
            verify_certificates=verify_certificates,
            ca_file=ca_file,
            probe_name=probe_name,
            path=doh_path,
        )
        prober = DohProber(config)
        target = config.target(ip, port, sni)
        matrix = prober.verify_endpoint(target)
        dot = prober.probe_dot(config.target(ip, dot_port, sni)) if dot_port else None
    except INPUT_ERRORS as e:
        _fail(e, EXIT_INPUT_ERROR)
        return
    except EncDnsError as e:
        _fail(e, EXIT_RUNTIME_ERROR)
        return

    if output_format == "json":
        payload = {"ip": str(target.ip), "port": target.port, **matrix.to_record()}
        if dot is not None:
            payload["dot"] = dot.model_dump(mode="json")
        click.echo(json.dumps(payload, indent=2))
        return
    click.echo(f"{target.ip}:{target.port}")
    click.echo("| dns-doh-check:")
    for label, ok in matrix.labelled().items():
        click.echo(f"|   {label}: {'true' if ok else 'false'}")
    if dot is not None:
        click.echo(f"|   DoT: {'true' if dot.answered else 'false'}")
    if logger.isEnabledFor(logging.INFO):
        for label, detail in matrix.details.items():
            if not detail.success:
                logger.info(
                    "%s failed: %s %s",
                    label,
                    detail.failure_reason,
                    detail.detail or "",
                )


# --------------------------------------------------------------------------
# Resolver intelligence
# --------------------------------------------------------------------------


@main.command()
@click.argument("results_file", type=EXISTING_FILE)
@click.option(
    "--output",
    "-o",
    type=click.Path(path_type=Path),
    required=True,
    help="Resolver records JSON-lines",
)
@click.option("--ptr-snapshot", type=EXISTING_PATH_STR, help="CSV ip,hostname")
@click.option("--passive-dns", type=EXISTING_PATH_STR, help="JSON-lines ip,hostnames")
@click.option("--asn-table", type=EXISTING_PATH_STR, help="CSV prefix,asn")
@click.option("--live-ptr", is_flag=True, help="Resolve PTR records over the network")
@click.option(
    "--all-targets",
    is_flag=True,
    help="Enrich every scanned endpoint, not only DoH resolvers",
)
@click.option(
    "--workers",
    type=click.IntRange(min=1),
    default=8,
    show_default=True,
    help="Concurrent lookups",
)
def enrich(
    results_file: Path,
    output: Path,
    ptr_snapshot: Optional[str],
    passive_dns: Optional[str],
    asn_table: Optional[str],
    live_ptr: bool,
    all_targets: bool,
    workers: int,
) -> None:
    """
    Attach PTR, passive DNS, SLD and ASN data to scan results.

    RESULTS_FILE: JSON-lines output of the scan command
    """
    try:
        records = load_scan_records(results_file)
        if not all_targets:
            records = [record for record in records if record.matrix.any_supported]
        ptr_provider: Any = None
        if live_ptr:
            ptr_provider = DnsPtrProvider()
        elif ptr_snapshot:
            ptr_provider = PtrSnapshot.from_csv(ptr_snapshot)
        enricher = ResolverEnricher(
            ptr_provider=ptr_provider,
            passive_provider=(
                PassiveDnsSnapshot.from_jsonl(passive_dns) if passive_dns else None
            ),
            asn_provider=AsnTable.from_csv(asn_table) if asn_table else None,
            max_workers=workers,
        )
        resolvers = enricher.enrich(records)
        save_resolver_records(resolvers, output)
        named = sum(record.selected_hostname is not None for record in resolvers)
        click.echo(f"✅ {len(resolvers)} resolver records saved to: {output}")
        nameless = len(resolvers) - named
        click.echo(f"🏷️  With hostname: {named}, without: {nameless}")
        if enricher.failures:
            click.echo(
                f"⚠️  {enricher.failures} lookups failed (see log)", err=True
            )
    except INPUT_ERRORS as e:
        _fail(e, EXIT_INPUT_ERROR)
    except EncDnsError as e:
        _fail(e, EXIT_RUNTIME_ERROR)


@main.command()
@click.argument("catalog_files", nargs=-1, type=EXISTING_FILE)
@click.option(
    "--bundled/--no-bundled",
    default=True,
    show_default=True,
    help="Include the major providers list",
)
@click.option(
    "--scan-results",
    type=EXISTING_FILE,
    help="Cross-reference discovered resolvers against the catalog",
)
@click.option(
    "--merged",
    type=click.Path(path_type=Path),
    help="Write the merged catalog CSV here",
)
@_format_option("text", "json", "csv")
@_output_option
def catalog(
    catalog_files: Tuple[Path, ...],
    bundled: bool,
    scan_results: Optional[Path],
    merged: Optional[Path],
    output_format: str,
    output: Optional[Path],
) -> None:
    """
    Merge and summarize lists of well-known DoH resolvers.

    CATALOG_FILES: CSV files with ip,hostname[,version,asn,source]
    """
    try:
        catalogs = [bundled_major_providers()] if bundled else []
        catalogs.extend(load_catalog(path) for path in catalog_files)
        entries = merge_catalogs(*catalogs)
        if merged:
            save_catalog(entries, merged)
            click.echo(f"✅ Merged catalog saved to: {merged}", err=True)
        table = catalog_summary_table(summarize_catalog(entries))
        tables = [table]
        if scan_results:
            found = [
                r for r in load_scan_records(scan_results) if r.matrix.any_supported
            ]
            split = cross_reference(found, entries)
            click.echo(
                f"📋 Discovered well-known: {split.known_found}, "
                f"unknown: {split.unknown_found}",
                err=True,
            )
        _emit(_render(tables, output_format, "Well-known DoH resolvers"), output)
    except INPUT_ERRORS as e:
        _fail(e, EXIT_INPUT_ERROR)
    except EncDnsError as e:
        _fail(e, EXIT_RUNTIME_ERROR)


# --------------------------------------------------------------------------
# Traffic analysis
# --------------------------------------------------------------------------


def _classifier(
    providers: Optional[Path],
    sni: Sequence[str],
    sni_suffix: Sequence[str],
    official: Sequence[str],
    local_prefix: Sequence[str],
) -> ClassifierConfig:
    entries = load_catalog(providers) if providers else bundled_major_providers()
    return ClassifierConfig(
        provider_ips={entry.ip for entry in entries},
        sni_names={name for entry in entries for name in entry.hostnames} | set(sni),
        sni_suffixes=set(sni_suffix),
        official_resolvers=set(official),
        local_prefixes=list(local_prefix),
    )


@main.command()
@click.argument("flow_file", type=EXISTING_FILE)
@click.option(
    "--output",
    "-o",
    type=click.Path(path_type=Path),
    required=True,
    help="Daily counts file (.csv or .parquet)",
)
@click.option(
    "--providers",
    type=EXISTING_FILE,
    help="Provider catalog CSV (default: bundled major providers)",
)
@click.option("--sni", multiple=True, help="Extra DoH provider hostname")
@click.option(
    "--sni-suffix",
    multiple=True,
    help="DoH provider domain suffix, e.g. dns.example",
)
@click.option(
    "--official-resolver",
    "official",
    multiple=True,
    help="Organization resolver to ignore for DNS",
)
@click.option(
    "--local-prefix",
    multiple=True,
    help="Only count flows started from this network",
)
@click.option(
    "--ratios",
    "ratios_path",
    type=click.Path(path_type=Path),
    help="Also write per-day ratios CSV",
)
@click.option(
    "--chunk-size", type=click.IntRange(min=1), default=100_000, show_default=True
)
def analyze(
    flow_file: Path,
    output: Path,
    providers: Optional[Path],
    sni: Tuple[str, ...],
    sni_suffix: Tuple[str, ...],
    official: Tuple[str, ...],
    local_prefix: Tuple[str, ...],
    ratios_path: Optional[Path],
    chunk_size: int,
) -> None:
    """
    Classify flows and count DoH, DoT, DoQ and DNS per day.

    FLOW_FILE: CSV or Parquet with
    ts,src_ip,dst_ip,proto,src_port,dst_port[,tls_established,sni]
    """
    try:
        classifier = _classifier(providers, sni, sni_suffix, official, local_prefix)
        analyzer = FlowAnalyzer(classifier, chunk_size=chunk_size)
        click.echo(f"🔍 Analyzing flows: {flow_file}")
        daily = analyzer.analyze_file(flow_file)
        analyzer.save_daily_counts(daily, output)
        click.echo(f"✅ Daily counts saved to: {output}")
        if ratios_path:
            ratios = compute_ratios(daily_counts_to_frame(daily))
            ratios.to_csv(ratios_path, index=False, lineterminator="\n")
            click.echo(f"✅ Ratios saved to: {ratios_path}")
        _display_flow_summary(daily)
    except INPUT_ERRORS as e:
        _fail(e, EXIT_INPUT_ERROR)
    except EncDnsError as e:
        _fail(e, EXIT_RUNTIME_ERROR)


def _display_flow_summary(daily: List[Any]) -> None:
    click.echo("\n" + "=" * 60)
    click.echo("📊 TRAFFIC SUMMARY")
    click.echo("=" * 60)
    if not daily:
        click.echo("No flows.")
        click.echo("=" * 60)
        return
    click.echo(f"📅 Days: {len(daily)} ({daily[0].date} - {daily[-1].date})")
    for name in ("doh", "dot", "doq", "dns", "total"):
        total = sum(getattr(day, name) for day in daily)
        click.echo(f"   • {name.upper()}: {total:,}")
    click.echo("=" * 60)


@main.command()
@click.argument("daily_file", type=EXISTING_FILE)
@click.option(
    "--series",
    "-s",
    multiple=True,
    help="Column to test; a named column that cannot be tested exits 2",
)
@click.option(
    "--ratios",
    is_flag=True,
    help="Test the per-day ratio series instead of raw counts",
)
@click.option(
    "--alpha",
    type=click.FloatRange(0, 1, min_open=True, max_open=True),
    default=0.05,
    show_default=True,
)
@click.option(
    "--max-lag",
    type=click.IntRange(min=0),
    help="Largest ADF lag (default: Schwert rule)",
)
@click.option(
    "--trim", is_flag=True, help="Drop points beyond 5 MAD from the median first"
)
@_format_option("text", "json", "csv")
@_output_option
def stats(
    daily_file: Path,
    series: Tuple[str, ...],
    ratios: bool,
    alpha: float,
    max_lag: Optional[int],
    trim: bool,
    output_format: str,
    output: Optional[Path],
) -> None:
    """
    Mean, STD, ADF stationarity and linear trend of daily series.

    Without --series every count column is tested and a column that cannot
    be tested (constant or too short) gets a note instead of failing the run.
    Columns named with --series are strict: such a column exits with code 2.

    DAILY_FILE: Output of the analyze command
    """
    try:
        frame = load_daily_counts(daily_file)
        if ratios:
            frame = compute_ratios(frame)
        unknown = [name for name in series if name not in frame.columns]
        if unknown:
            raise click.BadParameter(
                f"unknown series: {', '.join(unknown)}", param_hint="--series"
            )
        report = analyze_daily_counts(
            frame,
            columns=list(series) or None,
            alpha=alpha,
            max_lag=max_lag,
            trim=trim,
            strict=bool(series),
            source=daily_file.name,
        )
        table = stationarity_table(report)
        if output_format == "json":
            content = report.model_dump_json(indent=2) + "\n"
        elif output_format == "csv":
            content = table.to_csv(index=False, lineterminator="\n")
        else:
            content = ReportRenderer().render_text([table], titles=[STATIONARITY_TITLE])
        _emit(content, output)
    except INPUT_ERRORS as e:
        _fail(e, EXIT_INPUT_ERROR)
    except EncDnsError as e:
        _fail(e, EXIT_RUNTIME_ERROR)


# --------------------------------------------------------------------------
# Reports
# --------------------------------------------------------------------------


def _render(
    tables: List[Any],
    output_format: str,
    title: str,
    stats_report: Optional[StatsReport] = None,
) -> str:
    renderer = ReportRenderer()
    if output_format == "json":
        return renderer.render_json(tables, stats_report)
    if output_format == "csv":
        return renderer.render_csv(tables)
    entries: List[Any] = list(tables)
    titles: List[str] = [table.title for table in tables]
    if stats_report is not None:
        entries.append(stationarity_table(stats_report))
        titles.append(STATIONARITY_TITLE)
    if output_format == "html":
        return renderer.render_html(entries, title, titles=titles)
    return renderer.render_text(entries, titles=titles)


@main.command()
@click.argument("results_file", type=EXISTING_FILE)
@click.option(
    "--resolvers",
    type=EXISTING_FILE,
    help="Enriched resolver records for the grouping table",
)
@click.option(
    "--providers",
    type=EXISTING_FILE,
    help="Catalog of well-known resolvers (default: bundled major providers)",
)
@click.option(
    "--stats",
    "stats_file",
    type=EXISTING_FILE,
    help="JSON output of the stats command",
)
@click.option(
    "--all-targets",
    is_flag=True,
    help="Count every scanned endpoint, not only DoH resolvers",
)
@_format_option("text", "json", "csv", "html")
@_output_option
def report(
    results_file: Path,
    resolvers: Optional[Path],
    providers: Optional[Path],
    stats_file: Optional[Path],
    all_targets: bool,
    output_format: str,
    output: Optional[Path],
) -> None:
    """
    Method support, HTTP version and resolver grouping tables.

    RESULTS_FILE: JSON-lines output of the scan command
    """
    try:
        records = load_scan_records(results_file)
        matrices = [
            record.matrix
            for record in records
            if all_targets or record.matrix.any_supported
        ]
        tables = [method_support_report(matrices), http_version_report(matrices)]
        if resolvers:
            if providers:
                entries = load_catalog(providers)
            else:
                entries = bundled_major_providers()
            grouping = build_grouping_report(load_resolver_records(resolvers), entries)
            tables.append(grouping_table(grouping))
        stats_report = None
        if stats_file:
            stats_report = StatsReport.model_validate_json(
                stats_file.read_text(encoding="utf-8")
            )
        content = _render(
            tables, output_format, "Encrypted DNS resolver census", stats_report
        )
        _emit(content, output)
    except INPUT_ERRORS as e:
        _fail(e, EXIT_INPUT_ERROR)
    except EncDnsError as e:
        _fail(e, EXIT_RUNTIME_ERROR)


if __name__ == "__main__":
    main()
