#!/usr/bin/env python3
"""Script to create sample flow, daily-count and target files for trying the CLI."""

from pathlib import Path

from encdns_census.analyzer import save_daily_counts
from encdns_census.synthetic import (
    LOCAL_PREFIX,
    OFFICIAL_RESOLVER,
    PROVIDER_SNI,
    PROVIDER_SUFFIX,
    planted_flows,
)


def create_sample_files():
    """Write a planted flow capture and its expected daily counts to sample_data/."""
    out_dir = Path("sample_data")
    out_dir.mkdir(exist_ok=True)

    print("Generating 60 days of planted flows...")
    flows, expected = planted_flows(seed=7, days=60, outage_days=(20, 21))

    flows_csv = out_dir / "flows.csv"
    flows.to_csv(flows_csv, index=False)
    print(f"✅ Flow CSV created: {flows_csv} ({len(flows):,} flows)")

    flows_parquet = out_dir / "flows.parquet"
    flows.to_parquet(flows_parquet, index=False)
    print(f"✅ Flow Parquet file created: {flows_parquet}")

    expected_path = out_dir / "expected_daily.csv"
    save_daily_counts(expected, expected_path)
    print(f"✅ Expected daily counts created: {expected_path}")

    targets_path = out_dir / "targets.txt"
    targets_path.write_text(
        "# Public DoH resolvers, one ip or ip,port per line\n"
        "1.1.1.1\n"
        "8.8.8.8\n"
        "9.9.9.9\n"
        "2606:4700:4700::1111\n"
    )
    print(f"✅ Target list created: {targets_path}")

    ptr_path = out_dir / "ptr_snapshot.csv"
    ptr_path.write_text(
        "ip,hostname\n"
        "1.1.1.1,one.one.one.one\n"
        "8.8.8.8,dns.google\n"
        "9.9.9.9,dns9.quad9.net\n"
    )
    print(f"✅ PTR snapshot created: {ptr_path}")

    print("\n🎉 All sample files created successfully!")
    print("\nTry:")
    print(
        f"  encdns analyze {flows_csv} -o sample_data/daily.csv --sni {PROVIDER_SNI} "
        f"--sni-suffix {PROVIDER_SUFFIX} --official-resolver {OFFICIAL_RESOLVER} "
        f"--local-prefix {LOCAL_PREFIX}"
    )
    print("  encdns stats sample_data/daily.csv --ratios")


if __name__ == "__main__":
    create_sample_files()
