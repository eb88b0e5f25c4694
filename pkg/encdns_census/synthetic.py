"""Seeded generators for fixture series and flow files with known composition."""

from datetime import date, timedelta
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from .analyzer import FLOW_COLUMNS
from .models import ClassifierConfig, DailyCounts

# Numerical Recipes LCG, full period modulo 2**32.
LCG_A = 1664525
LCG_C = 1013904223
LCG_M = 2**32

_MASK64 = 2**64 - 1


def scramble_seed(seed: int) -> int:
    """
    One splitmix64 step over ``seed``.

    Consecutive integer seeds land on unrelated points of the LCG cycle
    instead of on linearly related streams.
    """
    z = (seed + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def lcg_uniform(seed: int, n: int) -> np.ndarray:
    """
    ``n`` uniforms in (0, 1) from ``x' = (a*x + c) mod 2**32``.

    The initial state is ``scramble_seed(seed) mod 2**32``.
    """
    state = scramble_seed(seed) % LCG_M
    out = np.empty(n, dtype=float)
    for i in range(n):
        state = (LCG_A * state + LCG_C) % LCG_M
        out[i] = (state + 0.5) / LCG_M
    return out


def lcg_gaussian(seed: int, n: int) -> np.ndarray:
    """
    Standard normal draws: LCG uniforms paired through Box-Muller.

    Each pair (u1, u2) yields ``sqrt(-2 ln u1) * cos(2 pi u2)`` and the
    matching sine term; an odd ``n`` drops the last sine.
    """
    uniforms = lcg_uniform(seed, 2 * ((n + 1) // 2))
    u1, u2 = uniforms[0::2], uniforms[1::2]
    radius = np.sqrt(-2.0 * np.log(u1))
    pairs = np.column_stack(
        [radius * np.cos(2 * np.pi * u2), radius * np.sin(2 * np.pi * u2)]
    )
    return pairs.ravel()[:n]


def random_walk(seed: int, n: int) -> np.ndarray:
    """Cumulative sum of ``lcg_gaussian`` noise."""
    return np.cumsum(lcg_gaussian(seed, n))


# --------------------------------------------------------------------------
# Planted flow fixture
# --------------------------------------------------------------------------

PROVIDER_IP = "1.1.1.1"
PROVIDER_SNI = "cloudflare-dns.com"
PROVIDER_SUFFIX = "dns.google"
OFFICIAL_RESOLVER = "10.0.0.53"
LOCAL_PREFIX = "10.0.0.0/8"

# Mean flows per day for each planted kind.
DEFAULT_MIX = {
    "doh_sni": 300,
    "doh_suffix": 100,
    "doh_ip": 200,
    "dot": 150,
    "doq": 20,
    "dns": 1200,
    "official_dns": 400,
    "https": 900,
    "failed_tls": 30,
    "foreign": 50,
}


def fixture_classifier() -> ClassifierConfig:
    """Classifier matching the planted flow fixture."""
    return ClassifierConfig(
        provider_ips={PROVIDER_IP},
        sni_names={PROVIDER_SNI},
        sni_suffixes={PROVIDER_SUFFIX},
        official_resolvers={OFFICIAL_RESOLVER},
        local_prefixes=[LOCAL_PREFIX],
    )


def _flows(
    proto: str,
    dst_ip: Any,
    dst_port: int,
    tls_established: Optional[bool] = None,
    sni: Optional[str] = None,
) -> Dict[str, Any]:
    return dict(
        proto=proto,
        dst_ip=dst_ip,
        dst_port=dst_port,
        tls_established=tls_established,
        sni=sni,
    )


def _kind_rows(kind: str, count: int, rng: np.random.Generator) -> Dict[str, Any]:
    """proto, dst_ip, dst_port, tls_established and sni for ``count`` flows."""
    if kind == "doh_sni":
        third = rng.integers(0, 256, count)
        addresses = [f"104.16.{t}.{t % 200 + 1}" for t in third]
        return _flows("TCP", addresses, 443, True, PROVIDER_SNI)
    if kind == "doh_suffix":
        return _flows("TCP", "142.250.1.1", 443, True, f"doh.{PROVIDER_SUFFIX.upper()}")
    if kind == "doh_ip":
        return _flows("TCP", PROVIDER_IP, 443)
    if kind == "dot":
        return _flows("TCP", "9.9.9.9", 853, True)
    if kind == "doq":
        return _flows("UDP", "94.140.14.14", 784)
    if kind == "dns":
        return _flows("UDP", "8.8.8.8", 53)
    if kind == "official_dns":
        return _flows("UDP", OFFICIAL_RESOLVER, 53)
    if kind == "https":
        return _flows("TCP", "93.184.216.34", 443, True, "www.example.org")
    if kind == "failed_tls":
        return _flows("TCP", PROVIDER_IP, 443, False, PROVIDER_SNI)
    if kind == "foreign":
        return _flows("TCP", PROVIDER_IP, 443, True, PROVIDER_SNI)
    raise ValueError(f"unknown flow kind: {kind}")



def planted_flows(
    seed: int = 7,
    days: int = 30,
    start: date = date(2021, 2, 1),
    mix: Optional[Dict[str, int]] = None,
    sources_per_day: int = 250,
    outage_days: Tuple[int, ...] = (),
) -> Tuple[pd.DataFrame, List[DailyCounts]]:
    """
    Shuffled flow frame with a known daily composition.

    Per-day counts are Poisson around ``mix``. Local flows cycle through
    ``sources_per_day`` addresses in 10.1.0.0/16; "foreign" flows come from
    outside the local prefix and are never counted. Days listed in
    ``outage_days`` (offsets from ``start``) carry no flows at all.

    Returns:
        (flow frame with FLOW_COLUMNS, expected DailyCounts per day)
    """
    mix = dict(DEFAULT_MIX if mix is None else mix)
    rng = np.random.default_rng(seed)
    frames = []
    expected = []
    for offset in range(days):
        day = start + timedelta(days=offset)
        if offset in outage_days:
            expected.append(DailyCounts(date=day))
            continue
        counts = {kind: int(rng.poisson(mean)) for kind, mean in mix.items()}
        local_total = sum(count for kind, count in counts.items() if kind != "foreign")
        day_frames = []
        for kind, count in counts.items():
            if count == 0:
                continue
            part = pd.DataFrame(_kind_rows(kind, count, rng), index=range(count))
            part["kind"] = kind
            day_frames.append(part)
        frame = pd.concat(day_frames, ignore_index=True)
        local = frame["kind"] != "foreign"
        source_ids = np.arange(int(local.sum())) % sources_per_day
        frame.loc[local, "src_ip"] = [
            f"10.1.{i // 250}.{i % 250 + 1}" for i in source_ids
        ]
        foreign = range(int((~local).sum()))
        frame.loc[~local, "src_ip"] = [f"198.51.100.{i % 250 + 1}" for i in foreign]
        seconds = rng.integers(0, 86_400, len(frame))
        midnight = pd.Timestamp(day, tz="UTC")
        frame["ts"] = [
            (midnight + pd.Timedelta(seconds=int(s))).strftime("%Y-%m-%dT%H:%M:%SZ")
            for s in seconds
        ]
        frame["src_port"] = rng.integers(1024, 65536, len(frame))
        frames.append(frame)

        doh = counts["doh_sni"] + counts["doh_suffix"] + counts["doh_ip"]
        handshakes = (
            counts["doh_sni"] + counts["doh_suffix"] + counts["dot"] + counts["https"]
        )
        expected.append(
            DailyCounts(
                date=day,
                doh=doh,
                dot=counts["dot"],
                doq=counts["doq"],
                dns=counts["dns"],
                total=local_total,
                tls_established=handshakes,
                port443=doh + counts["https"] + counts["failed_tls"],
                unique_src_ips=min(sources_per_day, local_total),
            )
        )
    if frames:
        flows = pd.concat(frames, ignore_index=True)
    else:
        flows = pd.DataFrame(columns=FLOW_COLUMNS)
    flows = flows.iloc[rng.permutation(len(flows))].reset_index(drop=True)
    return flows[FLOW_COLUMNS], expected
