"""encdns-census - Discover DoH resolvers and measure encrypted DNS adoption."""

__version__ = "0.1.0"

from .analyzer import FlowAnalyzer, aggregate_daily, classify
from .models import (
    DailyCounts,
    ProbeTarget,
    VerificationMatrix,
    VerificationMethod,
)
from .orchestrator import ScanOrchestrator, run_scan
from .prober import DohProber, verify_endpoint
from .reporter import ReportRenderer
from .statistics import adf_test

__all__ = [
    "FlowAnalyzer",
    "aggregate_daily",
    "classify",
    "DailyCounts",
    "ProbeTarget",
    "VerificationMatrix",
    "VerificationMethod",
    "ScanOrchestrator",
    "run_scan",
    "DohProber",
    "verify_endpoint",
    "ReportRenderer",
    "adf_test",
]
