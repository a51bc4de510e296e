"""Autonomous deep research over a relational database and the web."""

from .config import ResearchConfig, RunSettings
from .data import Database
from .orchestrator import Orchestrator, run_research
from .report import generate_report

__all__ = ["Database", "Orchestrator", "ResearchConfig", "RunSettings", "generate_report", "run_research"]
__version__ = "0.1.0"
