"""Role-based multi-agent orchestration with monitored recovery and minimal-change replanning."""

__version__ = "0.1.0"
