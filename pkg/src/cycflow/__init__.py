"""Complete cyclic subtask-graph orchestration with baselines, a TextCraft simulator and metrics."""

from .graph import DepDagPlan, Regime, SubtaskNode, TaskGraph, build_complete_graph
from .records import EpisodeLog, Outcome

__all__ = ["DepDagPlan", "EpisodeLog", "Outcome", "Regime", "SubtaskNode", "TaskGraph", "build_complete_graph"]
__version__ = "0.1.0"
