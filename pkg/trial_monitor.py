"""
Trial resource monitoring
"""
import logging
import time
from typing import Dict

import psutil

WALL_BUDGET_S = 10.0
_RSS_EVERY = 50


class TrialMonitor:
    """Wall clock, peak memory and solver effort of a single trial"""

    def __init__(self, budget_s: float = WALL_BUDGET_S):
        self.process = psutil.Process()
        self.start_time = time.perf_counter()
        self.budget_s = budget_s
        self.metrics = {
            "physics_steps": 0,
            "solver_iterations": 0,
            "max_solver_iterations": 0,
            "peak_rss_mb": self._rss_mb(),
        }

    def _rss_mb(self) -> float:
        return self.process.memory_info().rss / (1024 ** 2)

    def record_step(self, solver_iterations: int):
        self.metrics["physics_steps"] += 1
        self.metrics["solver_iterations"] += solver_iterations
        self.metrics["max_solver_iterations"] = max(self.metrics["max_solver_iterations"], solver_iterations)
        if self.metrics["physics_steps"] % _RSS_EVERY == 0:
            self.metrics["peak_rss_mb"] = max(self.metrics["peak_rss_mb"], self._rss_mb())

    @property
    def elapsed(self) -> float:
        return time.perf_counter() - self.start_time

    def get_summary(self) -> Dict:
        """Usage so far; warns once the trial exceeds its wall-clock budget"""
        self.metrics["peak_rss_mb"] = max(self.metrics["peak_rss_mb"], self._rss_mb())
        elapsed = self.elapsed
        steps = self.metrics["physics_steps"]
        if elapsed > self.budget_s:
            logging.warning(f"Trial took {elapsed:.1f}s wall time (budget {self.budget_s:.0f}s)")
        return {
            "wall_time_s": elapsed,
            "peak_rss_mb": self.metrics["peak_rss_mb"],
            "physics_steps": steps,
            "mean_solver_iterations": self.metrics["solver_iterations"] / steps if steps else 0.0,
            "max_solver_iterations": self.metrics["max_solver_iterations"],
        }
