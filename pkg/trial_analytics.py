"""
Suite analytics: success rates, completion times and CF path statistics
"""
import datetime
import logging
import statistics
from collections import Counter, defaultdict
from typing import Dict, List, Optional

import numpy as np

STEP_ORDER = ("REACH_PLANE", "SEARCH", "WEDGE", "ROT_ALIGN", "TILT_CORRECT", "INSERT", "RETRACT")


def _median(values: List[float]) -> Optional[float]:
    return float(statistics.median(values)) if values else None


class SuiteAnalytics:
    def __init__(self):
        self.report_history: List[Dict] = []

    def generate_suite_report(self, suite_name: str, results: List, expectations: Dict[str, str]) -> Dict:
        """Per-scenario summary of a finished suite"""
        grouped = defaultdict(list)
        for result in sorted(results, key=lambda r: (r.scenario, r.seed)):
            grouped[result.scenario].append(result)

        scenarios = {name: self._scenario_summary(trials, expectations.get(name, "success"))
                     for name, trials in grouped.items()}
        report = {
            "suite": suite_name,
            "generated_at": datetime.datetime.now().isoformat(timespec="seconds"),
            "trials": len(results),
            "scenarios": scenarios,
            "all_as_expected": all(s["as_expected"] for s in scenarios.values()),
        }
        self.report_history = (self.report_history + [report])[-30:]
        if not report["all_as_expected"]:
            missed = [name for name, s in scenarios.items() if not s["as_expected"]]
            logging.warning(f"Suite {suite_name}: unexpected outcome in {', '.join(missed)}")
        return report

    def _scenario_summary(self, trials: List, expected: str) -> Dict:
        successes = [t for t in trials if t.success]
        rate = len(successes) / len(trials)
        step_times = {
            step: _median([t.step_times[step] for t in successes if step in t.step_times])
            for step in STEP_ORDER
        }
        failures = Counter((t.failure_reason or "").split(":")[0] for t in trials if not t.success)
        as_expected = rate > 0 if expected == "success" else rate == 0
        return {
            "expected": expected,
            "trials": len(trials),
            "seeds": [t.seed for t in trials],
            "successes": len(successes),
            "success_rate": rate,
            "median_explore_s": _median([t.explore_time for t in successes]),
            "median_insert_s": _median([t.insert_time for t in successes]),
            "median_slip": _median([float(np.linalg.norm(t.slip[:3])) for t in trials]),
            "median_completion_s": _median([t.completion_time for t in successes]),
            "completion_spread_s": float(np.std([t.completion_time for t in successes])) if successes else None,
            "median_step_s": step_times,
            "path_pass_rate": sum(1 for t in trials if t.path.passed) / len(trials),
            "failures": dict(failures),
            "median_wall_s": _median([t.wall_time for t in trials]),
            "peak_rss_mb": max(t.peak_rss_mb for t in trials),
            "as_expected": as_expected,
        }

    def format_table(self, report: Dict) -> str:
        """Fixed-width text rendering of a suite report"""
        header = (f"{'scenario':<22}{'success':>9}{'explore s':>10}{'insert s':>10}{'slip mm':>9}"
                  f"{'path ok':>9}{'wall s':>8}  expected")
        lines = [f"Suite {report['suite']} ({report['trials']} trials)", header, "-" * len(header)]
        for name, s in report["scenarios"].items():
            explore, insert, wall = (f"{s[key]:.1f}" if s[key] is not None else "-"
                                     for key in ("median_explore_s", "median_insert_s", "median_wall_s"))
            slip = f"{s['median_slip'] * 1e3:.2f}" if s["median_slip"] is not None else "-"
            flag = s["expected"] if s["as_expected"] else f"{s['expected']} (MISSED)"
            lines.append(f"{name:<22}{s['success_rate']:>8.0%} {explore:>10}{insert:>10}{slip:>9}"
                         f"{s['path_pass_rate']:>8.0%} {wall:>8}  {flag}")
        return "\n".join(lines) + "\n"


# Global analytics instance
suite_analytics = SuiteAnalytics()
