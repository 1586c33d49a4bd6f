"""Name-mismatch anomaly verdicts.

A trace is flagged when the program the classifier assigns differs from the
executable it was spawned from. Verdicts compare names only; no score or
threshold is layered on top.
"""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Iterable, Optional

from procident.knn import Prediction


@dataclass(frozen=True)
class AnomalyVerdict:
    trace_id: str
    natural_name: str
    assigned_name: str
    is_anomaly: bool
    confidence: float
    low_confidence: bool = False

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def detect_mismatch(natural_name: str, prediction: Prediction, trace_id: str = "",
                    low_confidence: bool = False) -> AnomalyVerdict:
    """``confidence`` is the raw distance to the nearest neighbor; lower is stronger."""
    natural = natural_name.lower()
    assigned = prediction.label.lower()
    return AnomalyVerdict(
        trace_id=trace_id,
        natural_name=natural,
        assigned_name=assigned,
        is_anomaly=natural != assigned,
        confidence=prediction.nearest_distance,
        low_confidence=low_confidence,
    )


def write_verdicts(verdicts: Iterable[AnomalyVerdict], fh):
    for v in verdicts:
        fh.write(v.to_json() + "\n")


def summarize(verdicts: Iterable[AnomalyVerdict], skipped: Optional[list] = None) -> str:
    total: Counter = Counter()
    flagged: Counter = Counter()
    for v in verdicts:
        total[v.natural_name] += 1
        if v.is_anomaly:
            flagged[v.natural_name] += 1
    width = max([len(n) for n in total] + [len("program")])
    lines = [f"{'program':<{width}} {'traces':>7} {'anomalies':>10}"]
    for name in sorted(total):
        lines.append(f"{name:<{width}} {total[name]:>7} {flagged[name]:>10}")
    lines.append(f"{'total':<{width}} {sum(total.values()):>7} {sum(flagged.values()):>10}")
    if skipped:
        lines.append(f"skipped traces: {len(skipped)}")
    return "\n".join(lines)
