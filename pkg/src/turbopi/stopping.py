"""Early-stopping rule driven by the normalized score gap.

Each recovery iteration produces a score vector; the statistic

    epsilon = (max - mean(rest)) / std(rest)

measures how far the winning candidate sits above the field.  When the
recovery has failed the scores are exchangeable noise and epsilon hovers
around the normalized extreme of the field, so a run of small values is
evidence of failure.  The monitor fires after ``b`` consecutive
iterations with ``epsilon < a``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# relative floor under which the score spread counts as degenerate
_SIGMA_FLOOR = 1e-12


@dataclass(frozen=True)
class ThresholdPair:
    """Stop rule parameters: gap threshold ``a``, run length ``b``."""

    a: float
    b: int

    def __post_init__(self) -> None:
        if not self.a > 0.0:
            raise ValueError("threshold a must be > 0")
        if self.b < 1:
            raise ValueError("run length b must be >= 1")


def epsilon_statistic(values) -> float:
    """Normalized gap between the best score and the rest of the field.

    Parameters
    ----------
    values : array_like
        Candidate scores; non-finite entries (excluded candidates) are
        ignored.  At least three finite values are required.

    Returns
    -------
    float
        ``(max - u) / sigma`` where ``u`` and ``sigma`` are the mean and
        (population) standard deviation of the non-maximal finite scores.
        A degenerate spread returns ``inf`` when the maximum sits above
        the rest, ``0.0`` when everything is equal.
    """
    values = np.asarray(values, dtype=np.float64)
    finite = values[np.isfinite(values)]
    if finite.size < 3:
        raise ValueError("epsilon needs at least three finite scores")
    top = int(np.argmax(finite))
    l_max = finite[top]
    rest = np.delete(finite, top)
    u = rest.mean()
    var = (rest * rest).mean() - u * u
    sigma = math.sqrt(var) if var > 0.0 else 0.0
    if sigma < _SIGMA_FLOOR * max(1.0, abs(u)):
        return math.inf if l_max > u else 0.0
    return (l_max - u) / sigma


@dataclass
class StoppingMonitor:
    """Counts consecutive below-threshold epsilon observations.

    The counter is clamped to ``thresholds.b``; ``observe`` returns True
    exactly from the observation that completes the run onward.
    """

    thresholds: ThresholdPair
    keep_history: bool = False
    consecutive: int = 0
    history: list | None = field(init=False, default=None)

    def __post_init__(self) -> None:
        if self.keep_history:
            self.history = []

    def observe(self, epsilon: float) -> bool:
        """Feed one epsilon value; True means stop now."""
        if epsilon < self.thresholds.a:
            self.consecutive = min(self.consecutive + 1, self.thresholds.b)
        else:
            self.consecutive = 0
        if self.history is not None:
            self.history.append(float(epsilon))
        return self.consecutive >= self.thresholds.b

    def reset(self) -> None:
        self.consecutive = 0
        if self.history is not None:
            self.history.clear()


def first_stop_iteration(epsilons, thresholds: ThresholdPair) -> int | None:
    """Replay the monitor over a recorded epsilon trace.

    NaN entries mark iterations where the statistic was not computable;
    they are skipped exactly as the live loop skips them (the counter is
    neither advanced nor reset).  Returns the 1-based iteration at which
    the rule fires, or None if it never does.
    """
    monitor = StoppingMonitor(thresholds)
    for i, eps in enumerate(np.asarray(epsilons, dtype=np.float64), start=1):
        if math.isnan(eps):
            continue
        if monitor.observe(eps):
            return i
    return None
