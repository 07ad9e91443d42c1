"""Incremental interleaver recovery from soft observations.

One interleaver value is recovered per iteration.  At iteration ``i`` the
per-block forward beliefs summarize everything committed so far; each
candidate position ``j`` is scored by the joint likelihood of its
systematic samples with the i-th parity samples,

    q[s, i, j] = (1 / p(x[s, j])) * sum_a p(x[s, j] | a)
                 * sum_alpha p(z[s, i] | output(a, alpha)) * h[s](alpha)

accumulated over blocks in the log domain:

    l[i, j] = sum_s log q[s, i, j]     (constant offsets dropped).

The argmax is committed and the beliefs advance one trellis section.
Scores are shift-invariant, so neither the channel normalization constant
nor the candidate prior is ever materialized.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .codec import (LOG_ZERO, ChannelModel, Trellis, bit_log_likelihoods,
                    marginal_log_likelihood)
from .forward import logsumexp_last, step_beliefs
from .stopping import StoppingMonitor, epsilon_statistic

_POLICIES = ("all", "unused")


@dataclass
class ScoreVector:
    """Candidate scores for one iteration (-inf marks excluded positions)."""

    values: np.ndarray
    iteration: int


class RecoverySession:
    """Mutable state of one recovery run over M observation blocks.

    Parameters
    ----------
    trellis : Trellis
        Second constituent encoder (known to the receiver).
    channel : ChannelModel
    x : ndarray, shape (M, K)
        Systematic soft samples, one row per block.
    z : ndarray, shape (M, K)
        Second-encoder parity soft samples, same layout.
    candidate_policy : {"all", "unused"}
        Whether already-committed positions stay in the candidate set.

    Notes
    -----
    Per-sample log likelihoods and marginals are precomputed once here;
    iterations touch only O(M*K) precomputed memory.  A session is not
    safe for concurrent mutation.
    """

    def __init__(self, trellis: Trellis, channel: ChannelModel, x, z,
                 candidate_policy: str = "all"):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        if x.ndim != 2 or z.ndim != 2:
            raise ValueError("x and z must be 2-D (blocks by positions)")
        if x.shape != z.shape:
            raise ValueError(f"x {x.shape} and z {z.shape} differ in shape")
        if not (np.isfinite(x).all() and np.isfinite(z).all()):
            raise ValueError("observations must be finite")
        if candidate_policy not in _POLICIES:
            raise ValueError(f"candidate_policy must be one of {_POLICIES}")
        self.trellis = trellis
        self.channel = channel
        self.num_blocks, self.block_length = x.shape
        self.candidate_policy = candidate_policy
        self.x = x
        self.z = z

        ll0, ll1 = bit_log_likelihoods(x, channel)
        marg = marginal_log_likelihood(x, channel)
        # scores use p(x|a)/p(x); fold the division in once
        self._x_ll0 = ll0 - marg
        self._x_ll1 = ll1 - marg
        z0, z1 = bit_log_likelihoods(z, channel)
        self._z_ll = np.stack([z0, z1], axis=-1)      # (M, K, 2)

        self.log_beliefs = np.full((self.num_blocks, trellis.num_states),
                                   LOG_ZERO, dtype=np.float64)
        self.log_beliefs[:, 0] = 0.0
        self.recovered: list[int] = []
        self.iteration = 1      # 1-based index of the value being recovered
        # scratch for the per-iteration (M, K) score math
        self._buf0 = np.empty_like(x)
        self._buf1 = np.empty_like(x)

    @property
    def done(self) -> bool:
        return self.iteration > self.block_length

    def candidate_mask(self) -> np.ndarray:
        mask = np.ones(self.block_length, dtype=bool)
        if self.candidate_policy == "unused":
            mask[self.recovered] = False
        return mask


def score_candidates(session: RecoverySession) -> ScoreVector:
    """Log scores of every candidate position for the current iteration."""
    if session.done:
        raise ValueError("session is exhausted: all values recovered")
    tre = session.trellis
    llz = session._z_ll[:, session.iteration - 1, :]          # (M, 2)
    # G[s, a] = logsumexp_alpha( llz[s, output(a, alpha)] + belief[s, alpha] )
    edge = np.take(llz, tre.output_bit, axis=1)
    edge += session.log_beliefs[:, None, :]
    g = logsumexp_last(edge)[..., 0]                          # (M, 2)
    b0, b1 = session._buf0, session._buf1
    np.add(session._x_ll0, g[:, :1], out=b0)
    np.add(session._x_ll1, g[:, 1:], out=b1)
    np.logaddexp(b0, b1, out=b0)                              # (M, K)
    values = b0.sum(axis=0)
    if session.candidate_policy == "unused" and session.recovered:
        values[session.recovered] = -np.inf
    return ScoreVector(values=values, iteration=session.iteration)


def select_parameter(scores: ScoreVector) -> tuple[int, float]:
    """Pick the winning candidate (lowest index on exact ties).

    Returns the 0-based position and its score.  Raises if fewer than two
    finite candidates remain (possible only under the "unused" policy at
    the final iteration).
    """
    values = scores.values
    finite = np.isfinite(values)
    if finite.sum() < 2:
        raise ValueError("fewer than two candidates remain")
    j = int(np.argmax(np.where(finite, values, -np.inf)))
    return j, float(values[j])


def advance(session: RecoverySession, j_hat: int) -> RecoverySession:
    """Commit position ``j_hat`` for the current iteration.

    Appends to ``session.recovered``, advances every block's belief one
    trellis section, and bumps the iteration counter.  Mutates and
    returns the same session.
    """
    if session.done:
        raise ValueError("session is exhausted: all values recovered")
    if not 0 <= j_hat < session.block_length:
        raise ValueError(f"candidate {j_hat} out of range")
    if session.candidate_policy == "unused" and j_hat in session.recovered:
        raise ValueError(f"candidate {j_hat} already committed")
    i = session.iteration
    ll_input = np.column_stack((session._x_ll0[:, j_hat],
                                session._x_ll1[:, j_hat]))
    ll_output = session._z_ll[:, i - 1, :]
    session.log_beliefs = step_beliefs(session.log_beliefs, ll_input,
                                       ll_output, session.trellis)
    session.recovered.append(int(j_hat))
    session.iteration = i + 1
    return session


@dataclass
class RecoveryResult:
    """Outcome of a (possibly early-stopped) recovery run."""

    permutation: np.ndarray
    stopped_early: bool
    stop_iteration: int
    score_trace: np.ndarray = field(default_factory=lambda: np.empty(0))
    epsilon_trace: np.ndarray = field(default_factory=lambda: np.empty(0))


def run_recovery(trellis: Trellis, channel: ChannelModel, x, z,
                 monitor: StoppingMonitor | None = None,
                 candidate_policy: str = "all",
                 keep_trace: bool = True) -> RecoveryResult:
    """Full recovery loop: score, select, observe, advance.

    Parameters
    ----------
    trellis, channel, x, z, candidate_policy
        Forwarded to :class:`RecoverySession`.
    monitor : StoppingMonitor or None
        None disables early stopping; the loop then always runs all K
        iterations.  The monitor only ever reads the epsilon trace, it
        never influences scores or selections, so a stopped run is a
        prefix of the equivalent unstopped run.
    keep_trace : bool
        Record per-iteration winning scores and epsilon values.

    Returns
    -------
    RecoveryResult
        ``permutation`` holds the committed positions (length equals
        ``stop_iteration``); epsilon entries are NaN where the statistic
        was not computable (fewer than three finite candidates).
    """
    session = RecoverySession(trellis, channel, x, z, candidate_policy)
    k = session.block_length
    score_trace = np.empty(k) if keep_trace else None
    eps_trace = np.empty(k) if keep_trace else None
    stopped = False
    stop_iteration = k
    for i in range(1, k + 1):
        scores = score_candidates(session)
        finite = np.isfinite(scores.values)
        n_finite = int(finite.sum())
        if n_finite >= 2:
            j_hat, l_max = select_parameter(scores)
        else:
            # lone survivor under the "unused" policy: nothing to rank
            j_hat = int(np.flatnonzero(finite)[0])
            l_max = float(scores.values[j_hat])
        eps = epsilon_statistic(scores.values) if n_finite >= 3 else np.nan
        if keep_trace:
            score_trace[i - 1] = l_max
            eps_trace[i - 1] = eps
        advance(session, j_hat)
        if monitor is not None and not np.isnan(eps) and monitor.observe(eps):
            stopped = True
            stop_iteration = i
            break
    return RecoveryResult(
        permutation=np.asarray(session.recovered, dtype=np.int64),
        stopped_early=stopped,
        stop_iteration=stop_iteration,
        score_trace=score_trace[:stop_iteration] if keep_trace else np.empty(0),
        epsilon_trace=eps_trace[:stop_iteration] if keep_trace else np.empty(0),
    )
