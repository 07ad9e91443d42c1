"""Forward state-belief recursion over the second encoder's trellis.

Beliefs live in the log domain and are renormalized after every step so
that logsumexp(log_probs) == 0.  All reductions use exact logsumexp; no
max-log approximation anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codec import LOG_ZERO, ChannelModel, Trellis, bit_log_likelihoods


def logsumexp_last(x: np.ndarray) -> np.ndarray:
    """Exact logsumexp along the last axis (keeps dims)."""
    m = np.max(x, axis=-1, keepdims=True)
    return m + np.log(np.sum(np.exp(x - m), axis=-1, keepdims=True))


@dataclass
class StateBelief:
    """Posterior over trellis states after ``step_index`` forward steps."""

    log_probs: np.ndarray
    step_index: int = 0


def init_belief(num_states: int) -> StateBelief:
    """Point mass on the all-zero state (encoders start cleared)."""
    log_probs = np.full(num_states, LOG_ZERO, dtype=np.float64)
    log_probs[0] = 0.0
    return StateBelief(log_probs=log_probs, step_index=0)


def step_beliefs(log_beliefs: np.ndarray, ll_input: np.ndarray,
                 ll_output: np.ndarray, trellis: Trellis) -> np.ndarray:
    """Advance a batch of beliefs by one trellis section.

    Parameters
    ----------
    log_beliefs : ndarray, shape (M, N)
        One normalized log belief row per block.
    ll_input : ndarray, shape (M, 2)
        ``ll_input[s, a] = log p(input observation of block s | input a)``.
    ll_output : ndarray, shape (M, 2)
        ``ll_output[s, b] = log p(parity observation of block s | parity b)``.
    trellis : Trellis

    Returns
    -------
    ndarray, shape (M, N)
        New normalized log beliefs.
    """
    contrib = (log_beliefs[:, trellis.in_state]
               + ll_input[:, trellis.in_input]
               + ll_output[:, trellis.in_bit])        # (M, N, 2)
    new = np.logaddexp(contrib[..., 0], contrib[..., 1])
    norm = logsumexp_last(new)
    assert np.isfinite(norm).all(), "belief update lost all probability mass"
    return new - norm


def forward_step(belief: StateBelief, x_sample: float, z_sample: float,
                 trellis: Trellis, channel: ChannelModel) -> StateBelief:
    """One-block forward update from a committed (x, z) observation pair.

    ``x_sample`` is the systematic sample at the position committed this
    iteration, ``z_sample`` the parity sample of the current trellis
    section.  Returns a new belief; the input is left untouched.
    """
    if belief.log_probs.shape != (trellis.num_states,):
        raise ValueError("belief size does not match trellis")
    llx = np.array(bit_log_likelihoods(x_sample, channel), dtype=np.float64)
    llz = np.array(bit_log_likelihoods(z_sample, channel), dtype=np.float64)
    new = step_beliefs(belief.log_probs[None, :], llx[None, :], llz[None, :],
                       trellis)
    return StateBelief(log_probs=new[0], step_index=belief.step_index + 1)
