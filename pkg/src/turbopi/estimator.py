"""Scikit-learn style estimator wrapping the recovery engine."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .calibration import stored_threshold_a
from .codec import (ChannelModel, GeneratorSpec, build_trellis,
                    invert_interleaver, snr_db_to_noise_std)
from .recovery import run_recovery
from .stopping import StoppingMonitor, ThresholdPair


def validate_observation_matrix(arr, name: str) -> np.ndarray:
    """Coerce one observation stream to a finite 2-D float64 matrix."""
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D (blocks by positions), "
                         f"got shape {arr.shape}")
    if arr.shape[1] < 4:
        raise ValueError(f"{name} needs at least 4 positions per block")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite samples")
    return arr


class InterleaverRecoverer(BaseEstimator, TransformerMixin):
    """Estimate a turbo-code interleaver from noisy channel observations.

    ``fit(X, Z)`` consumes systematic samples ``X`` and second-encoder
    parity samples ``Z`` (both shaped (blocks, positions)) and learns the
    permutation column by column.  ``transform`` then applies the learned
    permutation to bit/sample matrices, ``inverse_transform`` undoes it.

    Parameters
    ----------
    feedforward, feedback, memory : int
        Generator of the known second constituent encoder.
    noise_std : float, optional
        Channel noise standard deviation; exactly one of ``noise_std``
        and ``snr_db`` must be given.
    snr_db : float, optional
        Channel quality as Es/N0 in dB.
    early_stopping : bool
        Abort once the score-gap statistic indicates failure.
    threshold_a : float, optional
        Gap threshold; None picks the stored calibration for the block
        length (solved live for uncommon lengths).
    threshold_b : int
        Consecutive below-threshold iterations required to stop.
    candidate_policy : {"all", "unused"}
    keep_trace : bool
        Expose per-iteration scores and gap statistics after fitting.

    Attributes
    ----------
    permutation_ : ndarray
        Recovered positions, one per completed iteration.
    stopped_early_ : bool
    stop_iteration_ : int
    score_trace_, epsilon_trace_ : ndarray
        Present when ``keep_trace`` is True.
    """

    def __init__(self, feedforward: int = 0b10111, feedback: int = 0b11001,
                 memory: int = 4, noise_std: float | None = None,
                 snr_db: float | None = None, early_stopping: bool = False,
                 threshold_a: float | None = None, threshold_b: int = 5,
                 candidate_policy: str = "all", keep_trace: bool = True):
        self.feedforward = feedforward
        self.feedback = feedback
        self.memory = memory
        self.noise_std = noise_std
        self.snr_db = snr_db
        self.early_stopping = early_stopping
        self.threshold_a = threshold_a
        self.threshold_b = threshold_b
        self.candidate_policy = candidate_policy
        self.keep_trace = keep_trace

    def _resolved_channel(self) -> ChannelModel:
        if (self.noise_std is None) == (self.snr_db is None):
            raise ValueError("give exactly one of noise_std and snr_db")
        std = self.noise_std if self.noise_std is not None \
            else snr_db_to_noise_std(self.snr_db)
        return ChannelModel(noise_std=std)

    def fit(self, X, Z):
        """Recover the permutation from observation matrices X and Z."""
        x = validate_observation_matrix(X, "X")
        z = validate_observation_matrix(Z, "Z")
        if x.shape != z.shape:
            raise ValueError(f"X {x.shape} and Z {z.shape} differ in shape")
        channel = self._resolved_channel()
        trellis = build_trellis(
            GeneratorSpec(self.feedforward, self.feedback, self.memory))
        monitor = None
        if self.early_stopping:
            a = self.threshold_a
            if a is None:
                a = stored_threshold_a(x.shape[1])
            monitor = StoppingMonitor(ThresholdPair(a=a, b=self.threshold_b))
        result = run_recovery(trellis, channel, x, z, monitor=monitor,
                              candidate_policy=self.candidate_policy,
                              keep_trace=self.keep_trace)
        self.n_features_in_ = x.shape[1]
        self.permutation_ = result.permutation
        self.stopped_early_ = result.stopped_early
        self.stop_iteration_ = result.stop_iteration
        if self.keep_trace:
            self.score_trace_ = result.score_trace
            self.epsilon_trace_ = result.epsilon_trace
        return self

    def _full_permutation(self) -> np.ndarray:
        if not hasattr(self, "permutation_"):
            raise NotFittedError(
                "this InterleaverRecoverer instance is not fitted yet")
        if self.permutation_.size != self.n_features_in_:
            raise ValueError(
                "recovery stopped early; no complete permutation to apply")
        return self.permutation_

    def transform(self, U):
        """Apply the learned permutation to the columns of U."""
        pi = self._full_permutation()
        U = np.asarray(U)
        if U.shape[-1] != pi.size:
            raise ValueError(f"expected {pi.size} columns, got {U.shape[-1]}")
        return U[..., pi]

    def inverse_transform(self, U):
        """Undo the learned permutation on the columns of U."""
        pi = self._full_permutation()
        U = np.asarray(U)
        if U.shape[-1] != pi.size:
            raise ValueError(f"expected {pi.size} columns, got {U.shape[-1]}")
        return U[..., invert_interleaver(pi)]
