"""Blind interleaver recovery for turbo codes with calibrated early stopping.

The package splits into a transmitter/channel model (`codec`), the
forward state-belief recursion (`forward`), the incremental recovery
engine (`recovery`), the score-gap stop rule (`stopping`), closed-form
threshold calibration (`calibration`), a Monte Carlo harness (`harness`),
a scikit-learn style estimator (`estimator`), and a CLI (`cli`).
"""

from .calibration import (DEFAULT_THRESHOLDS, expected_loss, expected_wasted,
                          feasibility_region, max_expected_loss, p0, p1, p2,
                          q_function, solve_threshold_a,
                          stop_time_distribution, stored_threshold_a,
                          threshold_table)
from .codec import (LOG_ZERO, ChannelModel, GeneratorSpec, ReceivedBlock,
                    Trellis, bit_log_likelihoods, build_trellis, encode_rsc,
                    encode_rsc_batch, interleave, invert_interleaver,
                    marginal_log_likelihood,
                    random_interleaver, transmit, turbo_encode)
from .estimator import InterleaverRecoverer
from .forward import StateBelief, forward_step, init_belief, step_beliefs
from .harness import (ExperimentConfig, TrialRecord, correct_probability,
                      failure_onset, return_probability_experiment, run_trial,
                      sweep, wasted_iterations)
from .recovery import (RecoveryResult, RecoverySession, ScoreVector, advance,
                       run_recovery, score_candidates, select_parameter)
from .stopping import (StoppingMonitor, ThresholdPair, epsilon_statistic,
                       first_stop_iteration)

__version__ = "0.1.0"
