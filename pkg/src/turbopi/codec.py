"""Turbo transmitter model: RSC trellis, interleaver, BPSK/AWGN channel.

Conventions shared by the whole package:

* Generator polynomials are integer bit masks, bit ``i`` holding the
  coefficient of ``D^i``.  The classic memory-4 code (1+D+D^2+D^4)/(1+D^3+D^4)
  is ``GeneratorSpec(feedforward=0b10111, feedback=0b11001, memory=4)``,
  i.e. masks 23 and 25.
* Interleavers are 0-based numpy index arrays ``pi``; the interleaved
  sequence is ``u[pi]`` (position ``i`` of the permuted stream reads
  position ``pi[i]`` of the original).
* BPSK maps bit 0 -> +1.0 and bit 1 -> -1.0.
* SNR is Es/N0 in dB with unit symbol energy and noise variance
  ``sigma**2`` per dimension: ``snr_db = -10*log10(2*sigma**2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# log(0) stand-in: large negative finite value so sums of a few of them
# stay representable and exp() underflows to exactly 0.0
LOG_ZERO = -1e300

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GeneratorSpec:
    """Rational generator of a recursive systematic convolutional code.

    Parameters
    ----------
    feedforward : int
        Numerator mask, at most ``memory + 1`` bits.
    feedback : int
        Denominator mask, at most ``memory + 1`` bits; bit 0 must be set
        (the realization is recursive in the current input).
    memory : int
        Number of delay cells; the trellis has ``2**memory`` states.
    """

    feedforward: int
    feedback: int
    memory: int

    def __post_init__(self) -> None:
        if self.memory < 1:
            raise ValueError("memory must be >= 1")
        width = self.memory + 1
        for name, mask in (("feedforward", self.feedforward),
                           ("feedback", self.feedback)):
            if not 0 < mask < (1 << width):
                raise ValueError(
                    f"{name} mask {mask} does not fit in {width} bits")
        if not self.feedback & 1:
            raise ValueError("feedback mask must have bit 0 set")

    @property
    def num_states(self) -> int:
        return 1 << self.memory


class Trellis:
    """Transition tables of an RSC encoder in controller canonical form.

    State integer bit ``j`` holds the register cell ``w_{t-1-j}`` (bit 0 is
    the most recent feedback value).  Tables, all shape ``(2, N)`` indexed
    by ``[input_bit, state]``:

    * ``next_state`` -- successor state,
    * ``output_bit`` -- parity bit emitted on that edge.

    ``in_state``, ``in_input``, ``in_bit`` (shape ``(N, 2)``) list the two
    incoming edges of every state for the forward recursion.
    """

    def __init__(self, spec: GeneratorSpec):
        self.spec = spec
        n = spec.num_states
        self.num_states = n
        next_state = np.empty((2, n), dtype=np.int64)
        output_bit = np.empty((2, n), dtype=np.int64)
        for state in range(n):
            for a in (0, 1):
                # feedback taps see the input alongside the register cells
                reg_in = a | (state << 1)
                f = (spec.feedback & reg_in).bit_count() & 1
                reg_out = f | (state << 1)
                output_bit[a, state] = (spec.feedforward & reg_out).bit_count() & 1
                next_state[a, state] = reg_out & (n - 1)
        self.next_state = next_state
        self.output_bit = output_bit

        in_state = np.empty((n, 2), dtype=np.int64)
        in_input = np.empty((n, 2), dtype=np.int64)
        in_bit = np.empty((n, 2), dtype=np.int64)
        fill = np.zeros(n, dtype=np.int64)
        for state in range(n):
            for a in (0, 1):
                dest = next_state[a, state]
                k = fill[dest]
                in_state[dest, k] = state
                in_input[dest, k] = a
                in_bit[dest, k] = output_bit[a, state]
                fill[dest] = k + 1
        if not (fill == 2).all():
            raise AssertionError("trellis is not 2-in/2-out regular")
        self.in_state = in_state
        self.in_input = in_input
        self.in_bit = in_bit

    def __repr__(self) -> str:  # pragma: no cover
        s = self.spec
        return (f"Trellis(ff={s.feedforward:#o}, fb={s.feedback:#o}, "
                f"memory={s.memory})")


def build_trellis(spec: GeneratorSpec) -> Trellis:
    """Expand a generator spec into transition tables."""
    return Trellis(spec)


def encode_rsc(trellis: Trellis, bits, start_state: int = 0):
    """Run the RSC encoder over a bit sequence.

    Parameters
    ----------
    trellis : Trellis
    bits : array_like of {0, 1}
    start_state : int

    Returns
    -------
    parity : ndarray of int64
        One parity bit per input bit.
    final_state : int
        Register state after the last bit (no termination is appended).
    """
    bits = np.asarray(bits, dtype=np.int64)
    if bits.ndim != 1:
        raise ValueError("bits must be a 1-D sequence")
    if bits.size and (bits.min() < 0 or bits.max() > 1):
        raise ValueError("bits must be 0/1 valued")
    if not 0 <= start_state < trellis.num_states:
        raise ValueError(f"start_state {start_state} out of range")
    parity = np.empty(bits.size, dtype=np.int64)
    state = start_state
    next_state = trellis.next_state
    output_bit = trellis.output_bit
    for t, a in enumerate(bits):
        parity[t] = output_bit[a, state]
        state = int(next_state[a, state])
    return parity, state


def encode_rsc_batch(trellis: Trellis, bits, start_state: int = 0):
    """Run the RSC encoder over a batch of bit sequences at once.

    Vectorizes across rows (one register per row), stepping the time axis
    in Python; equivalent to calling :func:`encode_rsc` on each row.

    Parameters
    ----------
    trellis : Trellis
    bits : array_like of {0, 1}, shape (num_sequences, length)
    start_state : int

    Returns
    -------
    parity : ndarray of int64, shape (num_sequences, length)
    final_states : ndarray of int64, shape (num_sequences,)
    """
    bits = np.asarray(bits, dtype=np.int64)
    if bits.ndim != 2:
        raise ValueError("bits must be a 2-D array")
    if bits.size and (bits.min() < 0 or bits.max() > 1):
        raise ValueError("bits must be 0/1 valued")
    if not 0 <= start_state < trellis.num_states:
        raise ValueError(f"start_state {start_state} out of range")
    states = np.full(bits.shape[0], start_state, dtype=np.int64)
    parity = np.empty_like(bits)
    next_state = trellis.next_state
    output_bit = trellis.output_bit
    for t in range(bits.shape[1]):
        a = bits[:, t]
        parity[:, t] = output_bit[a, states]
        states = next_state[a, states]
    return parity, states


def validate_permutation(pi) -> np.ndarray:
    """Check that pi is a permutation of 0..K-1 and return it as int64."""
    pi = np.asarray(pi, dtype=np.int64)
    if pi.ndim != 1:
        raise ValueError("interleaver must be 1-D")
    if not np.array_equal(np.sort(pi), np.arange(pi.size)):
        raise ValueError("interleaver is not a permutation of 0..K-1")
    return pi


def random_interleaver(k: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random permutation of 0..k-1."""
    return rng.permutation(k)


def interleave(u, pi) -> np.ndarray:
    """Permute a sequence: output position i carries u[pi[i]]."""
    u = np.asarray(u)
    pi = validate_permutation(pi)
    if u.shape[-1] != pi.size:
        raise ValueError("sequence length does not match interleaver size")
    return u[..., pi]


def invert_interleaver(pi) -> np.ndarray:
    """Inverse permutation: interleave(interleave(u, pi), invert(pi)) == u."""
    return np.argsort(validate_permutation(pi), kind="stable")


def turbo_encode(trellis: Trellis, pi, u, second_trellis: Trellis | None = None):
    """Encode one information block through both constituent encoders.

    The first encoder sees ``u`` directly, the second sees ``u[pi]``.  Both
    start in the all-zero state and are left unterminated.

    Returns
    -------
    v, w : ndarray
        Parity streams of the first and second encoder.
    """
    u = np.asarray(u, dtype=np.int64)
    pi = validate_permutation(pi)
    if u.size != pi.size:
        raise ValueError("block length does not match interleaver size")
    v, _ = encode_rsc(trellis, u)
    w, _ = encode_rsc(second_trellis or trellis, u[pi])
    return v, w


def snr_db_to_noise_std(snr_db: float) -> float:
    """Noise standard deviation for a given Es/N0 in dB."""
    return math.sqrt(10.0 ** (-snr_db / 10.0) / 2.0)


def noise_std_to_snr_db(noise_std: float) -> float:
    """Es/N0 in dB for a given noise standard deviation."""
    return -10.0 * math.log10(2.0 * noise_std * noise_std)


@dataclass(frozen=True)
class ChannelModel:
    """Memoryless AWGN channel on BPSK symbols.

    A model built via :meth:`from_snr_db` reports that exact SNR back from
    :attr:`snr_db`; chaining the two conversion formulas alone costs a few
    ulp.
    """

    noise_std: float

    def __post_init__(self) -> None:
        if not self.noise_std > 0.0:
            raise ValueError("noise_std must be > 0")

    @classmethod
    def from_snr_db(cls, snr_db: float) -> "ChannelModel":
        channel = cls(snr_db_to_noise_std(snr_db))
        object.__setattr__(channel, "_snr_db", float(snr_db))
        return channel

    @property
    def noise_var(self) -> float:
        return self.noise_std * self.noise_std

    @property
    def snr_db(self) -> float:
        cached = getattr(self, "_snr_db", None)
        return noise_std_to_snr_db(self.noise_std) if cached is None else cached


def transmit(bits, channel: ChannelModel, rng: np.random.Generator) -> np.ndarray:
    """BPSK-modulate bits and add white Gaussian noise."""
    bits = np.asarray(bits)
    symbols = 1.0 - 2.0 * bits
    return symbols + channel.noise_std * rng.standard_normal(bits.shape)


def bit_log_likelihoods(samples, channel: ChannelModel):
    """Per-sample log densities under each transmitted bit.

    Returns
    -------
    ll0, ll1 : ndarray
        ``ll0[i] = log p(samples[i] | bit 0)`` and likewise for bit 1,
        including the Gaussian normalization constant.
    """
    samples = np.asarray(samples, dtype=np.float64)
    inv_two_var = 0.5 / channel.noise_var
    const = -math.log(channel.noise_std) - _HALF_LOG_2PI
    d0 = samples - 1.0
    d1 = samples + 1.0
    ll0 = const - d0 * d0 * inv_two_var
    ll1 = const - d1 * d1 * inv_two_var
    return ll0, ll1


def marginal_log_likelihood(samples, channel: ChannelModel) -> np.ndarray:
    """log p(sample) under an equiprobable bit prior."""
    ll0, ll1 = bit_log_likelihoods(samples, channel)
    return np.logaddexp(ll0, ll1) + math.log(0.5)


@dataclass
class ReceivedBlock:
    """Soft observations of one transmitted block.

    ``x`` are the systematic samples, ``y`` the first-encoder parity
    samples (carried for completeness, not used by recovery), ``z`` the
    second-encoder parity samples.
    """

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    block_id: int = 0
