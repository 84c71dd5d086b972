"""
SA3 - Channel Attention

Cross-channel interaction: a 1-D convolution over the globally pooled
channel descriptor whose kernel length adapts to the channel count,
followed by a sigmoid gate that reweights every channel of the map.

Variants share one interface so training can switch between them:
- none:    features pass through unchanged
- fixed_k: the same gate with a constant kernel length of 3
- cis:     kernel length from kernel_size(C, γ, b)
- se:      two-layer bottleneck gate (reduction 16)

Complexity Guarantees:
- kernel_size / channel_dim: O(1), memoized
- cis_forward: O(H·W·C + C·k)
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from core import ops
from core.parameters import ParameterStore, Weights
from core.tensor import Tensor
from standards.errors import InvalidArgumentError
from standards.formal_specs import ensures, verify_complexity
from standards.performance import memoize

logger = logging.getLogger(__name__)

FIXED_KERNEL = 3
SE_REDUCTION = 16


class AttentionMode(Enum):
    NONE = "none"
    FIXED_K = "fixed_k"
    CIS = "cis"
    SE = "se"

    @classmethod
    def parse(cls, value: str) -> 'AttentionMode':
        try:
            return cls(value)
        except ValueError:
            names = ", ".join(m.value for m in cls)
            raise InvalidArgumentError(f"unknown attention mode '{value}' (expected one of {names})") from None


@memoize(maxsize=8192)
@ensures(lambda k: k >= 1 and k % 2 == 1, "kernel length must be a positive odd integer")
@verify_complexity(time="O(1)", space="O(1)")
def kernel_size(channels: int, gamma: int = 2, b: int = 1) -> int:
    """
    Adaptive kernel length for a channel count.

    t = |(log2 C − b) / γ|, rounded to the nearest odd integer with ties
    (t midway between two odds, i.e. t even) going up, at least 1, and
    clamped to the largest odd number ≤ C.

    Args:
        channels: C ≥ 2
        gamma: γ ≥ 1
        b: offset

    Raises:
        InvalidArgumentError: C < 2 or γ < 1
    """
    if channels < 2:
        raise InvalidArgumentError(f"kernel_size needs at least 2 channels, got {channels}")
    if gamma < 1:
        raise InvalidArgumentError(f"gamma must be ≥ 1, got {gamma}")
    t = abs((math.log2(channels) - b) / gamma)
    k = 2 * math.floor((t - 1.0) / 2.0 + 0.5) + 1
    k = max(k, 1)
    return min(k, ops.largest_odd_at_most(channels))


def channel_dim(k: int, gamma: int = 2, b: int = 1) -> int:
    """
    Channel count mapped to a kernel length: C = 2^(γk + b).

    Raises:
        InvalidArgumentError: k even or < 1
    """
    if k < 1 or k % 2 == 0:
        raise InvalidArgumentError(f"kernel length must be a positive odd integer, got {k}")
    return 2 ** (gamma * k + b)


@dataclass(frozen=True)
class CisConfig:
    """
    Hyperparameters of the channel gate for a map with `channels` channels.

    The learnable kernel itself lives in the ParameterStore under
    `<prefix>.kernel`; `initial_kernel()` is its starting value.
    """
    channels: int
    gamma: int = 2
    b: int = 1
    mode: AttentionMode = AttentionMode.CIS

    def __post_init__(self):
        if self.channels < 2:
            raise InvalidArgumentError(f"channel gate needs at least 2 channels, got {self.channels}")
        if self.gamma < 1:
            raise InvalidArgumentError(f"gamma must be ≥ 1, got {self.gamma}")

    @property
    def kernel_length(self) -> int:
        if self.mode is AttentionMode.CIS:
            return kernel_size(self.channels, self.gamma, self.b)
        if self.mode is AttentionMode.FIXED_K:
            return min(FIXED_KERNEL, ops.largest_odd_at_most(self.channels))
        return 0

    def initial_kernel(self) -> np.ndarray:
        k = self.kernel_length
        return np.full(k, 1.0 / k)


@dataclass(frozen=True)
class ChannelWeights:
    """
    Per-channel gate ω.

    Invariants:
    - ω is a length-C vector with every value strictly inside (0, 1)
    """
    omega: Tensor

    def __post_init__(self):
        values = self.omega.data
        if values.ndim != 1:
            raise InvalidArgumentError(f"channel weights must be a vector, got shape {values.shape}")
        if not (np.all(values > 0.0) and np.all(values < 1.0)):
            raise InvalidArgumentError("channel weights must lie strictly inside (0, 1)")

    def __len__(self) -> int:
        return self.omega.shape[0]

    def values(self) -> np.ndarray:
        return self.omega.numpy()


def _check_map(chi: Tensor, channels: int) -> None:
    if chi.ndim != 3:
        raise InvalidArgumentError(f"channel attention needs an H×W×C map, got shape {chi.shape}")
    if chi.shape[2] != channels:
        raise InvalidArgumentError(f"expected {channels} channels, got {chi.shape[2]}")


def cis_forward(chi: Tensor, kernel: Tensor, channels: Optional[int] = None) -> Tuple[Tensor, ChannelWeights]:
    """
    ω = σ(conv1d(GAP(χ), kernel)); output = χ · ω broadcast over channels.

    Args:
        chi: H×W×C feature map
        kernel: odd-length learnable kernel
        channels: expected C (defaults to the map's own channel count)

    Returns:
        (reweighted map, ChannelWeights)

    Raises:
        InvalidArgumentError: channel mismatch or even kernel
    """
    if channels is None:
        channels = chi.shape[-1]
    _check_map(chi, channels)
    omega = ops.sigmoid(ops.conv1d(ops.global_avg_pool(chi), kernel))
    return ops.mul(chi, omega), ChannelWeights(omega)


def se_forward(chi: Tensor, weights: Weights, prefix: str) -> Tuple[Tensor, ChannelWeights]:
    """Bottleneck gate: ω = σ(W2·relu(W1·GAP(χ) + b1) + b2)."""
    pooled = ops.reshape(ops.global_avg_pool(chi), (1, chi.shape[2]))
    hidden = ops.relu(ops.add(ops.matmul(pooled, weights[f"{prefix}.fc1.weight"]), weights[f"{prefix}.fc1.bias"]))
    logits = ops.add(ops.matmul(hidden, weights[f"{prefix}.fc2.weight"]), weights[f"{prefix}.fc2.bias"])
    omega = ops.sigmoid(ops.reshape(logits, (chi.shape[2],)))
    return ops.mul(chi, omega), ChannelWeights(omega)


class ChannelAttention:
    """
    Attention adaptor for the deep feature map.

    Usage:
        attention = ChannelAttention(CisConfig(channels=128))
        attention.register(store)
        attended, omega = attention.forward(weights, deep)
    """

    def __init__(self, config: CisConfig, prefix: str = "attention"):
        self.config = config
        self.prefix = prefix
        if config.mode in (AttentionMode.CIS, AttentionMode.FIXED_K):
            logger.debug("channel gate %s: C=%d k=%d", config.mode.value, config.channels, config.kernel_length)

    @property
    def mode(self) -> AttentionMode:
        return self.config.mode

    def register(self, store: ParameterStore) -> None:
        mode = self.config.mode
        if mode in (AttentionMode.CIS, AttentionMode.FIXED_K):
            k = self.config.kernel_length
            store.create(f"{self.prefix}.kernel", (k,), init="constant", value=1.0 / k)
        elif mode is AttentionMode.SE:
            c = self.config.channels
            hidden = max(1, c // SE_REDUCTION)
            store.create(f"{self.prefix}.fc1.weight", (c, hidden), init="he", fan_in=c)
            store.create(f"{self.prefix}.fc1.bias", (hidden,), init="constant")
            store.create(f"{self.prefix}.fc2.weight", (hidden, c), init="normal", std=0.01)
            store.create(f"{self.prefix}.fc2.bias", (c,), init="constant")

    def forward(self, weights: Weights, chi: Tensor) -> Tuple[Tensor, Optional[ChannelWeights]]:
        _check_map(chi, self.config.channels)
        mode = self.config.mode
        if mode is AttentionMode.NONE:
            return chi, None
        if mode is AttentionMode.SE:
            return se_forward(chi, weights, self.prefix)
        return cis_forward(chi, weights[f"{self.prefix}.kernel"], self.config.channels)
