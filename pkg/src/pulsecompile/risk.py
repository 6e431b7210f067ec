"""Risk aggregation over scenario losses, plus pulse-shape regularizers.

Losses come as a ``(B, S)`` grid (examples x scenarios) and are pooled at
batch level. The right-tail CVaR uses the ``(1 - alpha)`` quantile ``t``
(linear interpolation between order statistics) as a constant during
differentiation.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError, EmptyInput, TooShort


class RiskKind(str, Enum):
    MEAN = "mean"
    WORST = "worst"
    RUCVAR = "rucvar"


@dataclass(frozen=True)
class RiskConfig:
    kind: RiskKind = RiskKind.RUCVAR
    alpha: float = 0.5
    lambda_tv: float = 2e-4
    lambda_spec: float = 1e-6
    spec_cutoff_fraction: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "kind", RiskKind(self.kind))
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.lambda_tv < 0 or self.lambda_spec < 0:
            raise ConfigError("regularizer weights must be non-negative")
        if not 0.0 < self.spec_cutoff_fraction < 1.0:
            raise ConfigError("spec_cutoff_fraction must lie in (0, 1)")


def _flat(values) -> np.ndarray:
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.size == 0:
        raise EmptyInput("no losses to aggregate")
    return v


def quantile(values, q: float) -> float:
    """Linear interpolation at position ``q * (n - 1)`` of the sorted values."""
    s = np.sort(_flat(values))
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must lie in [0, 1], got {q}")
    pos = q * (s.size - 1)
    lo = int(np.floor(pos))
    hi = min(lo + 1, s.size - 1)
    frac = pos - lo
    if frac == 0.0:
        return float(s[lo])
    return float(s[lo] + frac * (s[hi] - s[lo]))


def rucvar(batch, alpha: float):
    """Return ``(rho, tail_mask, t)`` with ``rho = t + mean(max(0, l - t)) / alpha``."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    losses = np.asarray(batch, dtype=float)
    flat = _flat(losses)
    t = quantile(flat, 1.0 - alpha)
    excess = np.maximum(0.0, flat - t)
    rho = t + excess.mean() / alpha
    return float(rho), losses > t, t


def rucvar_loss_gradient(batch, alpha: float) -> np.ndarray:
    """d rho / d loss with the threshold held fixed.

    Losses strictly above ``t`` receive ``1 / (alpha * n)``. Losses tied
    exactly at ``t`` share whatever weight is left so the weights sum to one
    (the tail mass the threshold itself carries). With a continuous loss
    distribution ties have probability zero, so this only matters for
    degenerate batches, e.g. ``alpha = 1`` where it reproduces the gradient
    of the plain mean.
    """
    losses = np.asarray(batch, dtype=float)
    flat = _flat(losses)
    n = flat.size
    t = quantile(flat, 1.0 - alpha)
    above = losses > t
    grad = np.where(above, 1.0 / (alpha * n), 0.0)
    tied = losses == t
    n_tied = int(tied.sum())
    if n_tied:
        left = 1.0 - int(above.sum()) / (alpha * n)
        if left > 0.0:
            grad = np.where(tied, left / n_tied, grad)
    return grad


def aggregate(batch, cfg: RiskConfig) -> float:
    flat = _flat(batch)
    if cfg.kind is RiskKind.MEAN:
        return float(flat.mean())
    if cfg.kind is RiskKind.WORST:
        return float(flat.max())
    return rucvar(batch, cfg.alpha)[0]


def aggregate_gradient(batch, cfg: RiskConfig) -> np.ndarray:
    losses = np.asarray(batch, dtype=float)
    flat = _flat(losses)
    if cfg.kind is RiskKind.MEAN:
        return np.full(losses.shape, 1.0 / flat.size)
    if cfg.kind is RiskKind.WORST:
        g = np.zeros(flat.size)
        g[int(np.argmax(flat))] = 1.0
        return g.reshape(losses.shape)
    return rucvar_loss_gradient(losses, cfg.alpha)


# -- regularizers -------------------------------------------------------------


def _phases(phases) -> np.ndarray:
    x = np.asarray(phases, dtype=float)
    if x.shape[-1] < 2:
        raise TooShort("regularizers need at least two slices")
    return x


def tv_penalty(phases) -> float:
    """Mean absolute first difference; broadcasts over leading dims."""
    x = _phases(phases)
    return np.abs(np.diff(x, axis=-1)).mean(axis=-1)


def tv_gradient(phases) -> np.ndarray:
    x = _phases(phases)
    s = np.sign(np.diff(x, axis=-1)) / (x.shape[-1] - 1)
    g = np.zeros_like(x)
    g[..., 1:] += s
    g[..., :-1] -= s
    return g


def _high_band(t_slices: int, cutoff_fraction: float) -> np.ndarray:
    k = np.arange(t_slices // 2 + 1)
    return k > cutoff_fraction * (t_slices / 2)


def spectral_penalty(phases, cutoff_fraction: float = 0.2) -> float:
    """High-frequency energy ``sum_k w_k |X_k|^2 / T^2`` over bins ``k > cutoff * T/2``.

    ``w_k = 2`` for bins with a distinct conjugate partner and 1 for the
    Nyquist bin, so the full-band sum equals the mean square of the signal.
    """
    x = _phases(phases)
    t = x.shape[-1]
    spec = np.fft.rfft(x, axis=-1)
    band = _high_band(t, cutoff_fraction)
    weight = np.where(band, 2.0, 0.0)
    if t % 2 == 0:
        weight[-1] = 1.0 if band[-1] else 0.0
    return (weight * np.abs(spec) ** 2).sum(axis=-1) / t**2


def spectral_gradient(phases, cutoff_fraction: float = 0.2) -> np.ndarray:
    """``(2/T) * P x`` where ``P`` projects onto the penalised band."""
    x = _phases(phases)
    t = x.shape[-1]
    spec = np.fft.rfft(x, axis=-1)
    spec = np.where(_high_band(t, cutoff_fraction), spec, 0.0)
    return (2.0 / t) * np.fft.irfft(spec, n=t, axis=-1)


def objective(batch, phases_per_example, cfg: RiskConfig) -> float:
    """Risk plus batch-mean TV and spectral penalties."""
    value = aggregate(batch, cfg)
    ph = np.atleast_2d(np.asarray(phases_per_example, dtype=float))
    if cfg.lambda_tv:
        value += cfg.lambda_tv * float(np.mean(tv_penalty(ph)))
    if cfg.lambda_spec:
        value += cfg.lambda_spec * float(np.mean(spectral_penalty(ph, cfg.spec_cutoff_fraction)))
    return value


def regularizer_gradient(phases_per_example, cfg: RiskConfig) -> np.ndarray:
    """Gradient of the penalty part of :func:`objective` w.r.t. each example's phases."""
    ph = np.atleast_2d(np.asarray(phases_per_example, dtype=float))
    g = np.zeros_like(ph)
    b = ph.shape[0]
    if cfg.lambda_tv:
        g += cfg.lambda_tv * tv_gradient(ph) / b
    if cfg.lambda_spec:
        g += cfg.lambda_spec * spectral_gradient(ph, cfg.spec_cutoff_fraction) / b
    return g
