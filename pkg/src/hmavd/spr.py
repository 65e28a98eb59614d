"""Adam-style optimizer with a decaying Gaussian gradient perturbation.

The update follows the literal moment recursions without bias correction::

    g = grad + N(0, sigma_t^2)
    m = beta1 * m + (1 - beta1) * g
    v = beta2 * v + (1 - beta2) * g**2
    theta -= eta * m / (sqrt(v) + eps)

with ``sigma_t = sigma_max * (1 - t / T) ** beta_decay``. Modality weights
are expected to be applied to ``grad`` beforehand (see ``mcdb``).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ParamStore, RngStream
from .exceptions import InvalidConfig, NonFiniteGradient, StepOutOfRange


@dataclass
class SprConfig:
    sigma_max: float = 0.01
    beta_decay: float = 1.0
    T: int = 1
    enabled: bool = True

    def __post_init__(self):
        if not self.sigma_max >= 0:
            raise InvalidConfig(f"spr.sigma_max must be >= 0, got {self.sigma_max}")
        if not self.beta_decay > 0:
            raise InvalidConfig(f"spr.beta_decay must be > 0, got {self.beta_decay}")
        if int(self.T) < 1:
            raise InvalidConfig(f"spr.T must be >= 1, got {self.T}")


@dataclass
class OptimConfig:
    eta: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    bias_correction: bool = False

    def __post_init__(self):
        if not self.eta > 0:
            raise InvalidConfig(f"optim.eta must be positive, got {self.eta}")
        for name in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise InvalidConfig(f"optim.{name} must lie in [0, 1)")
        if self.weight_decay != 0.0:
            raise InvalidConfig("optim.weight_decay is fixed at 0")


@dataclass
class SprOptimState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def noise_sigma(t: int, cfg: SprConfig) -> float:
    if not 0 <= t <= cfg.T:
        raise StepOutOfRange(f"step {t} outside [0, {cfg.T}]")
    return float(cfg.sigma_max * (1.0 - t / cfg.T) ** cfg.beta_decay)


def sample_noise(shape, sigma: float, rng: RngStream) -> np.ndarray:
    if sigma < 0:
        raise InvalidConfig(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return np.zeros(shape)
    return rng.normal(size=shape, scale=sigma)


def spr_adam_step(store: ParamStore, state: SprOptimState, ocfg: OptimConfig, scfg: SprConfig, rng: RngStream) -> float:
    """Apply one update to every parameter in ``store``; returns the sigma used.

    Noise is drawn only when perturbation is active, so a disabled run
    consumes no randomness and matches plain Adam bitwise.
    """
    for key, p in store:
        if not np.all(np.isfinite(p.grad)):
            raise NonFiniteGradient("/".join(key))
    sigma = noise_sigma(min(state.t, scfg.T), scfg) if scfg.enabled else 0.0
    b1, b2 = ocfg.beta1, ocfg.beta2
    t_next = state.t + 1
    for key, p in store:
        g = p.grad
        if sigma > 0:
            g = g + sample_noise(g.shape, sigma, rng)
        if key not in state.m:
            state.m[key] = np.zeros_like(p.value)
            state.v[key] = np.zeros_like(p.value)
        m = state.m[key] = b1 * state.m[key] + (1.0 - b1) * g
        v = state.v[key] = b2 * state.v[key] + (1.0 - b2) * (g * g)
        if ocfg.bias_correction:
            m = m / (1.0 - b1**t_next)
            v = v / (1.0 - b2**t_next)
        p.value -= ocfg.eta * m / (np.sqrt(v) + ocfg.eps)
    state.t = t_next
    return sigma


class SprAdam:
    """Stateful wrapper owning the moment buffers and its noise stream."""

    def __init__(self, store: ParamStore, ocfg: OptimConfig, scfg: SprConfig, rng: RngStream):
        self.store = store
        self.ocfg = ocfg
        self.scfg = scfg
        self.rng = rng
        self.state = SprOptimState()

    def step(self) -> float:
        return spr_adam_step(self.store, self.state, self.ocfg, self.scfg, self.rng)
