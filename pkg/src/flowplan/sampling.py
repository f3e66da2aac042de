"""Noise-trajectory samplers for the planner: BG, IL, 2DF, and two flow-based kinds.

BG, IL, and 2DF all run through one two-degree-of-freedom core (integrate a
derivative-level Gaussian, add a direct Gaussian), so the degenerate cases
reduce exactly: BG is the core with zero derivative variance, IL with zero
additive variance. The flow-based kinds push standard-normal draws through a
per-channel trained model; the AIL kind integrates the model output at runtime
so sampled trajectories are smooth by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .flow import FlowModel

N_CHANNELS = 2  # [v_delta, a]


class SamplerKind(str, Enum):
    BG = "bg"
    IL = "il"
    TWO_DF = "2df"
    NF_A2DF = "nf-a2df"
    NF_AIL = "nf-ail"


# Per-channel variances from the planner parameterization.
DEFAULT_SIGMA_BG = (0.1, 2.0)
DEFAULT_SIGMA_IL = (0.045, 1.1)
DEFAULT_SIGMA_2DF_1 = (0.03, 0.075)
DEFAULT_SIGMA_2DF_2 = (0.045, 0.09)


@dataclass(frozen=True)
class SamplerConfig:
    kind: SamplerKind
    dt: float = 0.1
    sigma: tuple[float, float] | None = None  # BG / IL diagonal variances
    sigma1: tuple[float, float] | None = None  # 2DF derivative-level variances
    sigma2: tuple[float, float] | None = None  # 2DF additive variances
    flow_models: tuple[FlowModel, FlowModel] | None = None  # NF kinds, per channel

    def __post_init__(self):
        for name in ("sigma", "sigma1", "sigma2"):
            val = getattr(self, name)
            if val is not None and any(v < 0 for v in val):
                raise ValueError(f"{name} variances must be non-negative, got {val}")
        if self.kind in (SamplerKind.NF_A2DF, SamplerKind.NF_AIL):
            if self.flow_models is None or len(self.flow_models) != N_CHANNELS:
                raise ValueError(f"{self.kind.value} sampling needs one flow model per channel")
        elif self.flow_models is not None:
            raise ValueError(f"flow models are only valid for NF kinds, not {self.kind.value}")

    @staticmethod
    def default(kind: SamplerKind, dt: float = 0.1, flow_models=None) -> "SamplerConfig":
        if kind == SamplerKind.BG:
            return SamplerConfig(kind, dt, sigma=DEFAULT_SIGMA_BG)
        if kind == SamplerKind.IL:
            return SamplerConfig(kind, dt, sigma=DEFAULT_SIGMA_IL)
        if kind == SamplerKind.TWO_DF:
            return SamplerConfig(kind, dt, sigma1=DEFAULT_SIGMA_2DF_1, sigma2=DEFAULT_SIGMA_2DF_2)
        return SamplerConfig(kind, dt, flow_models=flow_models)


def _core_2df(sigma1, sigma2, N: int, K: int, dt: float, rng: np.random.Generator) -> np.ndarray:
    """Integrate a derivative-level draw (v_0 = 0), add a direct draw elementwise."""
    std1 = np.sqrt(np.asarray(sigma1, dtype=float))
    std2 = np.sqrt(np.asarray(sigma2, dtype=float))
    g1 = rng.standard_normal((K, N, N_CHANNELS)) * std1
    g2 = rng.standard_normal((K, N, N_CHANNELS)) * std2
    V = np.zeros((K, N, N_CHANNELS))
    V[:, 1:, :] = np.cumsum(g1[:, :-1, :], axis=1) * dt
    V += g2
    return V


def sample_bg(cfg: SamplerConfig, N: int, K: int, rng: np.random.Generator) -> np.ndarray:
    if cfg.kind != SamplerKind.BG:
        raise ValueError(f"expected BG config, got {cfg.kind.value}")
    return _core_2df((0.0, 0.0), cfg.sigma, N, K, cfg.dt, rng)


def sample_il(cfg: SamplerConfig, N: int, K: int, rng: np.random.Generator) -> np.ndarray:
    if cfg.kind != SamplerKind.IL:
        raise ValueError(f"expected IL config, got {cfg.kind.value}")
    return _core_2df(cfg.sigma, (0.0, 0.0), N, K, cfg.dt, rng)


def sample_2df(cfg: SamplerConfig, N: int, K: int, rng: np.random.Generator) -> np.ndarray:
    if cfg.kind != SamplerKind.TWO_DF:
        raise ValueError(f"expected 2DF config, got {cfg.kind.value}")
    return _core_2df(cfg.sigma1, cfg.sigma2, N, K, cfg.dt, rng)


def sample_flow(cfg: SamplerConfig, N: int, K: int, rng: np.random.Generator) -> np.ndarray:
    if cfg.kind not in (SamplerKind.NF_A2DF, SamplerKind.NF_AIL):
        raise ValueError(f"expected an NF config, got {cfg.kind.value}")
    V = np.empty((K, N, N_CHANNELS))
    for ch in range(N_CHANNELS):
        model = cfg.flow_models[ch]
        if model.dim != N:
            raise ValueError(f"flow model for channel {ch} has dim {model.dim}, expected {N}")
        x = model.sample(K, rng)
        if cfg.kind == SamplerKind.NF_AIL:
            # Model output is derivative-level; integrate with v_0 = 0.
            v = np.zeros((K, N))
            v[:, 1:] = np.cumsum(x[:, :-1], axis=1) * cfg.dt
            V[:, :, ch] = v
        else:
            V[:, :, ch] = x
    return V


_DISPATCH = {
    SamplerKind.BG: sample_bg,
    SamplerKind.IL: sample_il,
    SamplerKind.TWO_DF: sample_2df,
    SamplerKind.NF_A2DF: sample_flow,
    SamplerKind.NF_AIL: sample_flow,
}


def sample(cfg: SamplerConfig, N: int, K: int, rng: np.random.Generator) -> np.ndarray:
    """Draw K noise trajectories of shape (K, N, 2) under the configured kind."""
    return _DISPATCH[cfg.kind](cfg, N, K, rng)
