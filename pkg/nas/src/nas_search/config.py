"""Search configuration and error types."""

from __future__ import annotations

from dataclasses import dataclass


class ConfigError(ValueError):
    """Bad configuration: unknown backbone, missing LUT entry, malformed file."""


class DivergenceError(RuntimeError):
    """Training loss went non-finite; carries the offending values."""


@dataclass
class SearchConfig:
    """Knobs for the bilevel search.

    xi defaults to the weight learning rate when left as None.  eps_scale
    is the numerator of the turbulence used by the Hessian-vector
    approximation: eps = eps_scale / ||grad_w val loss||.
    """

    lam: float = 0.0
    epochs: int = 10
    batch_size: int = 64
    seed: int = 0
    backbone: str = "toy_cnn"
    num_classes: int = 2
    alpha_lr: float = 0.1
    alpha_betas: tuple = (0.5, 0.999)
    w_lr: float = 0.05
    w_momentum: float = 0.9
    xi: float | None = None
    eps_scale: float = 1e-2
    c: float = 0.1
    stpai_sigma: float = 0.0
    shared_conv: bool = True

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError("latency weight must be non-negative")
        if self.eps_scale <= 0:
            raise ConfigError("turbulence scale must be positive")
        if self.xi is not None and self.xi < 0:
            raise ConfigError("virtual step size must be non-negative")

    @property
    def xi_value(self) -> float:
        return self.w_lr if self.xi is None else self.xi
