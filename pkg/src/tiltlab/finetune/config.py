"""Fine-tuning configuration, capability checks, and the training log record."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

from ..errors import CapabilityError, ConfigError
from ..rewards import RewardSpec

ALGORITHMS = ("ppo", "backprop", "weighted-mle", "pcl")
ROLLIN_KINDS = ("current", "pretrained", "mixture")


@dataclass(frozen=True)
class FineTuneConfig:
    algorithm: str
    alpha: float = 1.0
    batch: int = 64            # m
    iterations: int = 100      # S
    lr: float = 1e-3           # gamma (gamma_s: switches to lr_final at S/2 when set)
    lr_final: float | None = None
    clip: float = 0.2          # PPO clip radius
    ppo_epochs: int = 1
    rollin: str = "current"    # current | pretrained | mixture:<k>
    seed: int = 0
    value_hidden: tuple[int, ...] = (32, 32)
    value_lr: float | None = None
    final_step_noise: bool = True

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm '{self.algorithm}' (choose from {ALGORITHMS})")
        if self.batch < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch}")
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if self.lr <= 0.0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if self.lr_final is not None and self.lr_final <= 0.0:
            raise ConfigError(f"final learning rate must be positive, got {self.lr_final}")
        if not 0.0 < self.clip < 1.0:
            raise ConfigError(f"clip radius must lie in (0, 1), got {self.clip}")
        if self.ppo_epochs < 1:
            raise ConfigError(f"ppo_epochs must be >= 1, got {self.ppo_epochs}")
        if self.alpha < 0.0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if self.algorithm in ("weighted-mle", "pcl") and self.alpha <= 0.0:
            raise ConfigError(f"{self.algorithm} is not well-defined at alpha = 0")
        kind = self.rollin.split(":")[0]
        if kind not in ROLLIN_KINDS:
            raise ConfigError(f"unknown roll-in '{self.rollin}'")
        if kind == "mixture":
            try:
                int(self.rollin.split(":")[1])
            except (IndexError, ValueError):
                raise ConfigError("mixture roll-in needs a switch index, e.g. 'mixture:4'") from None

    def check_reward(self, spec: RewardSpec) -> None:
        """Reject capability clashes before any computation starts."""
        self.validate()
        if self.algorithm == "backprop" and not spec.differentiable:
            raise CapabilityError(
                "reward backpropagation requires a differentiable reward; "
                "this spec is a non-differentiable black box"
            )


@dataclass
class TrainLogRecord:
    iteration: int
    mean_reward: float
    kl_estimate: float
    loss: float
    grad_norm: float
    wall_time: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))
