"""Run configuration shared by the CLI and the experiment scripts."""

from __future__ import annotations

from dataclasses import dataclass, field

from .sparsity import PlanConfig

SEED_MAX = 2**64 - 1


@dataclass
class RunConfig:
    subcommand: str
    model: str | None = None
    method: str = "erk"
    sparsity: float = 0.5
    seed: int = 0
    ha_base: str = "erk"
    prefusion_depth: int = 1
    rho_max: float = 0.95
    log_base: str = "e"
    protect: tuple = ()
    match_params: bool = True
    outputs: dict = field(default_factory=dict)
    verbosity: int = 0

    def __post_init__(self):
        if not 0.0 <= self.sparsity < 1.0:
            raise ValueError(f"sparsity must lie in [0, 1), got {self.sparsity}")
        if not 0 <= self.seed <= SEED_MAX:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if self.prefusion_depth < 1:
            raise ValueError(f"prefusion depth must be >= 1, got {self.prefusion_depth}")

    def plan_config(self):
        return PlanConfig(
            method=self.method,
            sparsity=self.sparsity,
            seed=self.seed,
            ha_base=self.ha_base,
            prefusion_depth=self.prefusion_depth,
            rho_max=self.rho_max,
            log_base=self.log_base,
            protect=tuple(self.protect),
            match_params=self.match_params,
        )
