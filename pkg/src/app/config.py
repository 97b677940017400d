from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, field
from typing import Mapping

from src.analytics.errors import ConfigError
from src.analytics.fw_solver import DEFAULT_MAX_SWEEPS, SolveConfig
from src.analytics.regularizer import DEFAULT_LAMBDA, DEFAULT_MU
from src.analytics.synthbench import DEFAULT_MEMORY_BOUND, LAMBDA_RULES, SOLVERS, WARM_STARTS

THREADS_ENV = "MERIT_THREADS"
COMMANDS = (
    "synth-sweep",
    "solve",
    "select-anchors",
    "estimate-h",
    "diagnostics",
    "community-eval",
    "memory-sweep",
)


def threads_from_env(env: Mapping[str, str] | None = None) -> int:
    """MERIT_THREADS as a non-negative int; unset or empty means serial (0)."""
    env = os.environ if env is None else env
    raw = (env.get(THREADS_ENV) or "").strip()
    if not raw:
        return 0
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 0:
        raise ConfigError(f"{THREADS_ENV} must be >= 0, got {n}")
    return n


def parse_snr(text: str) -> float:
    t = str(text).strip().lower()
    if t in ("inf", "+inf", "infinity", "∞"):
        return math.inf
    try:
        v = float(t)
    except ValueError:
        raise ConfigError(f"SNR must be a number or 'inf', got {text!r}") from None
    if math.isnan(v) or v == -math.inf:
        raise ConfigError(f"SNR must be a number or 'inf', got {text!r}")
    return v


def parse_list(text: str, cast=float) -> tuple:
    items = [s.strip() for s in str(text).split(",") if s.strip()]
    if not items:
        raise ConfigError(f"expected a comma-separated list, got {text!r}")
    try:
        return tuple(cast(s) for s in items)
    except (ValueError, ConfigError) as exc:
        raise ConfigError(f"bad list {text!r}: {exc}") from None


def default_lambda(rule: str) -> float:
    """A balanced lambda is a multiplier (1 = the balance point); a fixed one is the weight itself."""
    return 1.0 if rule == "balanced" else DEFAULT_LAMBDA


def _check_start_and_rule(warm_start: str, rule: str):
    if warm_start not in WARM_STARTS:
        raise ConfigError(f"warm start must be one of {WARM_STARTS}, got {warm_start!r}")
    if rule not in LAMBDA_RULES:
        raise ConfigError(f"lambda rule must be one of {LAMBDA_RULES}, got {rule!r}")


@dataclass(frozen=True)
class SweepConfig:
    """
    Grid for the success-rate study: every (snr, N, solver, lambda, mu) cell gets `trials` trials.
    Under the balanced rule the lambdas are multipliers of balanced_lambda().
    """

    seed: int
    m: int = 50
    k: int = 40
    n_values: tuple[int, ...] = (200,)
    snr_db: tuple[float, ...] = (10.0,)
    trials: int = 1
    solvers: tuple[str, ...] = ("merit", "spa")
    lambdas: tuple[float, ...] = (1.0,)
    mus: tuple[float, ...] = (DEFAULT_MU,)
    max_sweeps: int = DEFAULT_MAX_SWEEPS
    warm_start: str = "spa"
    lambda_rule: str = "balanced"
    threads: int = 0
    omit_timing: bool = False

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        if self.k < 1 or self.m < self.k:
            raise ConfigError(f"need 1 <= K <= M, got M={self.m} K={self.k}")
        if any(n <= self.k for n in self.n_values):
            raise ConfigError(f"every N must exceed K={self.k}, got {self.n_values}")
        bad = [s for s in self.solvers if s not in SOLVERS]
        if bad:
            raise ConfigError(f"unknown solver(s) {bad}; choose from {SOLVERS}")
        _check_start_and_rule(self.warm_start, self.lambda_rule)
        if self.threads < 0:
            raise ConfigError(f"threads must be >= 0, got {self.threads}")
        # every solver config in the grid must be valid before any trial runs
        for lam in self.lambdas:
            for mu in self.mus:
                self.solve_config(lam, mu)

    def solve_config(self, lam: float, mu: float) -> SolveConfig:
        return SolveConfig(lam=lam, mu=mu, max_sweeps=self.max_sweeps, seed=self.seed)

    def cells(self):
        """(snr, N, solver, lambda, mu) in output order; spa ignores the grid, merit0 the lambdas."""
        for snr in self.snr_db:
            for n in self.n_values:
                for solver in self.solvers:
                    if solver == "spa":
                        grid = [(0.0, 0.0)]
                    elif solver == "merit0":
                        grid = [(0.0, mu) for mu in self.mus]
                    else:
                        grid = [(lam, mu) for lam in self.lambdas for mu in self.mus]
                    for lam, mu in grid:
                        yield snr, n, solver, lam, mu

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class MemorySweepConfig:
    seed: int
    m: int = 50
    k: int = 40
    n_values: tuple[int, ...] = (200, 1000, 5000)
    snr_db: float = 10.0
    trials: int = 5
    lam: float = 1.0
    mu: float = DEFAULT_MU
    max_sweeps: int = DEFAULT_MAX_SWEEPS
    bound: float = DEFAULT_MEMORY_BOUND
    warm_start: str = "spa"
    lambda_rule: str = "balanced"
    threads: int = 0
    omit_timing: bool = False

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        if self.k < 1 or self.m < self.k:
            raise ConfigError(f"need 1 <= K <= M, got M={self.m} K={self.k}")
        if any(n <= self.k for n in self.n_values):
            raise ConfigError(f"every N must exceed K={self.k}, got {self.n_values}")
        if not (self.bound > 0):
            raise ConfigError(f"bound must be > 0, got {self.bound}")
        _check_start_and_rule(self.warm_start, self.lambda_rule)
        self.solve_config()

    def solve_config(self) -> SolveConfig:
        return SolveConfig(lam=self.lam, mu=self.mu, max_sweeps=self.max_sweeps, seed=self.seed)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RunConfig:
    """Effective configuration of one CLI invocation, echoed into its outputs."""

    command: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")

    def to_dict(self) -> dict:
        return {"command": self.command, **self.params}
