"""
Simulation Configuration and Logging Setup
"""
import os
import logging
from dataclasses import dataclass, replace
from typing import Optional

from errors import ConfigError


@dataclass(frozen=True)
class SimConfig:
    """Numerical settings shared by the simulator, oracle and harness"""

    # Integration
    DT: float = 0.01                  # s, quasi-static step
    SENSOR_HZ: float = 30.0           # Hz, force sensor / observation rate

    # Contact solver
    TOL_PEN: float = 1e-5             # m, max residual penetration
    SOLVER_MAX_ITERATIONS: int = 200  # Gauss-Seidel sweeps per step
    SOLVER_TOLERANCE: float = 1e-6    # N, largest multiplier change that ends the sweeps
    SOLVER_CLEANUP_ITERATIONS: int = 25  # frictionless projections per step
    SOLVER_MARGIN: float = 2e-4       # m, near-contacts fed to the solver
    DEFAULT_FRICTION: float = 0.1
    MAX_FRICTION: float = 0.3

    # Contact query and clustering
    CONTACT_TOL: float = 5e-5         # m, "touching"
    CLUSTER_RADIUS: float = 1e-3      # m
    CLUSTER_NORMAL_ANGLE: float = 30.0  # deg
    MAX_PATCH_REPRESENTATIVES: int = 8
    SAMPLE_SPACING: float = 8e-4      # m
    CIRCLE_SAMPLES: int = 96
    CORNER_TURN_MIN: float = 20.0     # deg, vertices sharper than this get edge samples

    # Contact formations
    EPS_FEAS: float = 1e-8
    FEAS_HORIZON: float = 0.05        # s
    RANDOM_TWISTS: int = 256
    TILT_MIN_DEG: float = 3.0
    MIN_BLOCK_CLEARANCE: float = 1e-3  # m

    # Logging
    LOG_LEVEL: int = logging.INFO
    LOG_FORMAT: str = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    LOG_FILE: Optional[str] = None

    @property
    def sensor_period(self) -> float:
        return 1.0 / self.SENSOR_HZ

    @property
    def steps_per_sample(self) -> int:
        """Simulation steps between sensor samples (at least one)"""
        return max(1, int(round(self.sensor_period / self.DT)))

    def clearance_block(self, clearance: float) -> float:
        return max(2.0 * clearance, self.MIN_BLOCK_CLEARANCE)

    def with_overrides(self, dt: Optional[float] = None, sensor_hz: Optional[float] = None) -> "SimConfig":
        changes = {}
        if dt is not None:
            changes["DT"] = float(dt)
        if sensor_hz is not None:
            changes["SENSOR_HZ"] = float(sensor_hz)
        config = replace(self, **changes) if changes else self
        config.validate()
        return config

    @classmethod
    def from_environment(cls) -> "SimConfig":
        """Defaults overridden by PEGSIM_* environment variables"""
        changes = {}
        try:
            if os.environ.get('PEGSIM_DT'):
                changes["DT"] = float(os.environ['PEGSIM_DT'])
            if os.environ.get('PEGSIM_SENSOR_HZ'):
                changes["SENSOR_HZ"] = float(os.environ['PEGSIM_SENSOR_HZ'])
        except ValueError as e:
            raise ConfigError(f"Invalid numeric environment override: {e}")
        level_name = os.environ.get('PEGSIM_LOG_LEVEL')
        if level_name:
            level = logging.getLevelName(level_name.upper())
            if not isinstance(level, int):
                raise ConfigError(f"Unknown log level: {level_name}")
            changes["LOG_LEVEL"] = level
        if os.environ.get('PEGSIM_LOG_FILE'):
            changes["LOG_FILE"] = os.environ['PEGSIM_LOG_FILE']
        config = cls(**changes)
        config.validate()
        return config

    def validate(self) -> bool:
        """Reject settings the solver cannot run with"""
        if self.DT <= 0:
            raise ConfigError(f"dt must be positive, got {self.DT}")
        if self.SENSOR_HZ <= 0:
            raise ConfigError(f"sensor rate must be positive, got {self.SENSOR_HZ}")
        if self.DT > self.sensor_period:
            raise ConfigError(f"dt {self.DT}s exceeds the sensor period {self.sensor_period:.4f}s")
        if not 0.0 <= self.DEFAULT_FRICTION <= self.MAX_FRICTION:
            raise ConfigError(f"default friction {self.DEFAULT_FRICTION} outside [0, {self.MAX_FRICTION}]")
        return True

    def configure_logging(self, quiet: bool = False):
        """Configure root logging for CLI runs"""
        handlers = [logging.StreamHandler()]
        if self.LOG_FILE:
            handlers.append(logging.FileHandler(self.LOG_FILE))
        logging.basicConfig(
            level=logging.WARNING if quiet else self.LOG_LEVEL,
            format=self.LOG_FORMAT,
            handlers=handlers,
            force=True,
        )


DEFAULT_CONFIG = SimConfig()
