"""Pointillist matter-density data: a smooth field, its flashes, and noisy flashes.

The field is a moving Gaussian blob ``A(x, t) = rho0 exp(-(x - v t)^2 / 2 w^2)``.

* panel 1 samples ``A`` on a dense regular grid;
* panel 2 samples it at Poisson-sprinkled points (density ``mu``);
* panel 3 adds the collapse noise ``Normal(0, (2 beta)^(-1/2))`` to panel 2.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Mapping, NamedTuple

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class FigureSpec:
    rho0: float = 1.0
    width: float = 1.0
    velocity: float = 0.5
    t_max: float = 10.0
    x_min: float = -5.0
    x_max: float = 10.0
    mu: float = 20.0
    beta: float = 1.0
    seed: int = 0
    beta_infinite: bool = False
    grid_nt: int = 101
    grid_nx: int = 151

    def __post_init__(self):
        if not self.width > 0:
            raise ConfigError("width must be positive")
        if self.mu < 0:
            raise ConfigError("mu must be non-negative")
        if not self.beta > 0:
            raise ConfigError("beta must be positive")
        if not self.t_max > 0 or not self.x_max > self.x_min:
            raise ConfigError("region needs t_max > 0 and x_max > x_min")
        if self.grid_nt < 2 or self.grid_nx < 2:
            raise ConfigError("dense grid needs at least 2 points per axis")

    @classmethod
    def from_dict(cls, raw: Mapping) -> "FigureSpec":
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - names)
        if unknown:
            raise ConfigError(f"unknown figure key(s): {', '.join(unknown)}")
        return cls(**raw)

    @property
    def noise_std(self) -> float:
        return 0.0 if self.beta_infinite else (2.0 * self.beta) ** -0.5

    def density(self, t, x):
        return self.rho0 * np.exp(-((x - self.velocity * t) ** 2) / (2.0 * self.width ** 2))


class FigureData(NamedTuple):
    dense: np.ndarray    # (m, 3) columns t, x, z
    points: np.ndarray   # (n, 3) exact z at sprinkled points
    noisy: np.ndarray    # (n, 3) noisy z at the same points

    def to_csv(self, fh):
        fh.write("panel,t,x,z\n")
        for panel, rows in ((1, self.dense), (2, self.points), (3, self.noisy)):
            for t, x, z in rows:
                fh.write(f"{panel},{float(t)!r},{float(x)!r},{float(z)!r}\n")


def emit_figure_data(spec: FigureSpec) -> FigureData:
    """Deterministic in ``spec`` (the seed included)."""
    tt, xx = np.meshgrid(np.linspace(0.0, spec.t_max, spec.grid_nt),
                         np.linspace(spec.x_min, spec.x_max, spec.grid_nx), indexing="ij")
    dense = np.column_stack([tt.ravel(), xx.ravel(), spec.density(tt, xx).ravel()])
    rng = np.random.default_rng(spec.seed)
    area = spec.t_max * (spec.x_max - spec.x_min)
    n = int(rng.poisson(spec.mu * area)) if spec.mu > 0 else 0
    t = rng.uniform(0.0, spec.t_max, n)
    x = rng.uniform(spec.x_min, spec.x_max, n)
    order = np.lexsort((x, t))
    t, x = t[order], x[order]
    z = spec.density(t, x)
    points = np.column_stack([t, x, z])
    noise = rng.normal(0.0, 1.0, n) * spec.noise_std if not spec.beta_infinite else np.zeros(n)
    noisy = np.column_stack([t, x, z + noise])
    return FigureData(dense, points, noisy)


def points_for(n_points: int, t_max: float, x_min: float, x_max: float) -> float:
    """Sprinkling density giving ``n_points`` expected points in the region."""
    return n_points / (t_max * (x_max - x_min))


__all__ = ["FigureSpec", "FigureData", "emit_figure_data", "points_for"]
