"""Solver result containers and the perception-multiplier field."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import LambdaOutOfRange, NegativeKappa


@dataclass
class EquilibriumReport:
    x: np.ndarray  # class flow (n_od, n_arcs)
    v: np.ndarray
    Z: float
    gap: float
    iterations: int
    converged: bool
    mu: np.ndarray  # per-OD shortest (perceived, for UE-PE) path cost
    method: str = ""
    trace: list = field(default_factory=list)  # (iteration, gap, objective)
    paths: object = None  # PathFlow when the solver tracks paths

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "Z": self.Z,
            "relative_gap": self.gap,
            "iterations": self.iterations,
            "converged": self.converged,
            "mu": self.mu.tolist(),
            "v": self.v.tolist(),
            "x": self.x.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


class LambdaField:
    """Per-(OD, arc) perception multipliers confined to ``[1/(1+kappa), 1]``."""

    def __init__(self, values, kappa: float, atol: float = 1e-12):
        if kappa < 0:
            raise NegativeKappa(f"kappa must be >= 0, got {kappa}")
        values = np.array(values, dtype=float)
        if values.ndim != 2:
            raise LambdaOutOfRange(f"multipliers must be an (n_od, n_arcs) matrix, got shape {values.shape}")
        lo = 1.0 / (1.0 + kappa)
        if (values < lo - atol).any() or (values > 1.0 + atol).any() or np.isnan(values).any():
            raise LambdaOutOfRange(f"multipliers must lie in [{lo:.12g}, 1] for kappa={kappa}")
        self.values = np.clip(values, lo, 1.0)
        self.kappa = float(kappa)

    @property
    def lower(self) -> float:
        return 1.0 / (1.0 + self.kappa)

    @classmethod
    def ones(cls, n_od: int, n_arcs: int, kappa: float = 0.0) -> "LambdaField":
        return cls(np.ones((n_od, n_arcs)), kappa)

    @classmethod
    def constant(cls, n_od: int, n_arcs: int, kappa: float, value: float) -> "LambdaField":
        return cls(np.full((n_od, n_arcs), value), kappa)

    @classmethod
    def lower_bound(cls, n_od: int, n_arcs: int, kappa: float) -> "LambdaField":
        return cls(np.full((n_od, n_arcs), 1.0 / (1.0 + kappa)), kappa)

    def rescaled(self, kappa: float) -> "LambdaField":
        """Map into the box of another ``kappa`` keeping relative position."""
        old_lo, new_lo = self.lower, 1.0 / (1.0 + kappa)
        if self.kappa == 0:
            pos = np.zeros_like(self.values)
        else:
            pos = (1.0 - self.values) / (1.0 - old_lo)
        return LambdaField(1.0 - pos * (1.0 - new_lo), kappa)

    def copy(self) -> "LambdaField":
        return LambdaField(self.values.copy(), self.kappa)

    def to_dict(self) -> dict:
        return {"kappa": self.kappa, "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, data) -> "LambdaField":
        return cls(data["values"], data["kappa"])


def as_lambda(lam, n_od: int, n_arcs: int) -> np.ndarray:
    """Accept a LambdaField, an (n_od, n_arcs) matrix or a per-arc vector."""
    if isinstance(lam, LambdaField):
        vals = lam.values
    else:
        vals = np.asarray(lam, dtype=float)
        if vals.ndim == 1:
            vals = np.broadcast_to(vals, (n_od, vals.size))
        if (vals <= 0).any() or (vals > 1 + 1e-12).any() or np.isnan(vals).any():
            raise LambdaOutOfRange("multipliers must lie in (0, 1]")
    if vals.shape != (n_od, n_arcs):
        raise LambdaOutOfRange(f"multipliers have shape {vals.shape}, expected {(n_od, n_arcs)}")
    return np.array(vals, dtype=float)
