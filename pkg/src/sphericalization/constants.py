"""Explicit constants built from C_A, C_B and the uniformity constant C_U."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass


@dataclass(frozen=True)
class StructureConstants:
    C_A: float
    C_B: float
    C_U: float

    @property
    def log2_CU(self) -> float:
        return math.log2(self.C_U)

    @property
    def epsilon(self) -> float:
        return 1.0 / (self.C_A * self.C_B)

    @property
    def ring_factor(self) -> float:
        """rho(|z|) <= ring_factor * rho(|x|) for z on a uniform curve between comparable x, y."""
        return self.C_A ** (3.0 + self.log2_CU)

    @property
    def C1(self) -> float:
        return 3.0 * self.C_U * self.C_A ** (4.0 + self.log2_CU) * self.C_B

    @property
    def C2(self) -> float:
        return self.C_U * self.C_A ** (3.0 + self.log2_CU)

    @property
    def near_lower(self) -> float:
        """Lower comparison factor 1/(C_A^3 C_B) for d_rho against rho(|x|) d."""
        return 1.0 / (self.C_A**3 * self.C_B)

    @property
    def c0(self) -> float:
        return 1.0 / (2.0 * self.C1 * self.C_A**2 * self.C_B)

    @property
    def a1(self) -> float:
        return 1.0 / self.C2

    @property
    def a2(self) -> float:
        return self.C_A**3 * self.C_B

    @property
    def subcurve(self) -> float:
        """Uniformity constant inherited by subcurves of a C_U-uniform curve."""
        return self.C_U * (2.0 * self.C_U + 3.0)

    def radial_bracket(self, x: float, y: float) -> tuple[float, float]:
        """Range of |z| for z on a uniform curve from x to y (|x| <= |y|)."""
        return x / (1.0 + self.C_U), (1.0 + self.C_U) * x + self.C_U * y

    def to_dict(self) -> dict:
        out = asdict(self)
        for k in ("epsilon", "ring_factor", "C1", "C2", "near_lower", "c0", "a1", "a2", "subcurve"):
            out[k] = getattr(self, k)
        return out
