from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Voigt order used throughout the package: xx, yy, zz, yz, xz, xy with
# engineering shear strains (gamma_ij = 2 eps_ij).
VOIGT_PAIRS = ((0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1))


def isotropic_stiffness(E: float, nu: float) -> np.ndarray:
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    mu = E / (2.0 * (1.0 + nu))
    C = np.zeros((6, 6))
    C[:3, :3] = lam
    C[np.arange(3), np.arange(3)] = lam + 2.0 * mu
    C[np.arange(3, 6), np.arange(3, 6)] = mu
    return C


@dataclass(frozen=True)
class ElasticMaterial:
    """Isotropic linear elastic solid; ``E`` in MPa."""

    youngs_modulus: float
    poisson_ratio: float
    C: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.youngs_modulus > 0:
            raise ValueError(f"Young's modulus must be positive, got {self.youngs_modulus}")
        if not -1.0 < self.poisson_ratio < 0.5:
            raise ValueError(f"Poisson ratio must lie in (-1, 0.5), got {self.poisson_ratio}")
        C = isotropic_stiffness(self.youngs_modulus, self.poisson_ratio)
        C.flags.writeable = False
        object.__setattr__(self, "C", C)

    def scaled(self, factor: float) -> "ElasticMaterial":
        return ElasticMaterial(self.youngs_modulus * factor, self.poisson_ratio)


def voigt_to_tensor(v: np.ndarray, engineering_shear: bool) -> np.ndarray:
    """Voigt 6-vector to symmetric 3x3 tensor."""
    v = np.asarray(v, dtype=float)
    s = 0.5 if engineering_shear else 1.0
    t = np.empty(v.shape[:-1] + (3, 3))
    for k, (i, j) in enumerate(VOIGT_PAIRS):
        val = v[..., k] * (s if i != j else 1.0)
        t[..., i, j] = val
        t[..., j, i] = val
    return t


def von_mises(sigma: np.ndarray) -> np.ndarray:
    """Von Mises equivalent stress of Voigt stress vectors (last axis)."""
    s = np.asarray(sigma, dtype=float)
    sxx, syy, szz, syz, sxz, sxy = (s[..., k] for k in range(6))
    return np.sqrt(
        0.5 * ((sxx - syy) ** 2 + (syy - szz) ** 2 + (szz - sxx) ** 2)
        + 3.0 * (syz**2 + sxz**2 + sxy**2)
    )
