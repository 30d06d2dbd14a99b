"""Small-tensor helpers for 2-D elasticity.

Symmetric 2x2 matrices are stored as ``[m11, m22, m12]`` (tensor components,
no engineering factor). A rank-4 tensor with minor symmetries is stored as the
3x3 matrix ``T[p, q] = T_{i_p j_p m_q n_q}`` over the index pairs
``(0,0), (1,1), (0,1)``; contracting it with a strain therefore needs the
engineering strain ``[e11, e22, 2 e12]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonEllipticTensor

PAIRS = ((0, 0), (1, 1), (0, 1))
ENGINEERING = np.array([1.0, 1.0, 2.0])
_MANDEL = np.array([1.0, 1.0, np.sqrt(2.0)])


@dataclass(frozen=True)
class IsotropicElasticTensor:
    """``B_ijkh = lam d_ij d_kh + mu (d_ik d_jh + d_ih d_jk)``."""

    lam: float
    mu: float

    def validate(self) -> "IsotropicElasticTensor":
        if not (self.mu > 0 and self.lam >= 0):
            raise NonEllipticTensor(f"need mu > 0 and lambda >= 0, got ({self.lam}, {self.mu})")
        return self

    def voigt(self) -> np.ndarray:
        lam, mu = self.lam, self.mu
        return np.array([[lam + 2 * mu, lam, 0.0],
                         [lam, lam + 2 * mu, 0.0],
                         [0.0, 0.0, mu]])

    def scaled(self, factor: float) -> "IsotropicElasticTensor":
        return IsotropicElasticTensor(self.lam * factor, self.mu * factor)


def sym_unit(i: int, j: int) -> np.ndarray:
    """``sym(e^i (x) e^j)`` in ``[m11, m22, m12]`` storage."""
    out = np.zeros(3)
    if i == j:
        out[i] = 1.0
    else:
        out[2] = 0.5
    return out


def pair_index(i: int, j: int) -> int:
    return i if i == j else 2


def ddot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Full contraction ``a : b`` of symmetric matrices in stored form (last axis)."""
    return a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1] + 2.0 * a[..., 2] * b[..., 2]


def apply(voigt: np.ndarray, strain: np.ndarray) -> np.ndarray:
    """Stress ``T : strain`` for stored-form strains along the last axis."""
    eng = np.asarray(strain) * ENGINEERING
    return (np.asarray(voigt) @ eng[..., None])[..., 0]


def to_rank4(voigt: np.ndarray) -> np.ndarray:
    """Expand stored 3x3 form to a full ``(2, 2, 2, 2)`` array (minor symmetries exact)."""
    out = np.empty((2, 2, 2, 2))
    for i in range(2):
        for j in range(2):
            for m in range(2):
                for n in range(2):
                    out[i, j, m, n] = voigt[pair_index(i, j), pair_index(m, n)]
    return out


def from_rank4(t: np.ndarray) -> np.ndarray:
    return np.array([[t[i, j, m, n] for (m, n) in PAIRS] for (i, j) in PAIRS])


def mandel(voigt: np.ndarray) -> np.ndarray:
    """Orthonormal-basis matrix whose quadratic form equals the tensor's on symmetric matrices."""
    return voigt * np.outer(_MANDEL, _MANDEL)


def min_eigenvalue(voigt: np.ndarray) -> float:
    m = mandel(voigt)
    return float(np.linalg.eigvalsh(0.5 * (m + m.T)).min())


def major_asymmetry(voigt: np.ndarray) -> float:
    return float(np.abs(voigt - voigt.T).max())

