from typing import Any, List, Optional, Protocol, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from app.models.geometry import Domain


class Hamiltonian(Protocol):
    """
    Anything with a value and a homogeneous gradient on pairs (x, y).

    The gradient (gx, gy) is taken at the given representatives, so that the differential along a
    homogeneous velocity (dx, dy) equals 2 Re(gx^H dx + gy^H dy).
    """

    def value(self, x: np.ndarray, y: np.ndarray) -> float: ...

    def gradient(self, x: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]: ...


def symbol_value(matrix: np.ndarray, z: np.ndarray) -> float:
    return float(np.vdot(z, matrix @ z).real / np.vdot(z, z).real)


def symbol_gradient(matrix: np.ndarray, z: np.ndarray) -> np.ndarray:
    norm2 = np.vdot(z, z).real
    return (matrix @ z - symbol_value(matrix, z) * z) / norm2


class SymbolFunction(BaseModel):
    """f(x) + g(y) with f, g quotients of Hermitian forms by the squared norm"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    matrix_x: np.ndarray
    matrix_y: Optional[np.ndarray] = None
    defined_on: Domain = Domain.FLAG
    name: str = "symbol"

    @model_validator(mode="after")
    def check_hermitian(self) -> "SymbolFunction":
        for matrix in (self.matrix_x, self.matrix_y):
            if matrix is None:
                continue
            if matrix.shape != (3, 3):
                raise ValueError("symbol matrices must be 3x3")
            if np.max(np.abs(matrix - matrix.conj().T)) >= 1e-14:
                raise ValueError("symbol matrices must be Hermitian")
        return self

    @property
    def eigenvalues_x(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix_x)

    @property
    def is_diagonal(self) -> bool:
        return all(
            m is None or np.allclose(m, np.diag(np.diag(m)), atol=0.0)
            for m in (self.matrix_x, self.matrix_y)
        )

    def balance_sums(self) -> np.ndarray:
        """Diagonal sums lambda^x_i + lambda^y_i"""
        matrix_y = self.matrix_y if self.matrix_y is not None else np.zeros((3, 3))
        return np.real(np.diag(self.matrix_x) + np.diag(matrix_y))

    def is_balanced(self, tol: float = 1e-12) -> bool:
        """M_x + M_y^T is a multiple of the identity, so the flow preserves sum x_i y_i = 0"""
        matrix_y = self.matrix_y if self.matrix_y is not None else np.zeros((3, 3))
        total = self.matrix_x + matrix_y.T
        shift = np.trace(total) / 3
        return bool(np.max(np.abs(total - shift * np.eye(3))) < tol)

    def value(self, x: np.ndarray, y: Optional[np.ndarray] = None) -> float:
        result = symbol_value(self.matrix_x, x)
        if self.matrix_y is not None and y is not None:
            result += symbol_value(self.matrix_y, y)
        return result

    def gradient(self, x: np.ndarray, y: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
        gx = symbol_gradient(self.matrix_x, x)
        if self.matrix_y is None or y is None:
            return gx, np.zeros(3, dtype=complex)
        return gx, symbol_gradient(self.matrix_y, y)

    def generators(self) -> Tuple[np.ndarray, np.ndarray]:
        """Matrices A, B with the flow x -> expm(A t) x, y -> expm(B t) y"""
        matrix_y = self.matrix_y if self.matrix_y is not None else np.zeros((3, 3))
        return -2j * self.matrix_x, -2j * matrix_y


class IntegralPair(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    f1: SymbolFunction
    f2: SymbolFunction
    provenance: str = "default"

    @model_validator(mode="after")
    def check_independent(self) -> "IntegralPair":
        triples = np.vstack([
            np.real(np.diag(self.f1.matrix_x)),
            np.real(np.diag(self.f2.matrix_x)),
            np.ones(3),
        ])
        if abs(np.linalg.det(triples)) < 1e-12:
            raise ValueError("integral eigenvalue triples are affinely dependent")
        total = self.f1.matrix_x + self.f2.matrix_x
        if np.allclose(total, total[0, 0] * np.eye(3)):
            raise ValueError("sum of the integrals is proportional to the identity")
        return self

    @property
    def affine_determinant(self) -> float:
        return float(np.linalg.det(np.vstack([
            np.real(np.diag(self.f1.matrix_x)),
            np.real(np.diag(self.f2.matrix_x)),
            np.ones(3),
        ])))

    def values(self, x: np.ndarray, y: np.ndarray) -> Tuple[float, float]:
        return self.f1.value(x, y), self.f2.value(x, y)


class FlowResult(BaseModel):
    """End point and monitored path of an integrated Hamiltonian flow"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    end: Any
    times: np.ndarray
    path: List[Any]
    energy_drift: float = 0.0
    max_residual: float = 0.0
