"""Dense complex-matrix helpers for two-qubit polarization states.

Basis order is fixed as ``[HH, HV, VH, VV]``; the first slot is the photon
leaving port ``c`` and the second the photon leaving port ``d``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

BASIS = ("HH", "HV", "VH", "VV")
DEFAULT_TOL = 1e-9


# ---------------------------------------------------------------------------
# Validation errors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    magnitude: float

    def __str__(self) -> str:
        return f"{type(self).__name__}({self.magnitude:.3g})"


class NotHermitian(Violation):
    """max |rho - rho^dagger| entrywise."""


class TraceDeviation(Violation):
    """|Tr(rho) - 1|."""


class NegativeEigenvalue(Violation):
    """Magnitude of the most negative eigenvalue."""


class InvalidDensityMatrix(ValueError):
    def __init__(self, violations: Iterable[Violation]):
        self.violations = list(violations)
        super().__init__("invalid density matrix: " + ", ".join(map(str, self.violations)))


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


def as_matrix(m) -> np.ndarray:
    """Coerce to a finite 2-D complex array."""
    a = np.array(m, dtype=complex)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    return a


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Validated density matrix. Construct through :func:`validate_density`."""

    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.matrix.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.matrix if dtype is None else self.matrix.astype(dtype)

    def __repr__(self) -> str:
        return f"DensityMatrix(dim={self.dim})"

    def to_json(self) -> str:
        return density_to_json(self)

    @classmethod
    def from_json(cls, text: str) -> "DensityMatrix":
        return density_from_json(text)


def pure_state(amplitudes) -> np.ndarray:
    """Normalized ket over ``[HH, HV, VH, VV]``."""
    v = np.asarray(amplitudes, dtype=complex).reshape(-1)
    norm = np.linalg.norm(v)
    if norm == 0:
        raise ValueError("zero state vector")
    return v / norm


def projector(ket) -> np.ndarray:
    v = np.asarray(ket, dtype=complex).reshape(-1)
    return np.outer(v, v.conj())


def ket_to_density(ket) -> DensityMatrix:
    return validate_density(projector(pure_state(ket)))


PSI_MINUS = pure_state([0, 1, -1, 0])
PSI_PLUS = pure_state([0, 1, 1, 0])


def singlet() -> DensityMatrix:
    return ket_to_density(PSI_MINUS)


def maximally_mixed(dim: int = 4) -> DensityMatrix:
    return validate_density(np.eye(dim) / dim)


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def tensor_product(a, b) -> np.ndarray:
    """Kronecker product with row index (i_a, i_b) and column index (j_a, j_b)."""
    return np.kron(as_matrix(a), as_matrix(b))


def _as_array(rho) -> np.ndarray:
    if isinstance(rho, DensityMatrix):
        return rho.matrix
    return as_matrix(rho)


def partial_transpose(rho) -> np.ndarray:
    """Transpose the second qubit of a 4x4 two-qubit operator."""
    m = _as_array(rho)
    if m.shape != (4, 4):
        raise ValueError(f"partial_transpose needs a 4x4 matrix, got {m.shape}")
    # indices (i_a, i_b, j_a, j_b) -> swap i_b <-> j_b
    return m.reshape(2, 2, 2, 2).transpose(0, 3, 2, 1).reshape(4, 4)


def negativity(rho) -> float:
    """Twice the absolute sum of negative partial-transpose eigenvalues.

    Normalized so that any two-qubit Bell state scores exactly 1.
    """
    evals = np.linalg.eigvalsh(partial_transpose(rho))
    return float(2.0 * -evals[evals < 0].sum())


def psd_sqrt(m: np.ndarray) -> np.ndarray:
    """Square root of a Hermitian PSD matrix; tiny negative eigenvalues floored to 0."""
    h = (m + m.conj().T) / 2
    w, v = np.linalg.eigh(h)
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.conj().T


def fidelity(rho1, rho2) -> float:
    """Uhlmann fidelity ``Tr sqrt(sqrt(rho1) rho2 sqrt(rho1))`` (not squared)."""
    a = rho1 if isinstance(rho1, DensityMatrix) else validate_density(rho1)
    b = rho2 if isinstance(rho2, DensityMatrix) else validate_density(rho2)
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    s = psd_sqrt(a.matrix)
    inner = s @ b.matrix @ s
    w = np.linalg.eigvalsh((inner + inner.conj().T) / 2)
    f = float(np.sqrt(np.clip(w, 0.0, None)).sum())
    return min(max(f, 0.0), 1.0)


def validate_density(m, tol: float = DEFAULT_TOL) -> DensityMatrix:
    """Check Hermiticity, unit trace and positivity within ``tol``.

    Eigenvalues in ``[-tol, 0)`` are clamped to zero and the result is
    renormalized. Every violation found is reported in one
    :class:`InvalidDensityMatrix`.
    """
    a = as_matrix(m)
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"density matrix must be square, got {a.shape}")

    violations: list[Violation] = []
    herm_dev = float(np.max(np.abs(a - a.conj().T)))
    if herm_dev > tol:
        violations.append(NotHermitian(herm_dev))
    tr_dev = abs(complex(np.trace(a)) - 1.0)
    if tr_dev > tol:
        violations.append(TraceDeviation(tr_dev))
    h = (a + a.conj().T) / 2
    w, v = np.linalg.eigh(h)
    if w[0] < -tol:
        violations.append(NegativeEigenvalue(float(-w[0])))
    if violations:
        raise InvalidDensityMatrix(violations)

    if w[0] < 0:
        w = np.clip(w, 0.0, None)
        h = (v * w) @ v.conj().T
        h = (h + h.conj().T) / 2
        h = h / np.trace(h).real
    return DensityMatrix(np.array(h, dtype=complex))


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------


def fmt_num(x: float) -> float:
    """Round to 12 significant digits for serialization."""
    return float(f"{float(x):.12g}")


def density_to_json(rho: DensityMatrix) -> str:
    m = rho.matrix
    doc = {
        "dim": rho.dim,
        "basis": list(BASIS) if rho.dim == 4 else None,
        "re": [[fmt_num(x) + 0.0 for x in row] for row in m.real],
        "im": [[fmt_num(x) + 0.0 for x in row] for row in m.imag],
    }
    return json.dumps(doc)


def density_from_json(text: str, tol: float = DEFAULT_TOL) -> DensityMatrix:
    doc = json.loads(text)
    try:
        dim = int(doc["dim"])
        re = np.asarray(doc["re"], dtype=float)
        im = np.asarray(doc["im"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed density-matrix JSON: {exc}") from exc
    if re.shape != (dim, dim) or im.shape != (dim, dim):
        raise ValueError(f"expected {dim}x{dim} re/im arrays, got {re.shape} and {im.shape}")
    if dim == 4 and list(doc.get("basis", BASIS)) != list(BASIS):
        raise ValueError(f"unsupported basis order {doc.get('basis')}; expected {list(BASIS)}")
    # serialized values carry 12 significant digits
    return validate_density(re + 1j * im, tol=max(tol, 1e-10))
