"""Two-qubit polarization tomography from 16 projective measurements.

Linear inversion solves the 16x16 frame equations directly; maximum
likelihood keeps the estimate physical through a ``G^dagger G`` (lower
triangular ``G``) parametrization.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy.optimize import minimize

from .qmath import DensityMatrix, fmt_num, validate_density

_S = 1 / math.sqrt(2)
ANALYZER_STATES = {
    "H": np.array([1, 0], dtype=complex),
    "V": np.array([0, 1], dtype=complex),
    "D": np.array([_S, _S], dtype=complex),
    "A": np.array([_S, -_S], dtype=complex),
    "R": np.array([_S, -1j * _S], dtype=complex),
    "L": np.array([_S, 1j * _S], dtype=complex),
}

_CANONICAL = "HH HV VV VH RH RV DV DH DR DD RD HD VD VL HL RL".split()
_SCALE_GROUP = ("HH", "HV", "VH", "VV")


class TomoSetting(NamedTuple):
    first: str
    second: str

    def __str__(self) -> str:
        return self.first + self.second


def canonical_settings() -> list[TomoSetting]:
    return [TomoSetting(s[0], s[1]) for s in _CANONICAL]


def setting_projector(s: TomoSetting | str) -> np.ndarray:
    """``|s1><s1| (x) |s2><s2|``."""
    a, b = s
    try:
        u, v = ANALYZER_STATES[a], ANALYZER_STATES[b]
    except KeyError:
        raise ValueError(f"unknown analyzer token in setting {a}{b}") from None
    ket = np.kron(u, v)
    return np.outer(ket, ket.conj())


def _frame() -> np.ndarray:
    return np.array([setting_projector(s) for s in canonical_settings()])


class TomoParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass
class TomoCounts:
    """Counts for the 16 canonical settings, stored in canonical order."""

    counts: np.ndarray
    settings: list[TomoSetting] = field(default_factory=canonical_settings)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=float)
        if self.counts.shape != (16,):
            raise ValueError(f"expected 16 counts, got shape {self.counts.shape}")
        if [tuple(s) for s in self.settings] != [tuple(s) for s in canonical_settings()]:
            raise ValueError("settings must be the canonical 16-setting list")
        if np.any(~np.isfinite(self.counts)) or np.any(self.counts < 0):
            raise ValueError("counts must be finite and non-negative")

    @classmethod
    def from_mapping(cls, mapping) -> "TomoCounts":
        lookup = {str(TomoSetting(*k)) if not isinstance(k, str) else k: v for k, v in mapping.items()}
        missing = [str(s) for s in canonical_settings() if str(s) not in lookup]
        if missing:
            raise ValueError(f"missing settings: {', '.join(missing)}")
        extra = set(lookup) - set(_CANONICAL)
        if extra:
            raise ValueError(f"unexpected settings: {', '.join(sorted(extra))}")
        return cls(np.array([lookup[s] for s in _CANONICAL], dtype=float))

    def as_dict(self) -> dict[str, float]:
        return {str(s): float(n) for s, n in zip(self.settings, self.counts)}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["first", "second", "count"])
        for s, n in zip(self.settings, self.counts):
            w.writerow([s.first, s.second, f"{fmt_num(n):.12g}"])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TomoCounts":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or [c.strip() for c in rows[0]] != ["first", "second", "count"]:
            raise TomoParseError("expected header 'first,second,count'", line=1)
        seen: dict[str, float] = {}
        for lineno, row in enumerate(rows[1:], start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise TomoParseError(f"expected 3 fields, got {len(row)}", line=lineno)
            a, b, n = (c.strip() for c in row)
            for tok in (a, b):
                if tok not in ANALYZER_STATES:
                    raise TomoParseError(f"unknown analyzer token {tok!r}", line=lineno)
            key = a + b
            if key not in _CANONICAL:
                raise TomoParseError(f"setting {key} is not in the canonical set", line=lineno)
            if key in seen:
                raise TomoParseError(f"duplicate setting {key}", line=lineno)
            try:
                value = float(n)
            except ValueError:
                raise TomoParseError(f"non-numeric count {n!r}", line=lineno) from None
            if not math.isfinite(value) or value < 0:
                raise TomoParseError(f"count must be finite and >= 0, got {n}", line=lineno)
            seen[key] = value
        missing = [s for s in _CANONICAL if s not in seen]
        if missing:
            raise TomoParseError(f"missing settings: {', '.join(missing)}")
        return cls(np.array([seen[s] for s in _CANONICAL]))


def exact_probabilities(rho) -> np.ndarray:
    """``Tr[rho P_nu]`` over the canonical settings."""
    m = np.asarray(rho)
    return np.einsum("kij,ji->k", _frame(), m).real


def _hermitian_basis() -> np.ndarray:
    """Pauli products sigma_i (x) sigma_j: orthogonal basis of 4x4 Hermitian operators."""
    paulis = [
        np.eye(2, dtype=complex),
        np.array([[0, 1], [1, 0]], dtype=complex),
        np.array([[0, -1j], [1j, 0]]),
        np.array([[1, 0], [0, -1]], dtype=complex),
    ]
    return np.array([np.kron(a, b) for a in paulis for b in paulis])


def frame_matrix() -> np.ndarray:
    """Real 16x16 map from Pauli coefficients to setting probabilities."""
    return np.einsum("kij,lji->kl", _frame(), _hermitian_basis()).real


def count_scale(c: TomoCounts) -> float:
    """Pair-number scale: the summed counts of the complete {HH, HV, VH, VV} basis."""
    idx = [_CANONICAL.index(s) for s in _SCALE_GROUP]
    return float(c.counts[idx].sum())


def linear_inversion(c: TomoCounts) -> np.ndarray:
    """Hermitian, unit-trace (not necessarily PSD) estimate from counts."""
    if c.counts.sum() <= 0:
        raise ValueError("total counts are zero")
    scale = count_scale(c)
    if scale <= 0:
        raise ValueError("counts in the {HH, HV, VH, VV} group sum to zero; cannot fix the scale")
    p = c.counts / scale
    A = frame_matrix()
    if abs(np.linalg.det(A)) < 1e-12:
        raise np.linalg.LinAlgError("tomography frame is singular")
    coeffs = np.linalg.solve(A, p)
    rho = np.einsum("l,lij->ij", coeffs, _hermitian_basis())
    rho = (rho + rho.conj().T) / 2
    return rho / np.trace(rho).real


# ---------------------------------------------------------------------------
# Maximum likelihood
# ---------------------------------------------------------------------------

_TRIL = [(i, j) for i in range(4) for j in range(i + 1)]


def params_to_g(x: np.ndarray) -> np.ndarray:
    """16 reals -> lower-triangular G with real diagonal."""
    g = np.zeros((4, 4), dtype=complex)
    k = 0
    for i, j in _TRIL:
        if i == j:
            g[i, j] = x[k]
            k += 1
        else:
            g[i, j] = x[k] + 1j * x[k + 1]
            k += 2
    return g


def g_to_params(g: np.ndarray) -> np.ndarray:
    x = []
    for i, j in _TRIL:
        if i == j:
            x.append(g[i, j].real)
        else:
            x.extend([g[i, j].real, g[i, j].imag])
    return np.array(x)


def params_to_rho(x: np.ndarray) -> np.ndarray:
    g = params_to_g(x)
    r = g.conj().T @ g
    return r / np.trace(r).real


def lower_factor(rho: np.ndarray) -> np.ndarray:
    """Lower-triangular G with ``G^dagger G = rho`` (rho positive definite)."""
    j = np.eye(4)[::-1]
    l = np.linalg.cholesky(j @ rho @ j)
    return (j @ l @ j).conj().T


def log_likelihood(x: np.ndarray, counts: np.ndarray) -> float:
    """Poisson log-likelihood with the overall rate profiled out (constants dropped).

    ``sum n ln t - n_tot ln sum t`` with ``t_nu = Tr[G^dagger G P_nu]``; scale
    invariant in G.
    """
    t = exact_probabilities(params_to_g(x).conj().T @ params_to_g(x))
    total = t.sum()
    if total <= 0:
        return -math.inf
    mask = counts > 0
    if np.any(t[mask] <= 0):
        return -math.inf
    return float(np.sum(counts[mask] * np.log(t[mask])) - counts.sum() * math.log(total))


def log_likelihood_grad(x: np.ndarray, counts: np.ndarray) -> np.ndarray:
    g = params_to_g(x)
    frame = _frame()
    t = np.einsum("kij,ji->k", frame, g.conj().T @ g).real
    w = -counts.sum() / t.sum() * np.ones_like(t)
    mask = counts > 0
    w[mask] += counts[mask] / t[mask]
    gw = g @ np.einsum("k,kij->ij", w, frame)
    out = []
    for i, j in _TRIL:
        out.append(2 * gw[i, j].real)
        if i != j:
            out.append(2 * gw[i, j].imag)
    return np.array(out)


@dataclass(frozen=True)
class MLEResult:
    rho: DensityMatrix
    log_likelihood: float
    n_iter: int
    converged: bool
    history: tuple[float, ...]
    message: str = ""


def _initial_params(c: TomoCounts) -> np.ndarray:
    try:
        lin = linear_inversion(c)
        w, v = np.linalg.eigh(lin)
        w = np.clip(w, 1e-6, None)
        r = (v * w) @ v.conj().T
        r = (r + r.conj().T) / 2
        r /= np.trace(r).real
        return g_to_params(lower_factor(r))
    except (ValueError, np.linalg.LinAlgError):
        return g_to_params(lower_factor(np.eye(4) / 4))


def mle_reconstruct(
    c: TomoCounts,
    tol: float = 1e-10,
    max_iter: int = 10_000,
    seed: int | None = None,
) -> MLEResult:
    """Maximum-likelihood density matrix.

    Quasi-Newton ascent (L-BFGS with a Wolfe line search, so accepted
    iterates never lower the likelihood). Stops on a relative likelihood
    gain below ``tol`` or after ``max_iter`` iterations. The optimizer is
    deterministic; ``seed`` is accepted for interface symmetry and unused.
    """
    counts = np.asarray(c.counts, dtype=float)
    if counts.sum() <= 0:
        raise ValueError("total counts are zero")
    x0 = _initial_params(c)
    # Rescale so the profile likelihood is O(1) per count; keeps ftol meaningful.
    weight = 1.0 / counts.sum()
    history = [log_likelihood(x0, counts)]

    def fun(x):
        ll = log_likelihood(x, counts)
        if not math.isfinite(ll):
            return 1e300, np.zeros_like(x)
        return -ll * weight, -log_likelihood_grad(x, counts) * weight

    def record(xk):
        history.append(log_likelihood(xk, counts))

    res = minimize(
        fun,
        x0,
        jac=True,
        method="L-BFGS-B",
        callback=record,
        options={"maxiter": max_iter, "ftol": tol, "gtol": 1e-12, "maxcor": 30},
    )
    rho = validate_density(params_to_rho(res.x))
    ll = log_likelihood(res.x, counts)
    return MLEResult(
        rho=rho,
        log_likelihood=ll,
        n_iter=int(res.nit),
        converged=bool(res.success),
        history=tuple(history),
        message=str(res.message),
    )


def sample_counts(rho, counts_per_setting: float, rng: np.random.Generator) -> TomoCounts:
    """Poisson counts with mean ``counts_per_setting * Tr[rho P_nu]``."""
    p = np.clip(exact_probabilities(rho), 0.0, None)
    return TomoCounts(rng.poisson(counts_per_setting * p).astype(float))


def exact_counts(rho, counts_per_setting: float = 1.0) -> TomoCounts:
    return TomoCounts(counts_per_setting * np.clip(exact_probabilities(rho), 0.0, None))


def settings_from_names(names: Iterable[str]) -> list[TomoSetting]:
    return [TomoSetting(n[0], n[1]) for n in names]


def gram_matrix(projectors: Sequence[np.ndarray]) -> np.ndarray:
    """Hilbert-Schmidt Gram matrix ``Tr[P_i P_j]``."""
    return np.array([[np.trace(a @ b).real for b in projectors] for a in projectors])
