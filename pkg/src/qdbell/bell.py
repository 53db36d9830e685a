"""CHSH analysis of polarization-analyzed coincidence counts."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from itertools import permutations
from typing import Iterable, Mapping, Sequence

import numpy as np

from .optics import linear_projector
from .qmath import DensityMatrix, fmt_num

REFERENCE_ANGLES = (0.0, 45.0, 22.5, 67.5)  # (alpha, alpha', beta, beta')
GRID_ALPHAS = (0.0, 45.0, 90.0, 135.0)
GRID_BETAS = (22.5, 67.5, 112.5, 157.5)


class MissingEntry(LookupError):
    def __init__(self, alpha_deg: float, beta_deg: float):
        self.alpha_deg, self.beta_deg = alpha_deg, beta_deg
        super().__init__(f"missing count for setting alpha={alpha_deg:g} deg, beta={beta_deg:g} deg")


class ZeroDenominator(ZeroDivisionError):
    pass


class CountTableParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def norm_angle(deg: float) -> float:
    """Reduce a polarizer angle to [0, 180), rounded to 1e-9 deg for use as a key."""
    a = round(float(deg) % 180.0, 9)
    return 0.0 if a >= 180.0 else a + 0.0


def perp(deg: float) -> float:
    return norm_angle(deg + 90.0)


@dataclass
class CountTable:
    """Coincidence counts keyed by analyzer angles (alpha, beta) in degrees."""

    entries: dict[tuple[float, float], float] = field(default_factory=dict)

    def __post_init__(self):
        raw, self.entries = self.entries, {}
        for (a, b), n in raw.items():
            self.add(a, b, n)

    def add(self, alpha_deg: float, beta_deg: float, count: float) -> None:
        key = (norm_angle(alpha_deg), norm_angle(beta_deg))
        if key in self.entries:
            raise ValueError(f"duplicate setting alpha={alpha_deg:g}, beta={beta_deg:g}")
        count = float(count)
        if not math.isfinite(count) or count < 0:
            raise ValueError(f"count must be finite and >= 0, got {count}")
        self.entries[key] = count

    def __getitem__(self, key: tuple[float, float]) -> float:
        a, b = key
        try:
            return self.entries[(norm_angle(a), norm_angle(b))]
        except KeyError:
            raise MissingEntry(norm_angle(a), norm_angle(b)) from None

    def __contains__(self, key) -> bool:
        a, b = key
        return (norm_angle(a), norm_angle(b)) in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def scaled(self, factor: float) -> "CountTable":
        return CountTable({k: v * factor for k, v in self.entries.items()})

    def missing(self, alphas: Iterable[float], betas: Iterable[float]) -> list[tuple[float, float]]:
        return [(norm_angle(a), norm_angle(b)) for a in alphas for b in betas if (a, b) not in self]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["alpha_deg", "beta_deg", "count"])
        for (a, b), n in sorted(self.entries.items(), key=lambda kv: (kv[0][1], kv[0][0])):
            w.writerow([f"{a:.12g}", f"{b:.12g}", f"{fmt_num(n):.12g}"])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "CountTable":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or [c.strip() for c in rows[0]] != ["alpha_deg", "beta_deg", "count"]:
            raise CountTableParseError("expected header 'alpha_deg,beta_deg,count'", line=1)
        table = cls()
        for lineno, row in enumerate(rows[1:], start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise CountTableParseError(f"expected 3 fields, got {len(row)}", line=lineno)
            try:
                a, b, n = (float(c) for c in row)
            except ValueError:
                raise CountTableParseError(f"non-numeric field in {row!r}", line=lineno) from None
            if n < 0:
                raise CountTableParseError(f"negative count {n:g}", line=lineno)
            if (a, b) in table:
                raise CountTableParseError(f"duplicate setting ({a:g}, {b:g})", line=lineno)
            try:
                table.add(a, b, n)
            except ValueError as exc:
                raise CountTableParseError(str(exc), line=lineno) from None
        return table


@dataclass(frozen=True)
class ChshResult:
    S: float
    sigma_S: float
    E_values: tuple[float, float, float, float]  # E(a,b), E(a',b), E(a',b'), E(a,b')
    sigma_E: tuple[float, float, float, float]
    angles: tuple[float, float, float, float]

    @property
    def violation_sigmas(self) -> float:
        if self.sigma_S == 0:
            return math.inf if self.S > 2 else (-math.inf if self.S < 2 else 0.0)
        return (self.S - 2.0) / self.sigma_S

    @property
    def violates(self) -> bool:
        return self.S > 2.0


def correlation_E(t: CountTable, alpha_deg: float, beta_deg: float) -> tuple[float, float]:
    """Correlation E(alpha, beta) and its Poisson standard error."""
    a, b = alpha_deg, beta_deg
    same = t[a, b] + t[perp(a), perp(b)]
    cross = t[perp(a), b] + t[a, perp(b)]
    total = same + cross
    if total <= 0:
        raise ZeroDenominator(f"no counts for the quadruple at alpha={a:g}, beta={b:g}")
    E = (same - cross) / total
    sigma = 2.0 * math.sqrt(same * cross * total) / total**2
    return E, sigma


def chsh_S(
    t: CountTable,
    alpha_deg: float = REFERENCE_ANGLES[0],
    alpha_prime_deg: float = REFERENCE_ANGLES[1],
    beta_deg: float = REFERENCE_ANGLES[2],
    beta_prime_deg: float = REFERENCE_ANGLES[3],
) -> ChshResult:
    """S = |E(a,b) - E(a',b)| + |E(a',b') + E(a,b')|."""
    a, a2, b, b2 = alpha_deg, alpha_prime_deg, beta_deg, beta_prime_deg
    pairs = [(a, b), (a2, b), (a2, b2), (a, b2)]
    for x, y in pairs:
        for key in ((x, y), (perp(x), perp(y)), (perp(x), y), (x, perp(y))):
            if key not in t:
                raise MissingEntry(norm_angle(key[0]), norm_angle(key[1]))
    res = [correlation_E(t, x, y) for x, y in pairs]
    E = tuple(r[0] for r in res)
    sig = tuple(r[1] for r in res)
    S = abs(E[0] - E[1]) + abs(E[2] + E[3])
    sigma_S = math.sqrt(sum(s * s for s in sig))
    return ChshResult(S, sigma_S, E, sig, (a, a2, b, b2))


def analyzer_projector(alpha_deg: float, beta_deg: float) -> np.ndarray:
    return np.kron(linear_projector(alpha_deg), linear_projector(beta_deg))


def predicted_counts(rho: DensityMatrix, alpha_deg: float, beta_deg: float, N_quad: float = 100.0) -> float:
    """``N_quad * Tr[rho (P_alpha x P_beta)]``."""
    if N_quad <= 0:
        raise ValueError("N_quad must be positive")
    m = np.asarray(rho)
    # clip roundoff below zero so the result is a valid count
    return max(0.0, float(N_quad * np.trace(m @ analyzer_projector(alpha_deg, beta_deg)).real))


def predicted_table(
    rho: DensityMatrix,
    alphas: Iterable[float] = GRID_ALPHAS,
    betas: Iterable[float] = GRID_BETAS,
    N_quad: float = 100.0,
) -> CountTable:
    return CountTable({(a, b): predicted_counts(rho, a, b, N_quad) for a in alphas for b in betas})


def grid_for(alpha, alpha_prime, beta, beta_prime) -> tuple[list[float], list[float]]:
    """The 4x4 grid of settings a CHSH evaluation needs."""
    alphas = sorted({norm_angle(x) for x in (alpha, alpha_prime, perp(alpha), perp(alpha_prime))})
    betas = sorted({norm_angle(x) for x in (beta, beta_prime, perp(beta), perp(beta_prime))})
    return alphas, betas


def qber_estimate(rho: DensityMatrix, basis_deg: float = 0.0) -> float:
    """Probability of a same-polarization coincidence in the basis at ``basis_deg``.

    For an anticorrelated singlet key these are the bit errors.
    """
    m = np.asarray(rho)
    q = np.trace(m @ (analyzer_projector(basis_deg, basis_deg)
                      + analyzer_projector(basis_deg + 90, basis_deg + 90))).real
    return float(min(max(q, 0.0), 1.0))


def read_count_table(path) -> CountTable:
    with open(path, encoding="utf-8") as fh:
        return CountTable.from_csv(fh.read())


def table_from_grid(grid: Mapping[float, Mapping[float, float]]) -> CountTable:
    """Build from ``{beta: {alpha: count}}``, the row/column layout of a printed table."""
    return CountTable({(a, b): n for b, row in grid.items() for a, n in row.items()})


# The assignment within the standard grid that is optimal for the singlet,
# whose correlation is -cos 2(alpha - beta).
SINGLET_ANGLES = (0.0, 45.0, 67.5, 22.5)


def chsh_best(
    t: CountTable,
    alphas: Sequence[float] = GRID_ALPHAS,
    betas: Sequence[float] = GRID_BETAS,
) -> ChshResult:
    """Largest S over all (alpha, alpha', beta, beta') assignments drawn from a grid."""
    best = None
    for a, a2 in permutations(alphas, 2):
        for b, b2 in permutations(betas, 2):
            try:
                r = chsh_S(t, a, a2, b, b2)
            except (MissingEntry, ZeroDenominator):
                continue
            if best is None or r.S > best.S + 1e-12:
                best = r
    if best is None:
        raise MissingEntry(norm_angle(alphas[0]), norm_angle(betas[0]))
    return best
