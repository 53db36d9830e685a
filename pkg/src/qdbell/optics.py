"""Amplitude-level simulation of the two-photon linear-optics source.

Photons live in labeled modes ``(spatial, pol, internal)``. ``internal`` is a
wavepacket tag: ``w0`` is the reference wavepacket and ``w_perp`` the part of a
second photon's wavepacket orthogonal to it, which is how partial
distinguishability enters.

Beamsplitter convention (real, unitary)::

    a -> sqrt(R) c + sqrt(T) d
    b -> sqrt(T) c - sqrt(R) d
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from itertools import product
from typing import Iterable, Mapping, NamedTuple

import numpy as np

from .qmath import DensityMatrix, validate_density

SPATIAL = ("a", "b", "c", "d")
POLS = ("H", "V")
INTERNAL = ("w0", "w_perp")
MAX_PHOTONS = 4
NORM_TOL = 1e-12


class DegeneratePostselection(RuntimeError):
    """No coincidence amplitude survives post-selection."""


class ModeLabel(NamedTuple):
    spatial: str
    pol: str
    internal: str = "w0"

    def check(self) -> "ModeLabel":
        if self.spatial not in SPATIAL or self.pol not in POLS or self.internal not in INTERNAL:
            raise ValueError(f"invalid mode label {tuple(self)}")
        return self

    def __str__(self) -> str:
        tag = "" if self.internal == "w0" else "'"
        return f"{self.spatial}{self.pol}{tag}"


# A Fock basis state is a sorted tuple of (mode, count) pairs with count > 0.
FockState = tuple
VACUUM: FockState = ()


def fock(occupations: Mapping[ModeLabel, int] | Iterable[ModeLabel]) -> FockState:
    """Build a canonical Fock basis state.

    Accepts either a mapping ``mode -> count`` or an iterable of modes (one
    entry per photon).
    """
    counts: dict[ModeLabel, int] = defaultdict(int)
    if isinstance(occupations, Mapping):
        items = occupations.items()
    else:
        items = ((m, 1) for m in occupations)
    for mode, n in items:
        mode = ModeLabel(*mode).check()
        if n < 0:
            raise ValueError(f"negative occupation {n} for {mode}")
        counts[mode] += int(n)
    state = tuple(sorted((m, n) for m, n in counts.items() if n > 0))
    if photon_number(state) > MAX_PHOTONS:
        raise ValueError(f"Fock space is capped at {MAX_PHOTONS} photons")
    return state


def photon_number(state: FockState) -> int:
    return sum(n for _, n in state)


def _monomial_to_fock(monomial: tuple) -> tuple[FockState, float]:
    """Creation-operator monomial -> (Fock state, sqrt(prod n!))."""
    counts: dict[ModeLabel, int] = defaultdict(int)
    for m in monomial:
        counts[m] += 1
    state = tuple(sorted(counts.items()))
    factor = math.sqrt(math.prod(math.factorial(n) for n in counts.values()))
    return state, factor


def _fock_to_monomial(state: FockState) -> tuple[tuple, float]:
    monomial = tuple(m for m, n in state for _ in range(n))
    factor = math.sqrt(math.prod(math.factorial(n) for _, n in state))
    return monomial, factor


class BosonicState:
    """Superposition of Fock basis states, ``{FockState: amplitude}``."""

    def __init__(self, terms: Mapping[FockState, complex] | None = None):
        self.terms: dict[FockState, complex] = {}
        for st, amp in (terms or {}).items():
            amp = complex(amp)
            if not (math.isfinite(amp.real) and math.isfinite(amp.imag)):
                raise ValueError("non-finite amplitude")
            if photon_number(st) > MAX_PHOTONS:
                raise ValueError(f"Fock space is capped at {MAX_PHOTONS} photons")
            if amp != 0:
                self.terms[st] = self.terms.get(st, 0) + amp

    @classmethod
    def from_creators(cls, *factors: Mapping[ModeLabel, complex], coeff: complex = 1.0) -> "BosonicState":
        """State ``coeff * prod_k (sum_m c_km a_m^dagger) |vac>``.

        Each factor is one photon's creation operator written as a linear
        combination of mode creation operators.
        """
        poly: dict[tuple, complex] = {(): complex(coeff)}
        for f in factors:
            poly = _multiply(poly, {m: complex(c) for m, c in f.items()})
        return cls._from_poly(poly)

    @classmethod
    def _from_poly(cls, poly: Mapping[tuple, complex]) -> "BosonicState":
        out: dict[FockState, complex] = defaultdict(complex)
        for mono, c in poly.items():
            st, factor = _monomial_to_fock(mono)
            out[st] += c * factor
        return cls({k: v for k, v in out.items() if abs(v) > 1e-15})

    def _to_poly(self) -> dict[tuple, complex]:
        poly = {}
        for st, amp in self.terms.items():
            mono, factor = _fock_to_monomial(st)
            poly[mono] = amp / factor
        return poly

    def norm(self) -> float:
        return math.sqrt(sum(abs(a) ** 2 for a in self.terms.values()))

    def amplitude(self, state: FockState) -> complex:
        return self.terms.get(state, 0j)

    def occupied_spatial(self) -> set[str]:
        return {m.spatial for st in self.terms for m, _ in st}

    def photons_per_label(self) -> dict[tuple[str, str], float]:
        """Expected photon number per (pol, internal) label."""
        out: dict[tuple[str, str], float] = defaultdict(float)
        for st, amp in self.terms.items():
            for m, n in st:
                out[(m.pol, m.internal)] += n * abs(amp) ** 2
        return dict(out)

    def __repr__(self) -> str:
        parts = []
        for st, amp in sorted(self.terms.items()):
            ket = ",".join(f"{n}{m}" if n > 1 else str(m) for m, n in st) or "vac"
            parts.append(f"({amp.real:+.4g}{amp.imag:+.4g}j)|{ket}>")
        return " ".join(parts) or "0"


def _multiply(poly: Mapping[tuple, complex], factor: Mapping[ModeLabel, complex]) -> dict[tuple, complex]:
    out: dict[tuple, complex] = defaultdict(complex)
    for mono, c in poly.items():
        for m, k in factor.items():
            out[tuple(sorted(mono + (m,)))] += c * k
    return dict(out)


@dataclass(frozen=True)
class WeightedEnsemble:
    """Incoherent mixture of pure bosonic states."""

    components: tuple[tuple[float, BosonicState], ...]

    def __post_init__(self):
        weights = [w for w, _ in self.components]
        if any(w < 0 for w in weights):
            raise ValueError("negative ensemble weight")
        if abs(sum(weights) - 1.0) > 1e-12:
            raise ValueError(f"ensemble weights sum to {sum(weights)!r}, not 1")

    def map(self, fn) -> "WeightedEnsemble":
        return WeightedEnsemble(tuple((w, fn(s)) for w, s in self.components))


@dataclass(frozen=True)
class SourceParams:
    """Source and beamsplitter parameters.

    g2: equal-time second-order correlation of the source.
    V: wavepacket overlap probability of consecutive photons.
    R: reflectance of the combining beamsplitter; ``T = 1 - R``.
    """

    g2: float = 0.0
    V: float = 1.0
    R: float = 0.5

    def __post_init__(self):
        if not (math.isfinite(self.g2) and self.g2 >= 0):
            raise ValueError(f"g2 must be >= 0, got {self.g2}")
        if not (0.0 <= self.V <= 1.0):
            raise ValueError(f"V must lie in [0, 1], got {self.V}")
        if not (0.0 < self.R < 1.0):
            raise ValueError(f"R must lie in (0, 1), got {self.R}")

    @property
    def T(self) -> float:
        return 1.0 - self.R

    @property
    def ratio(self) -> float:
        return self.R / self.T

    @classmethod
    def from_ratio(cls, g2: float, V: float, ratio: float) -> "SourceParams":
        """Build from ``R/T`` instead of ``R``."""
        if ratio <= 0:
            raise ValueError(f"R/T must be positive, got {ratio}")
        return cls(g2=g2, V=V, R=ratio / (1.0 + ratio))


# ---------------------------------------------------------------------------
# Jones calculus
# ---------------------------------------------------------------------------


class JonesKind(str, Enum):
    HWP = "HWP"
    QWP = "QWP"
    POLARIZER = "POLARIZER"


def _rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]], dtype=complex)


def jones_element(kind: JonesKind | str, angle_deg: float) -> np.ndarray:
    """2x2 Jones matrix in the (H, V) basis.

    ``angle_deg`` is the fast axis (waveplates) or transmission axis
    (polarizer) measured from horizontal. The slow axis picks up a phase
    ``exp(-i delta)``, so a QWP at 45 deg sends H to (H + iV)/sqrt(2).
    """
    try:
        kind = JonesKind(str(kind.value if isinstance(kind, JonesKind) else kind).upper())
    except ValueError:
        raise ValueError(f"unknown Jones element {kind!r}") from None
    if not math.isfinite(angle_deg):
        raise ValueError("angle must be finite")
    theta = math.radians(angle_deg)
    diag = {
        JonesKind.HWP: np.diag([1.0, -1.0]).astype(complex),
        JonesKind.QWP: np.diag([1.0, -1j]),
        JonesKind.POLARIZER: np.diag([1.0, 0.0]).astype(complex),
    }[kind]
    rot = _rotation(theta)
    return rot @ diag @ rot.T


def linear_projector(angle_deg: float) -> np.ndarray:
    """Projector onto linear polarization at ``angle_deg``."""
    return jones_element(JonesKind.POLARIZER, angle_deg)


# ---------------------------------------------------------------------------
# Beamsplitter and source
# ---------------------------------------------------------------------------


def beamsplitter_matrix(R: float) -> np.ndarray:
    """Input (a, b) -> output (c, d) creation-operator map, rows = inputs."""
    r, t = math.sqrt(R), math.sqrt(1.0 - R)
    return np.array([[r, t], [t, -r]])


def apply_beamsplitter(
    state: BosonicState,
    R: float,
    in_pair: tuple[str, str] = ("a", "b"),
    out_pair: tuple[str, str] = ("c", "d"),
) -> BosonicState:
    """Send the photons in ``in_pair`` through a beamsplitter of reflectance R.

    Polarization and internal labels are carried through unchanged; modes on
    other spatial labels pass untouched.
    """
    if not 0.0 < R < 1.0:
        raise ValueError(f"R must lie in (0, 1), got {R}")
    busy = state.occupied_spatial() & set(out_pair)
    if busy:
        raise ValueError(f"output ports {sorted(busy)} already occupied before the beamsplitter")
    u = beamsplitter_matrix(R)
    i_in = {in_pair[0]: 0, in_pair[1]: 1}

    def image(m: ModeLabel) -> dict[ModeLabel, complex]:
        if m.spatial not in i_in:
            return {m: 1.0}
        row = u[i_in[m.spatial]]
        return {
            ModeLabel(out_pair[0], m.pol, m.internal): row[0],
            ModeLabel(out_pair[1], m.pol, m.internal): row[1],
        }

    poly: dict[tuple, complex] = defaultdict(complex)
    for mono, c in state._to_poly().items():
        sub: dict[tuple, complex] = {(): c}
        for m in mono:
            sub = _multiply(sub, image(m))
        for k, v in sub.items():
            poly[k] += v
    return BosonicState._from_poly(poly)


def single_photon(spatial: str, pol: str, overlap: float = 1.0) -> dict[ModeLabel, complex]:
    """Creation operator for one photon whose wavepacket overlaps ``w0`` with probability ``overlap``."""
    op = {}
    if overlap > 0:
        op[ModeLabel(spatial, pol, "w0")] = math.sqrt(overlap)
    if overlap < 1:
        op[ModeLabel(spatial, pol, "w_perp")] = math.sqrt(1.0 - overlap)
    return op


def two_photon_input(pol_a: str = "H", pol_b: str = "V", overlap: float = 1.0) -> BosonicState:
    """One photon in 'a' on ``w0`` and one in 'b' with overlap ``overlap`` to it."""
    return BosonicState.from_creators(single_photon("a", pol_a), single_photon("b", pol_b, overlap))


def double_pulse_weight(g2: float) -> float:
    """Weight of each two-photons-in-one-port component."""
    return g2 / (1.0 + 2.0 * g2)


def prepare_source_pair(p: SourceParams) -> WeightedEnsemble:
    """Mixture of photon states at the combining beamsplitter inputs.

    Components: one H photon in 'a' plus one V photon in 'b' (overlap V),
    and with weight ``g2/(1+2 g2)`` each, two H photons in 'a' or two V
    photons in 'b'.
    """
    w2 = double_pulse_weight(p.g2)
    if 2 * w2 > 0.5:
        raise ValueError(f"g2={p.g2} is outside the low-pump regime (double-pulse weight {2 * w2:.3f} > 0.5)")
    comps = [(1.0 - 2.0 * w2, two_photon_input("H", "V", p.V))]
    if w2 > 0:
        aH = single_photon("a", "H")
        bV = single_photon("b", "V")
        comps.append((w2, BosonicState.from_creators(aH, aH, coeff=1 / math.sqrt(2))))
        comps.append((w2, BosonicState.from_creators(bV, bV, coeff=1 / math.sqrt(2))))
    return WeightedEnsemble(tuple(comps))


_POL_INDEX = {"H": 0, "V": 1}
_INT_INDEX = {"w0": 0, "w_perp": 1}


def _coincidence_amplitudes(state: BosonicState) -> np.ndarray:
    """Amplitudes with exactly one photon in 'c' and one in 'd'.

    Returned as a 4x4 array indexed by (pol_c*2 + pol_d, int_c*2 + int_d).
    """
    psi = np.zeros((4, 4), dtype=complex)
    for st, amp in state.terms.items():
        if photon_number(st) != 2:
            continue
        c = [m for m, n in st if m.spatial == "c" for _ in range(n)]
        d = [m for m, n in st if m.spatial == "d" for _ in range(n)]
        if len(c) != 1 or len(d) != 1:
            continue
        mc, md = c[0], d[0]
        row = 2 * _POL_INDEX[mc.pol] + _POL_INDEX[md.pol]
        col = 2 * _INT_INDEX[mc.internal] + _INT_INDEX[md.internal]
        psi[row, col] += amp
    return psi


def postselect_coincidence(e: WeightedEnsemble) -> tuple[DensityMatrix, float]:
    """Keep events with one photon in 'c' and one in 'd'; trace out wavepackets.

    Returns the normalized polarization state (first slot = 'c') and the
    total post-selection probability.
    """
    rho = np.zeros((4, 4), dtype=complex)
    for w, state in e.components:
        psi = _coincidence_amplitudes(state)
        rho += w * (psi @ psi.conj().T)
    success = float(np.trace(rho).real)
    if success < 1e-15:
        raise DegeneratePostselection("no coincidence amplitude survives post-selection")
    return validate_density(rho / success), success


def rho_model(p: SourceParams) -> DensityMatrix:
    """Closed-form post-selected polarization state over [HH, HV, VH, VV]."""
    rt, tr = p.R / p.T, p.T / p.R
    norm = rt + tr + 4 * p.g2
    m = np.zeros((4, 4), dtype=complex)
    m[0, 0] = m[3, 3] = 2 * p.g2
    m[1, 1] = rt
    m[2, 2] = tr
    m[1, 2] = m[2, 1] = -p.V
    return validate_density(m / norm)


def oracle_rho(p: SourceParams) -> tuple[DensityMatrix, float]:
    """Post-selected state by brute-force mode expansion (no closed form)."""
    ens = prepare_source_pair(p)
    ens = ens.map(lambda s: apply_beamsplitter(s, p.R))
    return postselect_coincidence(ens)


def hom_coincidence_prob(V: float, R: float) -> float:
    """Coincidence probability for two same-polarization photons with overlap V."""
    if not 0.0 <= V <= 1.0:
        raise ValueError(f"V must lie in [0, 1], got {V}")
    if not 0.0 < R < 1.0:
        raise ValueError(f"R must lie in (0, 1), got {R}")
    T = 1.0 - R
    return R * R + T * T - 2.0 * R * T * V


def simulated_hom_prob(V: float, R: float) -> float:
    """Same quantity as :func:`hom_coincidence_prob`, from the mode expansion."""
    out = apply_beamsplitter(two_photon_input("H", "H", V), R)
    psi = _coincidence_amplitudes(out)
    return float(np.sum(np.abs(psi) ** 2))


def all_modes(spatial: Iterable[str] = SPATIAL) -> list[ModeLabel]:
    return [ModeLabel(s, p, i) for s, p, i in product(spatial, POLS, INTERNAL)]
