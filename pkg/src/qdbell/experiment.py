"""Monte Carlo model of the pulse-pair interferometer and coincidence histograms.

Each shot is one excitation cycle: two photons emitted ``pulse_sep_ns`` apart,
each routed through the short (H) or long (V, delayed by ``pulse_sep_ns``)
arm. When the first photon takes the long arm and the second the short one,
they overlap at the combining beamsplitter and coincide with the
post-selected polarization state. All other photon pairs, within the cycle
and with photons of neighbouring cycles, are treated as independent.

Per cycle, each group of mutually exclusive outcomes is sampled as a
multinomial over shots, which is equivalent to shot-by-shot routing in the
low detection-efficiency limit.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .bell import GRID_ALPHAS, GRID_BETAS, CountTable, analyzer_projector
from .optics import JonesKind, SourceParams, jones_element, oracle_rho
from .qmath import fmt_num
from .tomography import TomoCounts, canonical_settings

CHUNK_SHOTS = 1 << 18

# (QWP fast axis, polarizer axis) in degrees realizing each analyzer state.
ANALYZER_PLATES = {
    "H": (0.0, 0.0),
    "V": (0.0, 90.0),
    "D": (45.0, 45.0),
    "A": (45.0, 135.0),
    "R": (0.0, 135.0),
    "L": (0.0, 45.0),
}


class ZeroNormalization(ZeroDivisionError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    pulse_sep_ns: float = 2.0
    rep_period_ns: float = 13.0
    window_ns: float = 1.0
    norm_window_ns: float = 100.0
    wavepacket_width_ps: float = 150.0  # physical range 100-200 ps; 0 disables jitter
    bin_ns: float = 0.1
    shots: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if self.window_ns <= 0 or self.window_ns > self.pulse_sep_ns / 2 + 1e-9:
            raise ValueError(
                f"window_ns={self.window_ns} must be positive and at most pulse_sep_ns/2 "
                f"to isolate the central peak"
            )
        if self.norm_window_ns / 2 <= self.window_ns:
            raise ValueError("norm_window_ns must be wider than the central window")
        for span in (self.window_ns, self.norm_window_ns / 2):
            ratio = span / self.bin_ns
            if self.bin_ns <= 0 or abs(ratio - round(ratio)) > 1e-9:
                raise ValueError(f"bin_ns={self.bin_ns} must divide the window span {span}")
        if self.wavepacket_width_ps < 0:
            raise ValueError("wavepacket_width_ps must be >= 0")
        if self.shots < 0 or self.seed < 0:
            raise ValueError("shots and seed must be non-negative")
        if self.rep_period_ns <= 2 * self.pulse_sep_ns:
            raise ValueError("rep_period_ns must exceed twice the pulse separation")

    @property
    def half_range_ns(self) -> float:
        return self.norm_window_ns / 2

    def bin_edges(self) -> np.ndarray:
        n = int(round(self.norm_window_ns / self.bin_ns))
        return np.linspace(-self.half_range_ns, self.half_range_ns, n + 1)


@dataclass(frozen=True)
class Histogram:
    bin_edges: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.bin_edges, dtype=float)
        counts = np.asarray(self.counts, dtype=np.int64)
        if edges.ndim != 1 or counts.shape != (edges.size - 1,):
            raise ValueError("need len(counts) == len(bin_edges) - 1")
        if np.any(np.diff(edges) <= 0):
            raise ValueError("bin edges must be strictly increasing")
        if np.any(counts < 0):
            raise ValueError("counts must be non-negative")
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "counts", counts)

    @property
    def centers(self) -> np.ndarray:
        return (self.bin_edges[:-1] + self.bin_edges[1:]) / 2

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "Histogram") -> "Histogram":
        if not np.array_equal(self.bin_edges, other.bin_edges):
            raise ValueError("cannot add histograms with different binning")
        return Histogram(self.bin_edges, self.counts + other.counts)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["tau_ns", "count"])
        for t, n in zip(self.centers, self.counts):
            w.writerow([f"{fmt_num(t) + 0.0:.12g}", int(n)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Histogram":
        """Read uniformly binned ``tau_ns,count`` rows (tau = bin center)."""
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or [c.strip() for c in rows[0]] != ["tau_ns", "count"]:
            raise ValueError("line 1: expected header 'tau_ns,count'")
        taus, counts = [], []
        for lineno, row in enumerate(rows[1:], start=2):
            if not row:
                continue
            try:
                taus.append(float(row[0]))
                counts.append(int(row[1]))
            except (ValueError, IndexError):
                raise ValueError(f"line {lineno}: malformed row {row!r}") from None
        if len(taus) < 2:
            raise ValueError("histogram needs at least two bins")
        centers = np.array(taus)
        width = (centers[-1] - centers[0]) / (len(centers) - 1)
        # centers were written with 12 significant digits
        if np.max(np.abs(np.diff(centers) - width)) > 1e-9 * max(1.0, abs(width)):
            raise ValueError("histogram bins are not uniform")
        edges = centers[0] - width / 2 + width * np.arange(len(centers) + 1)
        return cls(edges, np.array(counts))


# ---------------------------------------------------------------------------
# Event model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Photon:
    t_ns: float  # arrival at the combining beamsplitter, relative to the cycle start
    pol: np.ndarray
    p_c: float  # probability of leaving through port c


@lru_cache(maxsize=64)
def _postselected(p: SourceParams):
    rho, success = oracle_rho(p)
    return rho.matrix, success


def _arm_photons(cfg: ExperimentConfig, p: SourceParams) -> dict[tuple[int, str], _Photon]:
    """Photon states keyed by (emission index, arm)."""
    h = np.array([1.0, 0.0], dtype=complex)
    v = jones_element(JonesKind.HWP, 45.0) @ h  # long-arm half-wave plate
    out = {}
    for e in (0, 1):
        t0 = e * cfg.pulse_sep_ns
        out[(e, "S")] = _Photon(t0, h, p.R)  # short arm feeds input 'a'
        out[(e, "L")] = _Photon(t0 + cfg.pulse_sep_ns, v, p.T)
    return out


def _pass(pol: np.ndarray, proj: np.ndarray) -> float:
    return float(np.real(pol.conj() @ proj @ pol))


def event_groups(
    cfg: ExperimentConfig, p: SourceParams, alpha_deg: float, beta_deg: float
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-shot outcome groups as ``(tau_centers, probabilities)``.

    Outcomes inside a group are mutually exclusive within one cycle; the
    remaining probability is "no coincidence".
    """
    pa = jones_element(JonesKind.POLARIZER, alpha_deg)
    pb = jones_element(JonesKind.POLARIZER, beta_deg)
    photons = _arm_photons(cfg, p)
    rho, success = _postselected(p)

    def pair_prob(i: _Photon, j: _Photon) -> float:
        return i.p_c * _pass(i.pol, pa) * (1 - j.p_c) * _pass(j.pol, pb)

    taus, probs = [], []
    for arm1 in "SL":
        for arm2 in "SL":
            first, second = photons[(0, arm1)], photons[(1, arm2)]
            if arm1 == "L" and arm2 == "S":
                central = success * float(np.trace(rho @ analyzer_projector(alpha_deg, beta_deg)).real)
                taus.append(second.t_ns - first.t_ns)
                probs.append(0.25 * central)
                continue
            for i, j in ((first, second), (second, first)):
                taus.append(j.t_ns - i.t_ns)
                probs.append(0.25 * pair_prob(i, j))
    groups = [(np.array(taus), np.array(probs))]

    # Neighbour cycles whose whole cluster fits inside the recorded range; a
    # cluster cut by the range edge would bias the normalization by polarization.
    kmax = int(math.floor((cfg.half_range_ns - 2 * cfg.pulse_sep_ns) / cfg.rep_period_ns))
    for k in [*range(-kmax, 0), *range(1, kmax + 1)]:
        taus, probs = [], []
        for i in photons.values():
            for j in photons.values():
                # each emission index takes either arm with probability 1/2
                taus.append(k * cfg.rep_period_ns + j.t_ns - i.t_ns)
                probs.append(0.25 * pair_prob(i, j))
        groups.append((np.array(taus), np.array(probs)))
    return groups


def cluster_centers(cfg: ExperimentConfig) -> np.ndarray:
    """All delays at which the model can put coincidences, inside the histogram range."""
    groups = event_groups(cfg, SourceParams(0.0, 0.0, 0.5), 0.0, 45.0)
    taus = np.unique(np.round(np.concatenate([g[0] for g in groups]), 9))
    return taus[np.abs(taus) < cfg.half_range_ns]


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=tuple(key)))


def _sample_delays(groups, shots: int, width_ns: float, rng: np.random.Generator) -> np.ndarray:
    out = []
    for taus, probs in groups:
        pv = np.append(probs, max(0.0, 1.0 - probs.sum()))
        pv = pv / pv.sum()
        n = rng.multinomial(shots, pv)[:-1]
        centers = np.repeat(taus, n)
        if width_ns > 0:
            centers = centers + rng.laplace(0.0, width_ns, size=centers.size)
        out.append(centers)
    return np.concatenate(out) if out else np.zeros(0)


def simulate_delays(
    cfg: ExperimentConfig, p: SourceParams, alpha_deg: float, beta_deg: float, stream: int = 0
) -> np.ndarray:
    """Raw detection delays tau (ns) for all simulated coincidences, unbinned."""
    groups = event_groups(cfg, p, alpha_deg, beta_deg)
    width = cfg.wavepacket_width_ps / 1000.0
    parts = []
    for idx, n in enumerate(_chunks(cfg.shots)):
        parts.append(_sample_delays(groups, n, width, _rng(cfg.seed, stream, idx)))
    return np.concatenate(parts) if parts else np.zeros(0)


def _chunks(shots: int) -> list[int]:
    full, rest = divmod(shots, CHUNK_SHOTS)
    return [CHUNK_SHOTS] * full + ([rest] if rest else [])


def simulate_histogram(
    cfg: ExperimentConfig,
    p: SourceParams,
    setting: tuple[float, float],
    stream: int = 0,
    threads: int = 1,
) -> Histogram:
    """Coincidence histogram versus delay for analyzer angles ``setting``.

    Shots are split into fixed-size chunks with their own derived seeds, so
    the result does not depend on ``threads``.
    """
    alpha, beta = setting
    groups = event_groups(cfg, p, alpha, beta)
    width = cfg.wavepacket_width_ps / 1000.0
    edges = cfg.bin_edges()

    def run(job):
        idx, n = job
        taus = _sample_delays(groups, n, width, _rng(cfg.seed, stream, idx))
        return np.histogram(taus, bins=edges)[0]

    jobs = list(enumerate(_chunks(cfg.shots)))
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, jobs))
    else:
        parts = [run(j) for j in jobs]
    counts = np.sum(parts, axis=0) if parts else np.zeros(edges.size - 1, dtype=np.int64)
    return Histogram(edges, counts)


def central_window_count(h: Histogram, window_ns: float) -> int:
    """Counts in bins whose center satisfies ``|tau| < window_ns``."""
    reach = min(-h.bin_edges[0], h.bin_edges[-1])
    if window_ns > reach + 1e-12:
        raise ValueError(f"window {window_ns} ns exceeds the histogram range +-{reach} ns")
    return int(h.counts[np.abs(h.centers) < window_ns].sum())


def normalized_C(h: Histogram, cfg: ExperimentConfig) -> float:
    """Central-peak area divided by all coincidences in the normalization window."""
    total = int(h.counts[np.abs(h.centers) < cfg.half_range_ns].sum())
    if total == 0:
        raise ZeroNormalization("no coincidences inside the normalization window")
    return central_window_count(h, cfg.window_ns) / total


def run_bell_experiment(
    cfg: ExperimentConfig,
    p: SourceParams,
    alphas: Sequence[float] = GRID_ALPHAS,
    betas: Sequence[float] = GRID_BETAS,
    threads: int = 1,
    normalize: bool = True,
) -> CountTable:
    """One simulated histogram per (alpha, beta) setting, reduced to a count table.

    With ``normalize`` the table holds normalized central-peak areas scaled
    so complementary quadruples sum to about 100; otherwise raw central counts.
    """
    values = {}
    for idx, (b, a) in enumerate((b, a) for b in betas for a in alphas):
        h = simulate_histogram(cfg, p, (a, b), stream=1000 + idx, threads=threads)
        values[(a, b)] = normalized_C(h, cfg) if normalize else float(central_window_count(h, cfg.window_ns))
    table = CountTable(values)
    if normalize:
        mean = np.mean(list(table.entries.values()))
        if mean > 0:
            table = table.scaled(25.0 / mean)
    return table


def analyzer_projector_from_plates(first: str, second: str) -> np.ndarray:
    """Two-photon projector realized by QWP + polarizer on each arm."""

    def one(token: str) -> np.ndarray:
        qwp, pol = ANALYZER_PLATES[token]
        j = jones_element(JonesKind.QWP, qwp)
        return j.conj().T @ jones_element(JonesKind.POLARIZER, pol) @ j

    return np.kron(one(first), one(second))


def tomo_probabilities(p: SourceParams) -> np.ndarray:
    rho, _ = _postselected(p)
    return np.array(
        [np.trace(rho @ analyzer_projector_from_plates(*s)).real for s in canonical_settings()]
    )


def run_tomo_experiment(
    cfg: ExperimentConfig,
    p: SourceParams,
    pairs_per_setting: float | None = None,
    exact: bool = False,
) -> TomoCounts:
    """Simulated tomography counts on the post-selected pairs.

    ``pairs_per_setting`` defaults to the expected number of post-selected
    pairs in ``cfg.shots`` cycles. ``exact`` returns expectation values.
    """
    _, success = _postselected(p)
    n = pairs_per_setting if pairs_per_setting is not None else cfg.shots * 0.25 * success
    mean = n * np.clip(tomo_probabilities(p), 0.0, None)
    if exact:
        return TomoCounts(mean)
    counts = [_rng(cfg.seed, 2000 + idx).poisson(mu) for idx, mu in enumerate(mean)]
    return TomoCounts(np.array(counts, dtype=float))


def quadruple_sums(table: CountTable) -> dict[tuple[float, float], float]:
    """Sum of each complementary quadruple, keyed by (alpha mod 90, beta mod 90)."""
    out: dict[tuple[float, float], float] = {}
    for (a, b), n in table.entries.items():
        key = (round(a % 90.0, 9), round(b % 90.0, 9))
        out[key] = out.get(key, 0.0) + n
    return out


def angle_grid(alphas: Iterable[float], betas: Iterable[float]) -> list[tuple[float, float]]:
    return [(a, b) for b in betas for a in alphas]
