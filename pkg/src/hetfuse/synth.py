"""Seeded synthetic outbreaks written in the avian file layout.

Infections follow a discrete SIR process per location, coupled through a
Gaussian spatial kernel, started from a few seed locations. Reported cases are
Poisson draws around the new infections (or their rounded mean when
``noise="none"``). Each location carries one of ``strains`` lineages whose
sequences drift from a shared ancestor, so K80 distances cluster by strain.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Case, Dataset, haversine_matrix, save_avian
from .genetics import AlignedSequence

BASES = np.array(list("AGCT"))
NOISE_MODES = ("poisson", "none")


@dataclass(frozen=True)
class SynthSpec:
    n_locations: int = 8
    weeks: int = 40
    strains: int = 2
    seed: int = 0
    seq_length: int = 120
    drift: float = 0.15  # per-site probability a strain root differs from the ancestor
    within: float = 0.01  # per-site mutation probability for an individual case
    extent_deg: float = 0.4  # side of the square the locations are scattered over
    sigma_km: float = 10.0
    susceptible: tuple[float, float] = (100.0, 400.0)  # initial susceptible range per location
    beta: float = 1.6  # transmission rate per week
    gamma: float = 0.5  # recovery rate per week
    report: float = 0.08  # fraction of new infections reported as cases
    waning: float = 0.05  # weekly fraction of recovered returning to susceptible
    forcing: float = 0.4  # amplitude of the 26-week seasonal transmission cycle
    importation: float = 0.05  # mean weekly imported infections per location
    n_seeds: int = 2
    noise: str = "poisson"

    def __post_init__(self):
        if self.noise not in NOISE_MODES:
            raise ValueError(f"noise must be one of {NOISE_MODES}")
        if self.n_locations < 1 or self.weeks < 1:
            raise ValueError("need at least one location and one week")


def _mutate(rng, seq: np.ndarray, rate: float) -> np.ndarray:
    out = seq.copy()
    hit = rng.random(len(seq)) < rate
    # shift by 1..3 in the 4-letter code so the base always changes
    out[hit] = (out[hit] + rng.integers(1, 4, size=int(hit.sum()))) % 4
    return out


def simulate_counts(spec: SynthSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(coords, infected (W, N), population (W, N))``."""
    N, W = spec.n_locations, spec.weeks
    coords = np.column_stack([
        40.0 + rng.uniform(0, spec.extent_deg, N),
        -90.0 + rng.uniform(0, spec.extent_deg, N),
    ])
    dist = haversine_matrix(coords)
    kernel = np.exp(-dist ** 2 / (2 * spec.sigma_km ** 2))
    mix = kernel / kernel.sum(axis=1, keepdims=True)

    S = rng.uniform(*spec.susceptible, N)
    total = S.copy()
    Inf = np.zeros(N)
    Inf[rng.choice(N, size=min(spec.n_seeds, N), replace=False)] = 3.0
    infected = np.zeros((W, N))
    population = np.zeros((W, N))
    season = 1.0 + spec.forcing * np.sin(2 * np.pi * np.arange(W) / 26.0)
    for t in range(W):
        pressure = spec.beta * season[t] * (mix @ (Inf / total))
        new = S * (1.0 - np.exp(-pressure))
        recovered = total - S - Inf
        S = S - new + spec.waning * recovered
        Inf = (1.0 - spec.gamma) * Inf + new + spec.importation * rng.random(N)
        mean_cases = spec.report * new
        infected[t] = rng.poisson(mean_cases) if spec.noise == "poisson" else np.round(mean_cases)
        population[t] = np.round(total * season[t] * rng.uniform(0.9, 1.1, N), 3)
    return coords, infected, population


def synthesize(spec: SynthSpec) -> Dataset:
    rng = np.random.default_rng(spec.seed)
    coords, infected, population = simulate_counts(spec, rng)
    N, W = spec.n_locations, spec.weeks

    ancestor = rng.integers(0, 4, spec.seq_length)
    roots = [_mutate(rng, ancestor, spec.drift) for _ in range(max(spec.strains, 1))]
    loc_strain = rng.integers(0, len(roots), N)

    location_ids = [f"L{i:03d}" for i in range(N)]
    cases, sequences = [], {}
    for t in range(W):
        for i in range(N):
            for k in range(int(infected[t, i])):
                cid = f"c{t:03d}_{i:03d}_{k}"
                cases.append(Case(cid, t, i))
                # most cases carry their location's strain
                s = loc_strain[i] if rng.random() < 0.9 else int(rng.integers(0, len(roots)))
                sequences[cid] = AlignedSequence(cid, "".join(BASES[_mutate(rng, roots[s], spec.within)]))
    return Dataset(location_ids, list(range(W)), infected, population, cases,
                   distances=haversine_matrix(coords), coords=coords, sequences=sequences)


def generate_synthetic(n_locations: int, weeks: int, strains: int, seed: int, out_dir: str | Path,
                       **kwargs) -> Dataset:
    """Synthesize and write ``locations.csv``, ``abundance.csv``, ``cases.csv``, ``sequences.tsv``."""
    ds = synthesize(SynthSpec(n_locations=n_locations, weeks=weeks, strains=strains, seed=seed, **kwargs))
    save_avian(ds, out_dir)
    return ds
