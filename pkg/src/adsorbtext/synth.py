"""Deterministic synthetic datasets for fixtures, smoke runs and benchmarks.

Geometries are built so that configuration detection recovers the intended
binding atom, primary surface atoms and site type exactly: primaries sit on
a circle around the binding site within covalent contact of the adsorbate's
binding atom, while filler surface atoms (lateral >= 3.4 A) and the rest of
the adsorbate (>= 1.6 A above the binding atom) stay outside every cutoff.

Energies are an analytic function of adsorbate identity, site type, primary
interacting elements and bulk identity, plus Gaussian noise. The parameter
tables are drawn once from a fixed internal seed, independent of the
dataset seed, so the target function is stable across corpus sizes.
"""

from __future__ import annotations

import math

import numpy as np

from .elements import covalent_radius
from .systems import Atom, AtomicSystem

# (smiles, binding element, remaining elements)
ADSORBATES = [
    ("H", "H", []),
    ("O", "O", []),
    ("N", "N", []),
    ("C", "C", []),
    ("OH", "O", ["H"]),
    ("OH2", "O", ["H", "H"]),
    ("CO", "C", ["O"]),
    ("CH", "C", ["H"]),
    ("CH2", "C", ["H", "H"]),
    ("CH3", "C", ["H", "H", "H"]),
    ("NH", "N", ["H"]),
    ("NH2", "N", ["H", "H"]),
    ("NH3", "N", ["H", "H", "H"]),
    ("NO", "N", ["O"]),
    ("OCH3", "O", ["C", "H", "H", "H"]),
    ("CHO", "C", ["H", "O"]),
    ("COCH2O", "C", ["O", "C", "H", "H", "O"]),
]

# (reduced bulk formula, constituent elements)
BULKS = [
    ("Pt3Ni", ["Pt", "Ni"]),
    ("Cu3Au", ["Cu", "Au"]),
    ("AgPd", ["Ag", "Pd"]),
    ("FeCo", ["Fe", "Co"]),
    ("TiAl", ["Ti", "Al"]),
    ("VCr3", ["V", "Cr"]),
    ("ZnCu2", ["Zn", "Cu"]),
    ("NbMo", ["Nb", "Mo"]),
    ("PdAu3", ["Pd", "Au"]),
    ("SnPt2", ["Sn", "Pt"]),
    ("AlNi3", ["Al", "Ni"]),
    ("WRe2", ["W", "Re"]),
    ("ZrNb2", ["Zr", "Nb"]),
    ("Sc3Al", ["Sc", "Al"]),
    ("RhCu", ["Rh", "Cu"]),
]

MILLERS = [(1, 0, 0), (1, 1, 0), (1, 1, 1), (2, 1, 0), (2, 1, 1), (3, 1, 1)]

SITE_RADII = {1: 0.0, 2: 1.30, 3: 1.45, 4: 1.80}
SITE_WEIGHTS = {1: 0.3, 2: 0.3, 3: 0.3, 4: 0.1}
SITE_ENERGY = {"ontop": 0.40, "bridge": 0.0, "hollow": -0.35, "fourfold": -0.65}
_SITE_BY_COUNT = {1: "ontop", 2: "bridge", 3: "hollow", 4: "fourfold"}

NOISE_SIGMA = 0.1  # eV

_ENERGY_TABLE_SEED = 20240801


def _energy_tables() -> tuple[dict, dict, dict]:
    rng = np.random.default_rng(_ENERGY_TABLE_SEED)
    ads = {sm: float(rng.uniform(-1.0, 1.0)) for sm, _, _ in ADSORBATES}
    bulk = {f: float(rng.uniform(-0.3, 0.3)) for f, _ in BULKS}
    elements = sorted({el for _, els in BULKS for el in els})
    elem = {el: float(rng.uniform(-0.35, 0.35)) for el in elements}
    return ads, bulk, elem


_ADS_E, _BULK_E, _ELEM_E = _energy_tables()


def clean_energy(smiles: str, site: str, primary_elements: list[str], bulk: str) -> float:
    """Noise-free target energy for a synthetic configuration."""
    return (
        _ADS_E[smiles]
        + SITE_ENERGY[site]
        + sum(_ELEM_E[el] for el in primary_elements)
        + _BULK_E[bulk]
    )


def table_fixture_system(energy_ev: float = -1.34, split: str = "ID") -> AtomicSystem:
    """Hand-built NH3 on VCr3 (2 1 0) bridge system.

    Two primary Cr atoms 2.1 A from the binding N; each primary sees three
    Cr and three V slab neighbors plus the N, so the secondary lists come
    out as [Cr Cr Cr Cr V V V N] twice.
    """
    z_surf = 10.0
    cx = cy = 6.0
    zn = z_surf + math.sqrt(2.1**2 - 1.3**2)  # N-Cr contact distance exactly 2.1
    atoms = [
        Atom("Cr", (cx - 1.3, cy, z_surf), 1),        # primary
        Atom("Cr", (cx + 1.3, cy, z_surf), 1),        # primary
        Atom("Cr", (cx, cy + 2.2, z_surf), 1),
        Atom("Cr", (cx, cy - 2.2, z_surf), 1),
        Atom("V", (cx, cy, 8.2), 0),
        Atom("V", (cx, cy + 2.0, 8.6), 0),
        Atom("V", (cx, cy - 2.0, 8.6), 0),
        Atom("N", (cx, cy, zn), 2),
        Atom("H", (cx + 0.95, cy, zn + 0.4), 2),
        Atom("H", (cx - 0.47, cy + 0.82, zn + 0.4), 2),
        Atom("H", (cx - 0.47, cy - 0.82, zn + 0.4), 2),
    ]
    return AtomicSystem(
        id="NH3_VCr3_210",
        adsorbate_smiles="NH3",
        bulk_formula="VCr3",
        miller_index=(2, 1, 0),
        cell=((12.0, 0.0, 0.0), (0.0, 12.0, 0.0), (0.0, 0.0, 24.0)),
        atoms=tuple(atoms),
        energy_ev=energy_ev,
        split=split,
    )


def _build_system(idx: int, rng: np.random.Generator, split: str,
                  noise_sigma: float) -> AtomicSystem:
    smiles, binding_el, extra_els = ADSORBATES[rng.integers(len(ADSORBATES))]
    bulk, bulk_els = BULKS[rng.integers(len(BULKS))]
    miller = MILLERS[rng.integers(len(MILLERS))]
    counts = list(SITE_WEIGHTS)
    k = int(rng.choice(counts, p=[SITE_WEIGHTS[c] for c in counts]))
    site = _SITE_BY_COUNT[k]
    primary_els = [bulk_els[rng.integers(len(bulk_els))] for _ in range(k)]

    lx = 12.6 + float(rng.uniform(0.0, 0.8))
    ly = 12.6 + float(rng.uniform(0.0, 0.8))
    cx, cy = lx / 2.0, ly / 2.0
    z_surf = 10.0

    r_b = covalent_radius(binding_el)
    target = min(r_b + covalent_radius(el) for el in primary_els) + 0.05
    rho = min(SITE_RADII[k], target - 0.3) if k > 1 else 0.0
    height = math.sqrt(target**2 - rho**2)

    atoms: list[Atom] = []
    theta0 = float(rng.uniform(0.0, 2 * math.pi))
    for m, el in enumerate(primary_els):
        ang = theta0 + 2 * math.pi * m / k
        atoms.append(Atom(el, (cx + rho * math.cos(ang),
                               cy + rho * math.sin(ang), z_surf), 1))

    # filler surface atoms: outside every binding cutoff (lateral >= 3.4 A)
    n_fill = 8
    for m in range(n_fill):
        ang = theta0 + 2 * math.pi * (m + 0.5) / n_fill
        rad = 3.6 + float(rng.uniform(0.0, 0.8))
        el = bulk_els[rng.integers(len(bulk_els))]
        atoms.append(Atom(el, (cx + rad * math.cos(ang),
                               cy + rad * math.sin(ang),
                               z_surf + float(rng.uniform(-0.1, 0.1))), 1))

    # subsurface layer under the site; varies the secondary lists
    for _ in range(int(rng.integers(2, 5))):
        ang = float(rng.uniform(0.0, 2 * math.pi))
        rad = float(rng.uniform(0.8, 2.2))
        el = bulk_els[rng.integers(len(bulk_els))]
        atoms.append(Atom(el, (cx + rad * math.cos(ang),
                               cy + rad * math.sin(ang),
                               8.0 + float(rng.uniform(0.0, 0.5))), 0))

    atoms.append(Atom(binding_el, (cx, cy, z_surf + height), 2))
    for m, el in enumerate(extra_els):
        atoms.append(Atom(el, (cx + float(rng.uniform(-0.4, 0.4)),
                               cy + float(rng.uniform(-0.4, 0.4)),
                               z_surf + height + 1.6 + 0.7 * m), 2))

    energy = clean_energy(smiles, site, primary_els, bulk)
    energy += float(rng.normal(0.0, noise_sigma))

    return AtomicSystem(
        id=f"synth-{idx:05d}",
        adsorbate_smiles=smiles,
        bulk_formula=bulk,
        miller_index=miller,
        cell=((lx, 0.0, 0.0), (0.0, ly, 0.0), (0.0, 0.0, 22.0)),
        atoms=tuple(atoms),
        energy_ev=round(energy, 6),
        split=split,
    )


DEFAULT_SPLIT_FRACTIONS = {
    "train": 0.6, "ID": 0.1, "OOD_ads": 0.1, "OOD_cat": 0.1, "OOD_both": 0.1,
}


def synthetic_systems(
    n: int,
    seed: int = 0,
    noise_sigma: float = NOISE_SIGMA,
    split_fractions: dict[str, float] | None = None,
) -> list[AtomicSystem]:
    """Generate n systems with deterministic composition, geometry and labels."""
    fractions = split_fractions or DEFAULT_SPLIT_FRACTIONS
    rng = np.random.default_rng(seed)
    splits: list[str] = []
    names = list(fractions)
    for name in names[:-1]:
        splits += [name] * int(round(fractions[name] * n))
    splits += [names[-1]] * (n - len(splits))
    order = rng.permutation(n)
    assigned = [splits[order[i]] for i in range(n)]
    return [_build_system(i, rng, assigned[i], noise_sigma) for i in range(n)]


def fixture_dataset(n: int = 48, seed: int = 7) -> list[AtomicSystem]:
    """Bundled smoke-test dataset: the NH3/VCr3 fixture plus synthetic systems."""
    return [table_fixture_system()] + synthetic_systems(n - 1, seed=seed)
