"""Bundled element property table.

One row per element: atomic number, mass, period, dipole polarizability,
Pauling electronegativity, electron affinity, and covalent radius. The
covalent radii drive bond detection; the remaining columns feed the
atomic-property blocks of the serialized strings, so their printed form
(via ``str(float)``) is part of the output contract.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources


class UnknownElementError(KeyError):
    """Raised for a symbol with no row in the bundled table."""


@dataclass(frozen=True)
class ElementProperties:
    symbol: str
    atomic_number: int
    atomic_mass: float          # amu
    period: int
    dipole_polarizability: float  # atomic units
    electronegativity: float      # Pauling scale
    electron_affinity: float      # eV
    covalent_radius: float        # Angstrom

    def __post_init__(self):
        if self.atomic_number < 1:
            raise ValueError(f"{self.symbol}: atomic_number must be >= 1")
        if self.covalent_radius <= 0:
            raise ValueError(f"{self.symbol}: covalent_radius must be > 0")


@lru_cache(maxsize=1)
def element_table() -> dict[str, ElementProperties]:
    """Load the bundled table, keyed by symbol."""
    table = {}
    path = resources.files("adsorbtext.data").joinpath("element_table.csv")
    with path.open("r", encoding="utf-8") as fh:
        rows = csv.DictReader(line for line in fh if not line.startswith("#"))
        for row in rows:
            props = ElementProperties(
                symbol=row["symbol"],
                atomic_number=int(row["atomic_number"]),
                atomic_mass=float(row["atomic_mass"]),
                period=int(row["period"]),
                dipole_polarizability=float(row["dipole_polarizability"]),
                electronegativity=float(row["electronegativity"]),
                electron_affinity=float(row["electron_affinity"]),
                covalent_radius=float(row["covalent_radius"]),
            )
            table[props.symbol] = props
    return table


def element_properties(symbol: str) -> ElementProperties:
    """Look up one element; raises UnknownElementError for absent symbols."""
    try:
        return element_table()[symbol]
    except KeyError:
        raise UnknownElementError(f"unknown element symbol {symbol!r}") from None


def covalent_radius(symbol: str) -> float:
    return element_properties(symbol).covalent_radius


_FORMULA_TOKEN = re.compile(r"([A-Z][a-z]?)(\d*)")


def formula_elements(formula: str) -> dict[str, int]:
    """Element multiset of a chemical formula or explicit-hydrogen SMILES.

    Only symbols and counts are read ("NH3" -> {N: 1, H: 3}); structural
    SMILES syntax beyond element symbols and digits is ignored. Every
    symbol must exist in the bundled table, which also disambiguates
    two-letter symbols greedily (e.g. "Co" vs "C","O" follows the
    capitalization of the input).
    """
    counts: dict[str, int] = {}
    for sym, digits in _FORMULA_TOKEN.findall(formula):
        if not sym:
            continue
        element_properties(sym)  # reject unknown symbols early
        counts[sym] = counts.get(sym, 0) + (int(digits) if digits else 1)
    return counts
