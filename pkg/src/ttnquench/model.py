"""Transverse-field Ising Hamiltonian on the lattice and classical spin patterns.

H = -J sum_<ij> sz_i sz_j - g sum_i sx_i with sz eigenvalues +-1 and spin
down = -1.  Terms are kept as a flat list of Pauli products so every engine
consumes the same object.
"""

from dataclasses import dataclass

import numpy as np

from .lattice import Lattice, neighbor_pairs

SX = np.array([[0.0, 1.0], [1.0, 0.0]])
SY = np.array([[0.0, -1.0j], [1.0j, 0.0]])
SZ = np.array([[1.0, 0.0], [0.0, -1.0]])
ID2 = np.eye(2)

PAULI = {"i": ID2, "x": SX, "y": SY, "z": SZ}


@dataclass(frozen=True)
class PauliTerm:
    """coeff times a product of single-site Paulis.

    sites are row-major indices; axes is a string with one letter per site
    ("zz" for a bond, "x" for a field term).
    """

    coeff: float
    sites: tuple
    axes: str

    def __post_init__(self):
        if len(self.sites) != len(self.axes):
            raise ValueError("sites and axes length mismatch")
        if len(set(self.sites)) != len(self.sites):
            raise ValueError("repeated site in term")
        if any(a not in "xyz" for a in self.axes):
            raise ValueError(f"unknown Pauli axis in {self.axes!r}")


def build_hamiltonian(lat, J, g):
    """Terms of the quench Hamiltonian: -J per bond, -g per site."""
    terms = [PauliTerm(-J, pair, "zz") for pair in neighbor_pairs(lat)]
    terms += [PauliTerm(-g, (s,), "x") for s in range(lat.n_sites)]
    return terms


@dataclass
class SpinPattern:
    """Classical z-product configuration; values are +-1 row-major."""

    lattice: Lattice
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.int64).reshape(-1)
        if self.values.size != self.lattice.n_sites:
            raise ValueError("pattern size does not match lattice")
        if not np.all(np.abs(self.values) == 1):
            raise ValueError("pattern entries must be +-1")

    def value(self, row, col):
        return int(self.values[self.lattice.site(row, col)])

    def to_text(self):
        """One row per line, '+' for up (+1), '-' for down (-1)."""
        lat = self.lattice
        grid = self.values.reshape(lat.rows, lat.cols)
        return "\n".join("".join("+" if v > 0 else "-" for v in row)
                         for row in grid) + "\n"


def pattern_from_text(lat, text):
    """Inverse of SpinPattern.to_text for a known lattice."""
    rows = [line for line in text.strip().splitlines() if line.strip()]
    if len(rows) != lat.rows or any(len(r.strip()) != lat.cols for r in rows):
        raise ValueError("pattern text does not match lattice shape")
    vals = []
    for line in rows:
        for ch in line.strip():
            if ch == "+":
                vals.append(1)
            elif ch == "-":
                vals.append(-1)
            else:
                raise ValueError(f"unexpected pattern character {ch!r}")
    return SpinPattern(lat, np.array(vals))


def make_pattern(lat, kind, *, interface_col=None, size=None, offset=None,
                 values=None):
    """Named initial configurations.

    polarized: all down.
    stripe: columns <= interface_col down, the rest up.
    square: size x size block of up spins on a down background, top-left
        corner at offset=(row, col).
    custom: explicit +-1 array in `values`, row-major.
    """
    if kind == "polarized":
        return SpinPattern(lat, -np.ones(lat.n_sites, dtype=np.int64))
    if kind == "stripe":
        if interface_col is None or not 0 <= interface_col < lat.cols - 1:
            raise ValueError("stripe needs interface_col in [0, cols-2]")
        vals = np.empty(lat.n_sites, dtype=np.int64)
        for s in range(lat.n_sites):
            _, c = lat.coords(s)
            vals[s] = -1 if c <= interface_col else 1
        return SpinPattern(lat, vals)
    if kind == "square":
        if size is None or offset is None:
            raise ValueError("square needs size and offset=(row, col)")
        r0, c0 = offset
        if size < 1 or r0 < 0 or c0 < 0 or r0 + size > lat.rows \
                or c0 + size > lat.cols:
            raise ValueError("square block outside lattice")
        vals = -np.ones(lat.n_sites, dtype=np.int64)
        for r in range(r0, r0 + size):
            for c in range(c0, c0 + size):
                vals[lat.site(r, c)] = 1
        return SpinPattern(lat, vals)
    if kind == "custom":
        if values is None:
            raise ValueError("custom needs values")
        return SpinPattern(lat, np.asarray(values))
    raise ValueError(f"unknown pattern kind {kind!r}")


def classical_energy(pattern, J):
    """Ising bond energy -J sum_<ij> s_i s_j of a classical configuration."""
    v = pattern.values
    return -J * sum(int(v[i]) * int(v[j])
                    for i, j in neighbor_pairs(pattern.lattice))


def domain_wall_length(pattern):
    """Number of bonds whose two spins disagree."""
    v = pattern.values
    return sum(1 for i, j in neighbor_pairs(pattern.lattice)
               if v[i] != v[j])
