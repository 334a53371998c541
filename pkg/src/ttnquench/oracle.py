"""Exact statevector reference engine for small lattices.

Amplitude indexing follows the 1D site mapping: bit k of the index is the
spin at linear position k, bit value 0 = up (+1), 1 = down (-1).  Everything
is matrix-free; the Hamiltonian is applied as a diagonal plus single-bit
flips, so systems up to ORACLE_MAX_SITES = 20 sites stay cheap.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg

from .tensor import entropy_from_weights, lanczos_expm

ORACLE_MAX_SITES = 20


@dataclass
class StateVector:
    """Dense amplitudes over the mapped site order."""

    mapping: object
    amp: np.ndarray

    def __post_init__(self):
        n = self.mapping.n_sites
        if n > ORACLE_MAX_SITES:
            raise ValueError(
                f"{n} sites exceeds the oracle cap of {ORACLE_MAX_SITES}")
        self.amp = np.asarray(self.amp).reshape(-1)
        if self.amp.size != 1 << n:
            raise ValueError("amplitude count does not match site count")

    @property
    def n_sites(self):
        return self.mapping.n_sites

    def copy(self):
        return StateVector(self.mapping, self.amp.copy())


def pattern_index(pattern, mapping):
    """Basis index of a classical configuration (down spins set bits)."""
    idx = 0
    for k in range(mapping.n_sites):
        if pattern.values[mapping.site_at(k)] < 0:
            idx |= 1 << k
    return idx


def from_pattern(pattern, mapping):
    """Product basis state |pattern> as a StateVector."""
    amp = np.zeros(1 << mapping.n_sites, dtype=np.complex128)
    amp[pattern_index(pattern, mapping)] = 1.0
    return StateVector(mapping, amp)


def _flip(amp, pos, n):
    """Apply sx at linear position pos (bit pos of the index)."""
    shape = (1 << (n - 1 - pos), 2, 1 << pos)
    return np.flip(amp.reshape(shape), axis=1).reshape(-1)


def _zsign(pos, n):
    """Vector of sz eigenvalues (+-1) of bit pos over all basis states."""
    block = np.repeat(np.array([1.0, -1.0]), 1 << pos)
    return np.tile(block, 1 << (n - 1 - pos))


class CompiledTerms:
    """Pauli terms routed to the bit layout: one diagonal + a flip list."""

    def __init__(self, terms, mapping):
        n = mapping.n_sites
        self.n = n
        self.diag = np.zeros(1 << n)
        self.flips = []
        for term in terms:
            pos = [int(mapping.inverse[s]) for s in term.sites]
            if term.axes == "zz":
                self.diag += term.coeff * _zsign(pos[0], n) * _zsign(pos[1], n)
            elif term.axes == "z":
                self.diag += term.coeff * _zsign(pos[0], n)
            elif term.axes == "x":
                self.flips.append((pos[0], term.coeff))
            else:
                raise ValueError(f"oracle cannot route term axes {term.axes!r}")

    def matvec(self, amp):
        out = self.diag * amp
        for pos, coeff in self.flips:
            out += coeff * _flip(amp, pos, self.n)
        return out


def evolve(state, terms, dt, steps, tol=1e-12, max_dim=30, observe=None):
    """Apply exp(-i H dt) per step via adaptive Lanczos, matrix-free.

    observe, if given, is called as observe(step_index, state) after every
    step; samples collected there.  Returns the evolved state (in place).
    """
    compiled = terms if isinstance(terms, CompiledTerms) \
        else CompiledTerms(terms, state.mapping)
    for k in range(steps):
        state.amp = lanczos_expm(compiled.matvec, state.amp, -1j * dt,
                                 tol=tol, max_dim=max_dim)
        if observe is not None:
            observe(k, state)
    return state


@dataclass
class SpectrumSlice:
    """Lowest eigenpairs, ascending, with degeneracy grouping."""

    values: np.ndarray
    vectors: np.ndarray  # column i pairs with values[i]
    multiplicities: list


def lowest_eigenvalues(terms, mapping, count, tol=1e-10, degeneracy_tol=1e-6):
    """Bottom of the spectrum by implicitly restarted Lanczos.

    count is capped at 64; eigenvectors are returned so callers can identify
    excitation bands by overlap instead of by index.
    """
    if count < 1 or count > 64:
        raise ValueError("count must be in [1, 64]")
    compiled = CompiledTerms(terms, mapping)
    dim = 1 << compiled.n
    if count >= dim:
        raise ValueError(f"count {count} too large for dimension {dim}")
    op = scipy.sparse.linalg.LinearOperator(
        (dim, dim), matvec=compiled.matvec, dtype=np.float64)
    ncv = min(dim, max(2 * count + 1, 60))
    vals, vecs = scipy.sparse.linalg.eigsh(
        op, k=count, which="SA", tol=tol, ncv=ncv, maxiter=50 * dim)
    idx = np.argsort(vals)
    vals, vecs = vals[idx], vecs[:, idx]
    mult = []
    i = 0
    while i < len(vals):
        j = i
        while j + 1 < len(vals) and vals[j + 1] - vals[i] < degeneracy_tol:
            j += 1
        mult.append(j - i + 1)
        i = j + 1
    return SpectrumSlice(values=vals, vectors=vecs, multiplicities=mult)


def basis_superposition(mapping, base_index, flip_sets):
    """Normalized equal superposition of base_index with given bits flipped.

    flip_sets is an iterable of site tuples (row-major ids); each entry
    contributes one basis state with those spins flipped relative to base.
    """
    amp = np.zeros(1 << mapping.n_sites, dtype=np.complex128)
    count = 0
    for sites in flip_sets:
        idx = base_index
        for s in sites:
            idx ^= 1 << int(mapping.inverse[s])
        amp[idx] += 1.0
        count += 1
    if count == 0:
        raise ValueError("no flip sets given")
    return StateVector(mapping, amp / np.linalg.norm(amp))


# ---- observables ----

def norm(state):
    return float(np.linalg.norm(state.amp))


def expect_local(state, site, axis="z"):
    """<sigma_axis> at one row-major site, normalized by <psi|psi>."""
    n = state.n_sites
    pos = int(state.mapping.inverse[site])
    nrm2 = float(np.vdot(state.amp, state.amp).real)
    if axis == "z":
        val = float(np.sum(np.abs(state.amp) ** 2 * _zsign(pos, n)))
    elif axis == "x":
        val = float(np.vdot(state.amp, _flip(state.amp, pos, n)).real)
    elif axis == "y":
        # sy = i sx sz
        val = float(np.vdot(state.amp,
                            1j * _flip(_zsign(pos, n) * state.amp,
                                       pos, n)).real)
    else:
        raise ValueError(f"unknown axis {axis!r}")
    return val / nrm2


def magnetization_all(state):
    """<sz> for every site, row-major order."""
    n = state.n_sites
    prob = np.abs(state.amp) ** 2
    prob /= prob.sum()
    out = np.empty(state.mapping.n_sites)
    for site in range(out.size):
        pos = int(state.mapping.inverse[site])
        p = prob.reshape(1 << (n - 1 - pos), 2, 1 << pos).sum(axis=(0, 2))
        out[site] = p[0] - p[1]
    return out


def z_variance(state, site):
    """1 - <sz>^2, the only sanctioned self-correlation."""
    m = expect_local(state, site, "z")
    return 1.0 - m * m


def correlation(state, i, j):
    """Connected zz correlator <sz_i sz_j> - <sz_i><sz_j>; i == j raises."""
    if i == j:
        raise ValueError("self-correlation is not defined; use z_variance")
    n = state.n_sites
    pi, pj = int(state.mapping.inverse[i]), int(state.mapping.inverse[j])
    prob = np.abs(state.amp) ** 2
    prob /= prob.sum()
    zz = float(np.sum(prob * _zsign(pi, n) * _zsign(pj, n)))
    return zz - expect_local(state, i) * expect_local(state, j)


def subsystem_entropy(state, sites):
    """Entanglement entropy of 1 or 2 sites from the dense reduced matrix."""
    sites = tuple(sites)
    if not 1 <= len(sites) <= 2 or len(set(sites)) != len(sites):
        raise ValueError("subsystem must be 1 or 2 distinct sites")
    n = state.n_sites
    axes = [n - 1 - int(state.mapping.inverse[s]) for s in sites]
    psi = state.amp.reshape((2,) * n)
    psi = np.moveaxis(psi, axes, range(len(axes)))
    mat = psi.reshape(1 << len(sites), -1)
    rho = mat @ mat.conj().T
    rho /= np.trace(rho).real
    return entropy_from_weights(np.linalg.eigvalsh(rho))


def energy(state, terms):
    """<H> normalized by the state norm."""
    compiled = terms if isinstance(terms, CompiledTerms) \
        else CompiledTerms(terms, state.mapping)
    return float(np.vdot(state.amp, compiled.matvec(state.amp)).real
                 / np.vdot(state.amp, state.amp).real)
