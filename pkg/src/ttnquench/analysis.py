"""Post-processing: spectra, low-order energy levels, light-cone fits.

Everything here works on plain arrays or time series produced by the
runner; nothing touches tensors.
"""

from dataclasses import dataclass

import numpy as np
import scipy.signal


# ---- spectra ----

WINDOWS = ("hamming", "rect")


@dataclass
class Spectrum:
    """One-sided magnitude spectrum on the discrete frequency grid."""

    omega: np.ndarray
    magnitude: np.ndarray
    dt: float
    window: str

    @property
    def resolution(self):
        """Grid spacing of omega."""
        return float(self.omega[1] - self.omega[0])


def spectral_density(times, values, window="hamming", remove_mean=True):
    """Windowed magnitude spectrum of a uniformly sampled real signal.

    The mean is removed with the same window weights, so a constant signal
    gives an exactly empty spectrum even under the taper.  Frequencies are
    angular, omega_k = 2 pi k / (M dt).
    """
    t = np.asarray(times, dtype=float)
    x = np.asarray(values, dtype=float)
    if t.ndim != 1 or t.shape != x.shape:
        raise ValueError("times and values must be equal-length 1d arrays")
    m = t.size
    if m < 4:
        raise ValueError("need at least 4 samples")
    spacing = np.diff(t)
    dt = float(spacing[0])
    if dt <= 0 or not np.allclose(spacing, dt, rtol=1e-8, atol=1e-12):
        raise ValueError("samples must be uniformly spaced in time")
    if window == "hamming":
        w = np.hamming(m)
    elif window == "rect":
        w = np.ones(m)
    else:
        raise ValueError(f"unknown window {window!r}")
    if remove_mean:
        x = x - np.sum(w * x) / np.sum(w)
    f = np.fft.rfft(w * x)
    omega = 2.0 * np.pi * np.arange(f.size) / (m * dt)
    return Spectrum(omega=omega, magnitude=np.abs(f), dt=dt, window=window)


@dataclass
class SpectralPeak:
    """A local maximum of the magnitude spectrum.

    omega is the grid frequency of the peak bin; omega_interp refines it
    with a parabola through the bin and its neighbors.
    """

    omega: float
    height: float
    omega_interp: float


def find_spectral_peaks(spectrum, min_prominence=0.05):
    """Peaks of the spectrum, strongest first.

    min_prominence is relative to the largest magnitude; peaks less
    prominent than that are noise and dropped.
    """
    mag = spectrum.magnitude
    top = float(np.max(mag))
    if top <= 0.0:
        return []
    idx, _ = scipy.signal.find_peaks(mag, prominence=min_prominence * top)
    peaks = []
    res = spectrum.resolution
    for i in idx:
        if 0 < i < mag.size - 1:
            a, b, c = mag[i - 1], mag[i], mag[i + 1]
            denom = a - 2 * b + c
            shift = 0.0 if denom == 0 else 0.5 * (a - c) / denom
        else:
            shift = 0.0
        peaks.append(SpectralPeak(omega=float(spectrum.omega[i]),
                                  height=float(mag[i]),
                                  omega_interp=float(spectrum.omega[i]
                                                     + shift * res)))
    peaks.sort(key=lambda p: p.height, reverse=True)
    return peaks


# ---- low levels of the strong-coupling expansion ----

COUNT_KINDS = ("single_flip", "adjacent_pair", "distant_pair",
               "compact_triple", "pair_plus_single")


def _check_linear_size(n):
    n = int(n)
    if n < 4:
        raise ValueError("counting formulas need linear size >= 4")
    return n


def excitation_count(n, kind):
    """Number of flip configurations of one kind on the n x n torus.

    single_flip: one overturned spin.  adjacent_pair: two overturned spins
    on a bond.  distant_pair: two overturned spins not on a bond.
    compact_triple: three overturned spins forming a connected cluster.
    pair_plus_single: a bonded pair plus a third spin touching neither.
    """
    n = _check_linear_size(n)
    n2 = n * n
    if kind == "single_flip":
        return n2
    if kind == "adjacent_pair":
        return 2 * n2
    if kind == "distant_pair":
        return n2 * (n2 - 5) // 2
    if kind == "compact_triple":
        return 6 * n2
    if kind == "pair_plus_single":
        return 2 * n2 * (n2 - 8)
    raise ValueError(f"unknown kind {kind!r}")


@dataclass
class PerturbativeLevels:
    """Lowest three levels above the ordered classical energy, order g².

    The deltas are stored from their closed forms, which carry no system
    size: equal couplings give bit-equal deltas at any size, and
    delta01 + delta12 == delta02 holds exactly because delta02 is that sum.
    """

    e0: float
    e1: float
    e2: float
    delta01: float
    delta12: float
    delta02: float


def perturbative_energies(j, g, n):
    """Low levels above the classical energy on the n x n torus.

    Each level is its bare offset plus the matching second_order_shift
    total, so the per-class breakdown reproduces the levels exactly.
    """
    n = _check_linear_size(n)
    d01 = 8.0 * j - 6.0 * (g * g / (8.0 * j))
    d12 = 4.0 * j + 6.0 * (g * g / (8.0 * j))
    return PerturbativeLevels(
        e0=second_order_shift(j, g, n, 0)[0],
        e1=8.0 * j + second_order_shift(j, g, n, 1)[0],
        e2=12.0 * j + second_order_shift(j, g, n, 2)[0],
        delta01=d01,
        delta12=d12,
        delta02=d01 + d12,
    )


@dataclass
class ShiftTerm:
    """One intermediate-class contribution to a second-order shift."""

    kind: str
    count: int
    weight: float
    gap: float

    @property
    def value(self):
        return self.count * self.weight / self.gap


def second_order_shift(j, g, n, level):
    """(total, per-class terms) of the second-order shift of one level.

    level 0 is the ordered ground state, 1 the symmetric one-flip state, 2
    the symmetric bonded-pair state.  weight is the squared coupling per
    intermediate configuration; gap is the unperturbed energy of the level
    minus that of the intermediate class.
    """
    n = _check_linear_size(n)
    n2 = n * n
    g2 = g * g
    if level == 0:
        terms = [ShiftTerm("single_flip", n2, g2, -8.0 * j)]
    elif level == 1:
        terms = [
            ShiftTerm("ground", 1, g2 * n2, 8.0 * j),
            ShiftTerm("adjacent_pair", 2 * n2, 4.0 * g2 / n2, -4.0 * j),
            ShiftTerm("distant_pair", n2 * (n2 - 5) // 2,
                      4.0 * g2 / n2, -8.0 * j),
        ]
    elif level == 2:
        terms = [
            ShiftTerm("single_flip", n2, 8.0 * g2 / n2, 4.0 * j),
            ShiftTerm("compact_triple", 6 * n2, 2.0 * g2 / n2, -4.0 * j),
            ShiftTerm("pair_plus_single", 2 * n2 * (n2 - 8),
                      g2 / (2.0 * n2), -8.0 * j),
        ]
    else:
        raise ValueError("level must be 0, 1 or 2")
    return sum(t.value for t in terms), terms


def edge_mode(j, g, k):
    """Dispersion of a flipped spin bound to a straight domain wall."""
    return 4.0 * j * (1.0 + g * np.cos(k))


def edge_envelope(j, g):
    """(lower, upper) frequency band of the wall-bound mode."""
    return 4.0 * j - 4.0 * g, 4.0 * j + 4.0 * g


# ---- light-cone front ----


@dataclass
class FrontFit:
    """Linear fit of arrival distance versus time, d = velocity * t + b."""

    velocity: float
    intercept: float
    distances: np.ndarray
    times: np.ndarray


def front_arrivals(times, values, distances, threshold):
    """First time |value| reaches threshold at each line distance.

    values has shape (len(times), len(distances)); slots sharing a
    distance (the two arms of the cut) are combined by their max.  The
    anchor (distance 0) is skipped.  Unreached distances are dropped.
    """
    t = np.asarray(times, dtype=float)
    v = np.abs(np.asarray(values, dtype=float))
    if v.shape != (t.size, len(distances)):
        raise ValueError("values must be (n_times, n_slots)")
    by_d = {}
    for slot, d in enumerate(distances):
        if d == 0:
            continue
        sig = np.nan_to_num(v[:, slot], nan=0.0)
        prev = by_d.get(d)
        by_d[d] = sig if prev is None else np.maximum(prev, sig)
    out = {}
    for d, sig in sorted(by_d.items()):
        hit = np.nonzero(sig >= threshold)[0]
        if hit.size:
            out[d] = float(t[hit[0]])
    return out


def front_velocity_fit(times, values, distances, threshold,
                       max_distance=None):
    """Fit the spreading velocity of a correlation front.

    Needs arrivals at two or more distances; raises ValueError otherwise.
    """
    arrivals = front_arrivals(times, values, distances, threshold)
    if max_distance is not None:
        arrivals = {d: t for d, t in arrivals.items() if d <= max_distance}
    if len(arrivals) < 2:
        raise ValueError(
            f"front reached only {len(arrivals)} distance(s); cannot fit")
    ds = np.array(sorted(arrivals), dtype=float)
    ts = np.array([arrivals[d] for d in sorted(arrivals)])
    coef = np.polynomial.polynomial.polyfit(ts, ds, 1)
    return FrontFit(velocity=float(coef[1]), intercept=float(coef[0]),
                    distances=ds, times=ts)


def front_distance(times, values, distances, threshold, at_time):
    """Largest distance the front has reached by a given time (0 if none)."""
    arrivals = front_arrivals(times, values, distances, threshold)
    reached = [d for d, t in arrivals.items() if t <= at_time]
    return max(reached, default=0)
