"""Spectra, perturbative levels, excitation counting, front fits."""

import itertools

import numpy as np
import pytest

from ttnquench import analysis
from ttnquench.analysis import (
    COUNT_KINDS,
    Spectrum,
    excitation_count,
    edge_envelope,
    edge_mode,
    find_spectral_peaks,
    front_arrivals,
    front_distance,
    front_velocity_fit,
    perturbative_energies,
    second_order_shift,
    spectral_density,
)
from ttnquench.lattice import Lattice, neighbor_pairs
from ttnquench.model import domain_wall_length, make_pattern


def naive_dft_magnitude(x):
    m = x.size
    k = np.arange(m // 2 + 1)
    phase = np.exp(-2j * np.pi * np.outer(k, np.arange(m)) / m)
    return np.abs(phase @ x)


# ---- spectra ----


def test_rect_spectrum_matches_naive_dft():
    rng = np.random.default_rng(11)
    for m in [8, 17, 64, 100, 257, 512, 4096]:
        dt = float(rng.uniform(0.01, 0.5))
        t = np.arange(m) * dt
        x = rng.normal(size=m)
        spec = spectral_density(t, x, window="rect", remove_mean=False)
        assert np.max(np.abs(spec.magnitude - naive_dft_magnitude(x))) <= 1e-10
        assert np.allclose(spec.omega,
                           2 * np.pi * np.arange(m // 2 + 1) / (m * dt),
                           atol=0, rtol=1e-14)
        # mean removal first, then the same plain transform
        spec = spectral_density(t, x, window="rect")
        assert np.max(np.abs(spec.magnitude
                             - naive_dft_magnitude(x - x.mean()))) <= 1e-10


def test_spectrum_grid_and_resolution():
    t = np.arange(100) * 0.05
    spec = spectral_density(t, np.sin(t), window="rect")
    assert spec.resolution == pytest.approx(2 * np.pi / (100 * 0.05),
                                            rel=1e-12)
    assert spec.omega[0] == 0.0
    assert np.all(np.diff(spec.omega) > 0)


def test_spectrum_validation():
    t = np.arange(64) * 0.1
    x = np.sin(t)
    with pytest.raises(ValueError):
        spectral_density(t[:3], x[:3])
    with pytest.raises(ValueError):
        spectral_density(t, x[:-1])
    with pytest.raises(ValueError):
        spectral_density(np.concatenate([t[:32], t[33:], [99.0]]), x)
    with pytest.raises(ValueError):
        spectral_density(t, x, window="hann")


def test_on_grid_cosine_concentrates_in_one_bin():
    m, dt, k0 = 256, 0.1, 10
    t = np.arange(m) * dt
    x = np.cos(2 * np.pi * k0 * np.arange(m) / m)
    spec = spectral_density(t, x, window="rect")
    peak = spec.magnitude[k0]
    rest = np.delete(spec.magnitude, k0)
    assert np.max(rest) <= 1e-10 * peak
    assert spec.omega[k0] == pytest.approx(2 * np.pi * k0 / (m * dt))


def test_taper_endpoint_weights_via_impulse():
    # an impulse at sample p has flat magnitude w[p], exposing the taper
    m, dt = 65, 0.1
    t = np.arange(m) * dt
    x = np.zeros(m)
    x[0] = 1.0
    spec = spectral_density(t, x, window="hamming", remove_mean=False)
    assert spec.magnitude[5] == pytest.approx(0.08, abs=1e-12)
    x = np.zeros(m)
    x[(m - 1) // 2] = 1.0
    spec = spectral_density(t, x, window="hamming", remove_mean=False)
    assert spec.magnitude[5] == pytest.approx(1.0, abs=1e-12)


def test_two_tone_peaks_recovered():
    dt = 0.05
    t = np.arange(10.0, 60.0 + dt / 2, dt)
    x = np.cos(8.0 * t) + 0.3 * np.cos(12.0 * t)
    spec = spectral_density(t, x, window="hamming")
    peaks = find_spectral_peaks(spec)
    assert len(peaks) == 2
    assert peaks[0].height > peaks[1].height
    res = spec.resolution
    assert abs(peaks[0].omega - 8.0) <= res
    assert abs(peaks[1].omega - 12.0) <= res
    assert abs(peaks[0].omega_interp - 8.0) <= res
    assert abs(peaks[1].omega_interp - 12.0) <= res


def test_peak_prominence_and_ordering():
    omega = np.arange(64) * 0.1
    mag = np.zeros(64)
    mag[10] = 1.0
    mag[30] = 0.03
    spec = Spectrum(omega=omega, magnitude=mag, dt=1.0, window="rect")
    tall = find_spectral_peaks(spec, min_prominence=0.05)
    assert [p.omega for p in tall] == [pytest.approx(1.0)]
    both = find_spectral_peaks(spec, min_prominence=0.01)
    assert len(both) == 2
    assert both[0].height == 1.0 and both[1].height == 0.03


def test_no_peaks_in_monotone_or_flat_spectra():
    omega = np.arange(32) * 0.1
    rising = Spectrum(omega=omega, magnitude=np.linspace(0, 1, 32),
                      dt=1.0, window="rect")
    assert find_spectral_peaks(rising) == []
    flat = Spectrum(omega=omega, magnitude=np.ones(32), dt=1.0, window="rect")
    assert find_spectral_peaks(flat) == []
    silent = Spectrum(omega=omega, magnitude=np.zeros(32), dt=1.0,
                      window="rect")
    assert find_spectral_peaks(silent) == []


def test_parabolic_interpolation_refines_bin():
    omega = np.arange(16) * 0.5
    mag = np.zeros(16)
    mag[7], mag[8], mag[9] = 0.5, 1.0, 0.75
    spec = Spectrum(omega=omega, magnitude=mag, dt=1.0, window="rect")
    peak = find_spectral_peaks(spec)[0]
    assert peak.omega == pytest.approx(4.0)
    # vertex of the parabola through (0.5, 1.0, 0.75)
    assert peak.omega_interp == pytest.approx(4.0 + 0.5 * (1 / 6))


def test_interval_upper_bound_barely_moves_peaks():
    # the fitted tone frequencies must be stable against the choice of
    # transform interval end anywhere in [30, 80]
    dt = 0.05
    full_t = np.arange(10.0, 80.0 + dt / 2, dt)
    full_x = np.cos(4.0 * full_t) + 0.5 * np.cos(8.0 * full_t)
    coarse_bin = 2 * np.pi / 20.0

    def tones(t_end):
        keep = full_t <= t_end + dt / 2
        spec = spectral_density(full_t[keep], full_x[keep], window="hamming")
        peaks = find_spectral_peaks(spec)
        assert len(peaks) == 2
        return sorted(p.omega_interp for p in peaks)

    ref = tones(80.0)
    for t_end in (30.0, 40.0, 50.0, 60.0, 70.0):
        got = tones(t_end)
        assert abs(got[0] - ref[0]) < coarse_bin
        assert abs(got[1] - ref[1]) < coarse_bin


# ---- excitation counting ----


def brute_force_counts(n):
    lat = Lattice(rows=n, cols=n)
    bonds = set(neighbor_pairs(lat))
    sites = range(n * n)

    def edges(cluster):
        return sum(1 for p in itertools.combinations(sorted(cluster), 2)
                   if p in bonds)

    counts = dict.fromkeys(COUNT_KINDS, 0)
    counts["single_flip"] = n * n
    for pair in itertools.combinations(sites, 2):
        counts["adjacent_pair" if edges(pair) else "distant_pair"] += 1
    for triple in itertools.combinations(sites, 3):
        e = edges(triple)
        if e >= 2:
            counts["compact_triple"] += 1
        elif e == 1:
            counts["pair_plus_single"] += 1
    return counts


@pytest.mark.parametrize("n", [4, 5, 6])
def test_counts_match_brute_force_enumeration(n):
    expected = brute_force_counts(n)
    for kind in COUNT_KINDS:
        assert excitation_count(n, kind) == expected[kind]


def test_count_examples_and_validation():
    assert excitation_count(4, "single_flip") == 16
    assert excitation_count(4, "adjacent_pair") == 32
    assert excitation_count(4, "distant_pair") == 88
    assert excitation_count(4, "compact_triple") == 96
    assert excitation_count(4, "pair_plus_single") == 256
    with pytest.raises(ValueError):
        excitation_count(3, "single_flip")
    with pytest.raises(ValueError):
        excitation_count(4, "quadruple")


# ---- perturbative levels ----


def test_deltas_are_size_independent_and_telescope():
    rng = np.random.default_rng(7)
    for _ in range(100):
        j = float(rng.uniform(0.1, 5.0))
        g = float(rng.uniform(0.0, 2.0))
        small = perturbative_energies(j, g, 4)
        large = perturbative_energies(j, g, 16)
        assert small.delta01 == large.delta01
        assert small.delta12 == large.delta12
        assert small.delta02 == large.delta02
        assert small.delta01 + small.delta12 == small.delta02


def test_level_values_and_zero_field_gaps():
    lv = perturbative_energies(1.0, 0.5, 16)
    assert lv.e0 == -8.0
    assert lv.delta01 == 7.8125
    assert lv.delta12 == 4.1875
    assert lv.delta02 == 12.0
    lv = perturbative_energies(1.0, 0.0, 5)
    assert (lv.delta01, lv.delta12, lv.delta02) == (8.0, 4.0, 12.0)
    assert (lv.e0, lv.e1, lv.e2) == (0.0, 8.0, 12.0)
    with pytest.raises(ValueError):
        perturbative_energies(1.0, 0.1, 3)


def test_levels_reproduce_class_breakdown_exactly():
    for n in (4, 8, 16):
        for j, g in [(1.0, 0.1), (1.3, 0.25), (0.7, 2.0)]:
            lv = perturbative_energies(j, g, n)
            assert lv.e0 == second_order_shift(j, g, n, 0)[0]
            assert lv.e1 == 8.0 * j + second_order_shift(j, g, n, 1)[0]
            assert lv.e2 == 12.0 * j + second_order_shift(j, g, n, 2)[0]
    with pytest.raises(ValueError):
        second_order_shift(1.0, 0.1, 4, 3)


def test_shift_class_counts_match_excitation_counts():
    n = 5
    _, terms0 = second_order_shift(1.0, 0.3, n, 0)
    _, terms1 = second_order_shift(1.0, 0.3, n, 1)
    _, terms2 = second_order_shift(1.0, 0.3, n, 2)
    assert [(t.kind, t.count) for t in terms0] == [
        ("single_flip", excitation_count(n, "single_flip"))]
    assert [(t.kind, t.count) for t in terms1] == [
        ("ground", 1),
        ("adjacent_pair", excitation_count(n, "adjacent_pair")),
        ("distant_pair", excitation_count(n, "distant_pair"))]
    assert [(t.kind, t.count) for t in terms2] == [
        ("single_flip", excitation_count(n, "single_flip")),
        ("compact_triple", excitation_count(n, "compact_triple")),
        ("pair_plus_single", excitation_count(n, "pair_plus_single"))]


def representative_wall(kind):
    # flipped-cell sets on a 6x6 torus far enough from the wrap to be generic
    cells = {
        "ground": [],
        "single_flip": [14],
        "adjacent_pair": [14, 15],
        "distant_pair": [14, 32],
        "compact_triple": [14, 15, 20],
        "pair_plus_single": [14, 15, 33],
    }[kind]
    lat = Lattice(rows=6, cols=6)
    values = -np.ones((6, 6), dtype=int)
    values.flat[cells] = 1
    return domain_wall_length(make_pattern(lat, "custom", values=values))


def test_shift_gaps_are_wall_energy_differences():
    # each gap is 2J times the wall-length drop from the level to the
    # intermediate class
    level_rep = {0: "ground", 1: "single_flip", 2: "adjacent_pair"}
    for j in (1.0, 1.7):
        for level, rep in level_rep.items():
            wall_level = representative_wall(rep)
            for term in second_order_shift(j, 0.3, 6, level)[1]:
                expect = 2.0 * j * (wall_level - representative_wall(term.kind))
                assert term.gap == expect
    # straight and bent triples cost the same wall length
    lat = Lattice(rows=6, cols=6)
    straight = -np.ones((6, 6), dtype=int)
    straight.flat[[13, 14, 15]] = 1
    assert domain_wall_length(
        make_pattern(lat, "custom", values=straight)) == 8


def test_shift_term_value():
    term = analysis.ShiftTerm("single_flip", 16, 0.01, -8.0)
    assert term.value == 16 * 0.01 / -8.0


# ---- edge mode ----


def test_edge_mode_dispersion_points():
    assert edge_mode(1.0, 0.5, 0.0) == 6.0
    assert edge_mode(1.3, 0.5, 0.0) == pytest.approx(4 * 1.3 * 1.5, rel=1e-15)
    assert edge_mode(1.0, 0.5, np.pi / 2) == pytest.approx(4.0, abs=1e-12)
    assert edge_mode(1.0, 0.5, np.pi) == pytest.approx(2.0, rel=1e-15)


def test_edge_envelope_band():
    assert edge_envelope(1.0, 0.5) == (2.0, 6.0)
    lo, hi = edge_envelope(2.0, 0.25)
    assert lo == 8.0 - 1.0 and hi == 8.0 + 1.0


# ---- light-cone front ----


def synthetic_front(v, t_end=4.0, dt=0.01):
    distances = [0, 1, 2, 3, 4, 3, 2, 1]
    t = np.arange(0.0, t_end + dt / 2, dt)
    values = np.zeros((t.size, len(distances)))
    for slot, d in enumerate(distances):
        if d == 0:
            values[:, slot] = np.nan
        else:
            values[:, slot] = (v * t >= d).astype(float)
    return t, values, distances


def test_front_fit_recovers_velocity():
    v = 1.2
    t, values, distances = synthetic_front(v)
    fit = front_velocity_fit(t, values, distances, threshold=0.5)
    assert fit.velocity == pytest.approx(v, rel=0.05)
    assert abs(fit.intercept) < 0.5
    assert list(fit.distances) == [1, 2, 3, 4]


def test_front_arrivals_combine_arms_by_earliest_signal():
    t = np.arange(0.0, 2.0, 0.1)
    distances = [0, 1, 1]
    values = np.zeros((t.size, 3))
    values[t >= 0.5, 1] = 1.0
    values[t >= 1.5, 2] = 1.0  # the slow arm must not mask the fast one
    arr = front_arrivals(t, values, distances, threshold=0.5)
    assert arr == {1: pytest.approx(0.5)}


def test_front_unreached_distances_dropped():
    v = 1.2
    t, values, distances = synthetic_front(v, t_end=1.0)
    arr = front_arrivals(t, values, distances, threshold=0.5)
    assert sorted(arr) == [1]
    with pytest.raises(ValueError):
        front_velocity_fit(t, values, distances, threshold=0.5)


def test_front_fit_max_distance_window():
    v = 1.2
    t, values, distances = synthetic_front(v)
    fit = front_velocity_fit(t, values, distances, threshold=0.5,
                             max_distance=2)
    assert list(fit.distances) == [1, 2]


def test_front_static_series_raises():
    t = np.arange(0.0, 2.0, 0.1)
    values = np.zeros((t.size, 4))
    with pytest.raises(ValueError):
        front_velocity_fit(t, values, [0, 1, 2, 1], threshold=0.5)
    with pytest.raises(ValueError):
        front_arrivals(t, values[:, :3], [0, 1, 2, 1], threshold=0.5)


def test_front_distance_by_time():
    v = 1.2
    t, values, distances = synthetic_front(v)
    assert front_distance(t, values, distances, 0.5, at_time=0.0) == 0
    assert front_distance(t, values, distances, 0.5, at_time=1.0) == 1
    assert front_distance(t, values, distances, 0.5, at_time=2.6) == 3
    assert front_distance(t, values, distances, 0.5, at_time=10.0) == 4
