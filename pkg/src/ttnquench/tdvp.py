"""Time evolution of tree states: fixed-rank and rank-adaptive sweeps.

Both integrators run a palindromic pair of half-sweeps per step, so one
step is second order in dt and maps to its exact inverse under dt -> -dt.
The single-site scheme keeps all bond dimensions fixed and conserves norm
and energy to Krylov accuracy; the two-site scheme grows ranks through
bond merges, truncates back to the working rank, and renormalizes after
the sweep.  A shared runner drives either engine (or the dense reference
engine) and streams observables as a time series.
"""

import time
from dataclasses import dataclass

import numpy as np

from . import oracle, ttn
from .environments import (CompiledHamiltonian, link_operator,
                           merged_operator, node_operator,
                           root_pair_operator)
from .lattice import build_mapping
from .model import build_hamiltonian
from .series import SeriesWriter
from .tensor import _robust_svd, _truncation_rank, lanczos_expm
from .ttn import _orth_down, _orth_up, move_center

ENGINES = ("tdvp1", "tdvp2", "hybrid", "oracle")


@dataclass
class TruncationSummary:
    """Worst-case truncation bookkeeping over one or more sweeps."""

    max_discarded: float = 0.0
    max_rank: int = 0
    renorm: float = 1.0

    def absorb_split(self, rank, discarded):
        self.max_rank = max(self.max_rank, int(rank))
        self.max_discarded = max(self.max_discarded, float(discarded))

    def merge(self, other):
        self.absorb_split(other.max_rank, other.max_discarded)
        self.renorm *= other.renorm


class Sweeper:
    """Environment caches plus the sweep primitives over one tree state.

    The state must enter every step with the center at the root; the caches
    are rebuilt incrementally as the center moves, and all of them are
    current again when the step returns.
    """

    def __init__(self, state, comp, krylov_tol=1e-12, krylov_max_dim=30):
        self.state = state
        self.comp = comp
        self.krylov_tol = float(krylov_tol)
        self.krylov_max_dim = int(krylov_max_dim)
        self._floor = 1
        topo = state.topology
        move_center(state, 0)
        self.up = [None] * topo.n_nodes
        self.down = [None] * topo.n_nodes
        self.down[0] = comp.root_above()
        for i in range(topo.n_nodes - 1, 0, -1):
            self.up[i] = comp.below_block(i, state.tensors[i], self.up)

    # -- primitives --

    def _expm(self, op, t, coefficient):
        def matvec(v):
            return op.apply(v.reshape(t.shape)).reshape(-1)

        out = lanczos_expm(matvec, t.reshape(-1), coefficient,
                           tol=self.krylov_tol, max_dim=self.krylov_max_dim)
        return np.ascontiguousarray(out.reshape(t.shape))

    def evolve_node(self, n, coefficient):
        op = node_operator(self.comp, n, self.up, self.down)
        self.state.tensors[n] = self._expm(op, self.state.tensors[n],
                                           coefficient)

    def evolve_link(self, c, bond, coefficient):
        """Bond in (upper, lower) orientation across the parent edge of c."""
        op = link_operator(self.comp, c, self.up, self.down)
        return self._expm(op, bond, coefficient)

    def split_toward(self, n, axis):
        """QR the center off its child leg; returns the (new, old) bond."""
        a = self.state.tensors[n]
        others = [ax for ax in range(3) if ax != axis]
        perm = others + [axis]
        q, r = np.linalg.qr(a.transpose(perm).reshape(-1, a.shape[axis]))
        qt = q.reshape(a.shape[others[0]], a.shape[others[1]], q.shape[1])
        self.state.tensors[n] = np.ascontiguousarray(
            qt.transpose(np.argsort(perm)))
        return r

    def absorb_down(self, c, bond):
        """Contract an (upper, lower) bond into child c's parent leg."""
        self.state.tensors[c] = np.ascontiguousarray(
            np.tensordot(self.state.tensors[c], bond, (2, 1)))
        self.state.center = c

    def absorb_up(self, n, axis, bond):
        """Contract a (new, old) bond into node n's child leg."""
        t = np.tensordot(bond, self.state.tensors[n], (1, axis))
        self.state.tensors[n] = np.ascontiguousarray(np.moveaxis(t, 0, axis))
        self.state.center = n

    def refresh_up(self, c):
        self.up[c] = self.comp.below_block(c, self.state.tensors[c], self.up)

    def refresh_down(self, c):
        topo = self.state.topology
        parent = topo.parent(c)
        axis = topo.child_axis(parent, c)
        self.down[c] = self.comp.above_block(parent, axis,
                                             self.state.tensors[parent],
                                             self.up, self.down)

    def gauge_up(self, c):
        """Pure gauge move of the center from c to its parent."""
        parent = self.state.topology.parent(c)
        _orth_up(self.state, c)
        self.refresh_up(c)
        self.state.center = parent

    def gauge_down(self, n, axis):
        """Pure gauge move of the center from n into child `axis`."""
        _orth_down(self.state, n, axis)
        c = 2 * n + 1 + axis
        self.refresh_down(c)
        self.state.center = c
        return c

    def energy(self):
        """<H> from the cached environments; center must be at the root."""
        if self.state.center != 0:
            raise ValueError("center must be at the root")
        op = node_operator(self.comp, 0, self.up, self.down)
        return op.expectation(self.state.tensors[0])

    # -- fixed-rank step --

    def step_tdvp1(self, dt):
        """One second-order step at fixed bond dimensions."""
        if self.state.center != 0:
            raise ValueError("step must start with the center at the root")
        t2 = 0.5 * dt
        self._down1(0, t2)
        self._up1(0, t2)

    def _down1(self, n, t2):
        self.evolve_node(n, -1j * t2)
        for axis, c in enumerate(self.state.topology.children(n)):
            bond = self.split_toward(n, axis)
            self.refresh_down(c)
            bond = self.evolve_link(c, bond, +1j * t2)
            self.absorb_down(c, bond)
            self._down1(c, t2)
            self.gauge_up(c)

    def _up1(self, n, t2):
        for axis, c in reversed(list(
                enumerate(self.state.topology.children(n)))):
            self.gauge_down(n, axis)
            self._up1(c, t2)
            a = self.state.tensors[c]
            q, r = np.linalg.qr(a.reshape(-1, a.shape[2]))
            self.state.tensors[c] = np.ascontiguousarray(
                q.reshape(a.shape[0], a.shape[1], q.shape[1]))
            self.refresh_up(c)
            bond = self.evolve_link(c, r.T, +1j * t2)
            self.absorb_up(n, axis, bond.T)
        self.evolve_node(n, -1j * t2)

    # -- rank-adaptive step --

    def step_tdvp2(self, dt, max_rank, cutoff=0.0, floor=1):
        """One second-order step with bond merges and truncation.

        The two root bonds are one cut, so the pass merges the root's
        children through the root once instead of merging each root edge;
        anything else would cap the root rank at its starting value.
        floor protects that many directions per split from the cutoff;
        noise-seeded lanes sit far below any useful cutoff and rank growth
        stops dead without them.
        """
        if self.state.center != 0:
            raise ValueError("step must start with the center at the root")
        self._floor = int(floor)
        summary = TruncationSummary()
        topo = self.state.topology
        if topo.n_nodes == 1:
            self.evolve_node(0, -1j * dt)
            return summary
        t2 = 0.5 * dt
        n1, n2 = topo.children(0)
        self._root_merge(-1j * t2, max_rank, cutoff, summary,
                         center_to_root=False)
        self._first_merge = False
        self._down2(n1, t2, max_rank, cutoff, summary)
        self.gauge_up(n1)
        self.gauge_down(0, 1)
        self._down2(n2, t2, max_rank, cutoff, summary)
        self.gauge_up(n2)
        self._merges_left = topo.n_nodes - 2
        self.gauge_down(0, 1)
        self._up2(n2, t2, max_rank, cutoff, summary)
        self.gauge_up(n2)
        self.gauge_down(0, 0)
        self._up2(n1, t2, max_rank, cutoff, summary)
        self._merges_left -= 1
        self._root_merge(-1j * t2, max_rank, cutoff, summary,
                         center_to_root=True)
        nrm = float(np.linalg.norm(self.state.tensors[0]))
        self.state.tensors[0] /= nrm
        summary.renorm = nrm
        return summary

    def _root_merge(self, coefficient, max_rank, cutoff, summary,
                    center_to_root):
        """Merge both root children through the root, evolve, resplit.

        Ends with the center on the first child (descending) or back at
        the root as a diagonal gauge matrix (closing the step).
        """
        st = self.state.tensors
        t = np.tensordot(st[1], st[0][:, :, 0], (2, 0))
        theta = np.tensordot(t, st[2], (2, 2))
        op = root_pair_operator(self.comp, self.up)
        theta = self._expm(op, theta, coefficient)
        a0, a1, b0, b1 = theta.shape
        u, s, vh = _robust_svd(theta.reshape(a0 * a1, b0 * b1))
        cap = min(int(max_rank), self.state.topology.cut_cap(1))
        rank = min(_truncation_rank(s, cap, cutoff, self._floor), s.size)
        total = float(np.sum(s * s))
        kept = float(np.sum(s[:rank] * s[:rank]))
        discarded = 0.0 if total == 0.0 else max(0.0, 1.0 - kept / total)
        summary.absorb_split(rank, discarded)
        u, s, vh = u[:, :rank], s[:rank], vh[:rank]
        st[2] = np.ascontiguousarray(
            vh.reshape(rank, b0, b1).transpose(1, 2, 0))
        if center_to_root:
            st[1] = np.ascontiguousarray(u.reshape(a0, a1, rank))
            st[0] = np.ascontiguousarray(
                np.diag(s).astype(np.complex128).reshape(rank, rank, 1))
            self.state.center = 0
            self.refresh_up(1)
            self.refresh_up(2)
        else:
            st[1] = np.ascontiguousarray((u * s).reshape(a0, a1, rank))
            st[0] = np.ascontiguousarray(
                np.eye(rank, dtype=np.complex128).reshape(rank, rank, 1))
            self.state.center = 1
            self.refresh_up(2)
            self.refresh_down(1)

    def _theta_split(self, n, axis, coefficient, max_rank, cutoff, summary,
                     center_to_child):
        """Merge the edge (n, child axis), evolve, split with truncation."""
        c = 2 * n + 1 + axis
        a_c = self.state.tensors[c]
        theta = np.tensordot(a_c, self.state.tensors[n], (2, axis))
        op = merged_operator(self.comp, n, axis, self.up, self.down)
        theta = self._expm(op, theta, coefficient)
        d0, d1, ds, dp = theta.shape
        u, s, vh = _robust_svd(theta.reshape(d0 * d1, ds * dp))
        cap = min(int(max_rank), self.state.topology.cut_cap(c))
        rank = min(_truncation_rank(s, cap, cutoff, self._floor), s.size)
        total = float(np.sum(s * s))
        kept = float(np.sum(s[:rank] * s[:rank]))
        discarded = 0.0 if total == 0.0 else max(0.0, 1.0 - kept / total)
        summary.absorb_split(rank, discarded)
        u, s, vh = u[:, :rank], s[:rank], vh[:rank]
        if center_to_child:
            self.state.tensors[c] = np.ascontiguousarray(
                (u * s).reshape(d0, d1, rank))
        else:
            self.state.tensors[c] = np.ascontiguousarray(
                u.reshape(d0, d1, rank))
        vt = vh.reshape(rank, ds, dp)
        if not center_to_child:
            vt = s[:, None, None] * vt
        if axis == 1:
            vt = vt.transpose(1, 0, 2)
        self.state.tensors[n] = np.ascontiguousarray(vt)
        if center_to_child:
            self.refresh_down(c)
            self.state.center = c
        else:
            self.refresh_up(c)
            self.state.center = n
        return c

    def _down2(self, n, t2, max_rank, cutoff, summary):
        for axis, c in enumerate(self.state.topology.children(n)):
            if not self._first_merge:
                self.evolve_node(n, +1j * t2)
            self._first_merge = False
            self._theta_split(n, axis, -1j * t2, max_rank, cutoff, summary,
                              center_to_child=True)
            self._down2(c, t2, max_rank, cutoff, summary)
            self.gauge_up(c)

    def _up2(self, n, t2, max_rank, cutoff, summary):
        for axis, c in reversed(list(
                enumerate(self.state.topology.children(n)))):
            self.gauge_down(n, axis)
            self._up2(c, t2, max_rank, cutoff, summary)
            self._theta_split(n, axis, -1j * t2, max_rank, cutoff, summary,
                              center_to_child=False)
            self._merges_left -= 1
            if self._merges_left > 0:
                self.evolve_node(n, +1j * t2)


# -- shared runner --


def _cut_key(anchor, direction):
    return f"cut_{direction}_{anchor}"


def _measure_tree(sweeper, cuts, entropy_links):
    state = sweeper.state
    rec = {
        "norm": state.norm(),
        "energy": sweeper.energy(),
        "sz": ttn.magnetization_all(state).tolist(),
        "max_bond": int(max(state.bond_dims(), default=1)),
    }
    for anchor, direction in cuts:
        cut = ttn.correlation_cut(state, anchor, direction)
        rec[_cut_key(anchor, direction)] = cut.values.tolist()
    if entropy_links:
        ents = ttn.link_entropies(state, list(entropy_links))
        rec["link_entropy"] = [e.value for e in ents]
    return rec


def _measure_oracle(sv, terms, cuts, entropy_links):
    rec = {
        "norm": oracle.norm(sv),
        "energy": oracle.energy(sv, terms),
        "sz": oracle.magnetization_all(sv).tolist(),
    }
    lat = sv.mapping.lattice
    for anchor, direction in cuts:
        offsets, sites, _ = ttn.cut_sites(lat, anchor, direction)
        vals = [None if s == anchor else oracle.correlation(sv, anchor, s)
                for s in sites]
        rec[_cut_key(anchor, direction)] = vals
    return rec


def run_quench(lattice, pattern, *, J, g, chi, dt, t_end, engine="tdvp1",
               measure_every=1, noise=1e-16, seed=0, krylov_tol=1e-12,
               krylov_max_dim=30, cutoff=0.0, hybrid_every=10, cuts=(),
               entropy_links=(), mapping=None, writer_fp=None, extra_meta=None,
               checkpoint_path=None, checkpoint_minutes=None, config_hash="",
               progress=None):
    """Quench a classical pattern and record observables over time.

    Returns (TimeSeries, final state, info dict).  The engine is one of
    'tdvp1' (fixed ranks, state pre-padded to chi), 'tdvp2' (ranks grown
    from the bare product state, capped at chi), 'hybrid' (rank-growing
    sweep every hybrid_every steps, fixed-rank sweeps in between), or
    'oracle' (dense evolution, small systems only).
    """
    if engine not in ENGINES:
        raise ValueError(f"unknown engine {engine!r}")
    if dt <= 0 or t_end < 0:
        raise ValueError("need dt > 0 and t_end >= 0")
    mapping = mapping or build_mapping(lattice)
    terms = build_hamiltonian(lattice, J, g)
    steps = int(round(t_end / dt))
    cuts = [(int(a), str(d)) for a, d in cuts]
    entropy_links = [int(n) for n in entropy_links]

    meta = {
        "engine": engine, "J": J, "g": g, "chi": int(chi), "dt": dt,
        "t_end": t_end, "steps": steps, "measure_every": int(measure_every),
        "seed": int(seed), "noise": noise,
        "lattice": {"rows": lattice.rows, "cols": lattice.cols,
                    "row_boundary": lattice.row_boundary,
                    "col_boundary": lattice.col_boundary},
        "pattern": pattern.to_text(),
        "mapping_scheme": mapping.scheme,
        "cuts": [], "entropy_links": entropy_links,
    }
    for anchor, direction in cuts:
        offsets, sites, ring = ttn.cut_sites(lattice, anchor, direction)
        meta["cuts"].append({"key": _cut_key(anchor, direction),
                             "anchor": anchor, "direction": direction,
                             "offsets": offsets, "sites": sites,
                             "ring": ring})
    if extra_meta:
        meta.update(extra_meta)

    writer = SeriesWriter(writer_fp, meta)
    t_start = time.monotonic()
    info = {"engine": engine, "steps": steps}
    trunc_all = TruncationSummary()

    def tick(k):
        if progress is not None:
            progress(k, steps)

    try:
        if engine == "oracle":
            sv = oracle.from_pattern(pattern, mapping)
            compiled = oracle.CompiledTerms(terms, mapping)
            writer.append(0.0, _measure_oracle(sv, terms, cuts,
                                               entropy_links))

            def observe(k, state):
                done = k + 1
                tick(done)
                if done % measure_every == 0 or done == steps:
                    writer.append(done * dt,
                                  _measure_oracle(state, terms, cuts,
                                                  entropy_links))

            if steps:
                oracle.evolve(sv, compiled, dt, steps, tol=krylov_tol,
                              max_dim=krylov_max_dim, observe=observe)
            final = sv
        else:
            # rank growth needs seeded bonds: a bare product state has no
            # physical legs on internal edges, so merges there stay rank 1
            start_chi = min(chi, 4) if engine in ("tdvp2", "hybrid") else chi
            state = ttn.from_product(pattern, mapping, start_chi,
                                     noise=noise, seed=seed)
            comp = CompiledHamiltonian(terms, mapping, state.topology)
            sweeper = Sweeper(state, comp, krylov_tol=krylov_tol,
                              krylov_max_dim=krylov_max_dim)
            writer.append(0.0, _measure_tree(sweeper, cuts, entropy_links)
                          | {"max_discarded": 0.0, "renorm": 1.0})
            interval = TruncationSummary()
            last_save = time.monotonic()
            for k in range(steps):
                if engine == "tdvp1" or (engine == "hybrid"
                                         and k % hybrid_every != 0):
                    sweeper.step_tdvp1(dt)
                else:
                    s = sweeper.step_tdvp2(dt, chi, cutoff,
                                           floor=start_chi)
                    interval.merge(s)
                    trunc_all.merge(s)
                tick(k + 1)
                if (k + 1) % measure_every == 0 or k + 1 == steps:
                    rec = _measure_tree(sweeper, cuts, entropy_links)
                    rec["max_discarded"] = interval.max_discarded
                    rec["renorm"] = interval.renorm
                    writer.append((k + 1) * dt, rec)
                    interval = TruncationSummary()
                if checkpoint_path and checkpoint_minutes \
                        and time.monotonic() - last_save \
                        >= 60.0 * checkpoint_minutes:
                    ttn.save_checkpoint(state, checkpoint_path, config_hash)
                    last_save = time.monotonic()
            if checkpoint_path:
                ttn.save_checkpoint(state, checkpoint_path, config_hash)
            info["max_bond"] = int(max(state.bond_dims(), default=1))
            final = state
    except Exception as exc:
        writer.error(f"{type(exc).__name__}: {exc}")
        raise

    info["wall_seconds"] = time.monotonic() - t_start
    series = writer.series
    info["final_norm"] = series.samples[-1]["norm"]
    info["final_energy"] = series.samples[-1]["energy"]
    if engine in ("tdvp2", "hybrid"):
        info["max_discarded"] = trunc_all.max_discarded
        info["max_rank_seen"] = trunc_all.max_rank
    return series, final, info
