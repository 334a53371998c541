"""Binary tree tensor network states over the 1D-mapped lattice.

Topology is a perfect binary tree in heap order (root 0, children of i at
2i+1, 2i+2).  Bottom nodes carry two physical legs each, holding consecutive
linear positions of the site mapping; positions beyond the lattice are
dimension-1 dummies so any site count fits.  Every node tensor has leg order
(child0, child1, parent), the root with a trivial parent leg, and all
tensors away from the isometry center are isometric toward it.
"""

import json
from dataclasses import dataclass

import numpy as np

from .lattice import Lattice, SiteMapping
from .model import PAULI, SZ
from .tensor import (DenseTensor, entropy_from_weights, read_tensor,
                     tensor_to_bytes)


class TreeTopology:
    """Index arithmetic for the heap-ordered binary tree over the mapping."""

    def __init__(self, n_sites):
        if n_sites < 1:
            raise ValueError("need at least one site")
        n_leaves = 2
        while n_leaves < n_sites:
            n_leaves *= 2
        self.n_sites = n_sites
        self.n_leaves = n_leaves
        self.n_nodes = n_leaves - 1
        self.bottom_start = n_leaves // 2 - 1
        # contiguous linear interval [lo, hi) covered by each subtree
        self.lo = np.zeros(self.n_nodes, dtype=np.int64)
        self.hi = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes - 1, -1, -1):
            if self.is_bottom(i):
                j = i - self.bottom_start
                self.lo[i], self.hi[i] = 2 * j, 2 * j + 2
            else:
                self.lo[i] = self.lo[2 * i + 1]
                self.hi[i] = self.hi[2 * i + 2]

    def is_bottom(self, i):
        return i >= self.bottom_start

    def parent(self, i):
        if i == 0:
            raise ValueError("root has no parent")
        return (i - 1) // 2

    def children(self, i):
        return () if self.is_bottom(i) else (2 * i + 1, 2 * i + 2)

    def child_axis(self, parent, child):
        """Which leg (0 or 1) of parent connects to child."""
        if child == 2 * parent + 1:
            return 0
        if child == 2 * parent + 2:
            return 1
        raise ValueError(f"{child} is not a child of {parent}")

    def positions(self, i):
        """Bottom node -> its two linear positions."""
        if not self.is_bottom(i):
            raise ValueError(f"{i} is not a bottom node")
        return int(self.lo[i]), int(self.lo[i]) + 1

    def bottom_of(self, position):
        """Bottom node holding a linear position."""
        if not 0 <= position < self.n_leaves:
            raise ValueError(f"position {position} outside tree")
        return self.bottom_start + position // 2

    def phys_dim(self, position):
        return 2 if position < self.n_sites else 1

    def real_inside(self, i):
        """Number of non-dummy sites in the subtree of i."""
        return max(0, min(int(self.hi[i]), self.n_sites) - int(self.lo[i]))

    def cut_cap(self, i):
        """Maximal Schmidt rank across the parent edge of node i."""
        inside = self.real_inside(i)
        outside = self.n_sites - inside
        return 1 << min(inside, outside)

    def ancestors(self, i):
        out = []
        while i != 0:
            i = self.parent(i)
            out.append(i)
        return out

    def path(self, a, b):
        """Node sequence from a to b, inclusive."""
        for i in (a, b):
            if not 0 <= i < self.n_nodes:
                raise ValueError(f"node {i} outside tree")
        if a == b:
            return [a]
        up_a = [a] + self.ancestors(a)
        mark = set(up_a)
        down = [b]
        while down[-1] not in mark:
            down.append(self.parent(down[-1]))
        lca = down[-1]
        return up_a[:up_a.index(lca) + 1] + list(reversed(down[:-1]))


@dataclass
class TreeState:
    """Tree tensors plus the gauge center; mutated in place by the engines."""

    topology: TreeTopology
    mapping: SiteMapping
    tensors: list
    center: int = 0

    def copy(self):
        return TreeState(self.topology, self.mapping,
                         [t.copy() for t in self.tensors], self.center)

    def bond_dims(self):
        """Parent-edge dimension of every non-root node."""
        return [self.tensors[i].shape[2]
                for i in range(1, self.topology.n_nodes)]

    def norm(self):
        return float(np.linalg.norm(self.tensors[self.center]))


def _pad_axis(arr, axis, new_dim, amplitude, rng):
    old = arr.shape[axis]
    if new_dim == old:
        return arr
    shape = list(arr.shape)
    shape[axis] = new_dim - old
    r = amplitude * rng.random(shape)
    phi = 2.0 * np.pi * rng.random(shape)
    return np.concatenate([arr, r * np.exp(1j * phi)], axis=axis)


def _absorb_into_parent(state, r, parent, axis):
    """Contract matrix r (new, old) into the parent's child leg."""
    t = np.tensordot(r, state.tensors[parent], (1, axis))
    state.tensors[parent] = np.ascontiguousarray(np.moveaxis(t, 0, axis))


def _orth_up(state, i):
    """Make node i isometric toward its parent, pushing weight up."""
    a = state.tensors[i]
    d0, d1, dp = a.shape
    q, r = np.linalg.qr(a.reshape(d0 * d1, dp))
    state.tensors[i] = np.ascontiguousarray(q.reshape(d0, d1, q.shape[1]))
    _absorb_into_parent(state, r, state.topology.parent(i),
                        state.topology.child_axis(state.topology.parent(i), i))


def _orth_down(state, i, axis):
    """Make node i isometric toward child leg `axis`, pushing weight down.

    Returns the matrix absorbed into the child (new_bond, old_bond).
    """
    a = state.tensors[i]
    others = [ax for ax in range(3) if ax != axis]
    perm = others + [axis]
    shape = [a.shape[ax] for ax in perm]
    mat = a.transpose(perm).reshape(-1, a.shape[axis])
    q, r = np.linalg.qr(mat)
    qt = q.reshape(shape[0], shape[1], q.shape[1])
    inv = np.argsort(perm)
    state.tensors[i] = np.ascontiguousarray(qt.transpose(inv))
    child = 2 * i + 1 + axis
    state.tensors[child] = np.ascontiguousarray(
        np.tensordot(state.tensors[child], r, (2, 1)))
    return r


def move_center(state, target):
    """Walk the gauge center along the tree path to target via QR moves."""
    topo = state.topology
    path = topo.path(state.center, target)
    for nxt in path[1:]:
        cur = state.center
        if cur != 0 and nxt == topo.parent(cur):
            _orth_up(state, cur)
        else:
            _orth_down(state, cur, topo.child_axis(cur, nxt))
        state.center = nxt
    return state


def from_product(pattern, mapping, chi, noise=1e-16, seed=0):
    """Tree state for a classical pattern, noise-padded to working rank.

    Every bond is padded to min(chi, maximal Schmidt rank of its cut) with
    complex noise of the given amplitude, then the tree is canonicalized to
    the root.  The represented state differs from the exact product state
    only at O(noise^2), so the norm stays 1 up to that error.
    """
    topo = TreeTopology(mapping.n_sites)
    tensors = []
    for i in range(topo.n_nodes):
        if topo.is_bottom(i):
            p0, p1 = topo.positions(i)
            vecs = []
            for p in (p0, p1):
                if topo.phys_dim(p) == 1:
                    vecs.append(np.ones(1, dtype=np.complex128))
                else:
                    site = mapping.site_at(p)
                    down = pattern.values[site] < 0
                    v = np.zeros(2, dtype=np.complex128)
                    v[1 if down else 0] = 1.0
                    vecs.append(v)
            tensors.append(np.outer(vecs[0], vecs[1]).reshape(
                vecs[0].size, vecs[1].size, 1))
        else:
            tensors.append(np.ones((1, 1, 1), dtype=np.complex128))
    state = TreeState(topo, mapping, tensors, center=0)
    rng = np.random.default_rng(seed)
    # pad both ends of each edge; order fixed so runs are reproducible
    for i in range(1, topo.n_nodes):
        target = min(int(chi), topo.cut_cap(i))
        parent = topo.parent(i)
        axis = topo.child_axis(parent, i)
        state.tensors[i] = _pad_axis(state.tensors[i], 2, target, noise, rng)
        state.tensors[parent] = _pad_axis(state.tensors[parent], axis,
                                          target, noise, rng)
    for i in range(topo.n_nodes - 1, 0, -1):
        _orth_up(state, i)
    state.center = 0
    return state


def random_state(mapping, chi, seed=0):
    """Haar-ish random normalized tree state at the given rank cap."""
    topo = TreeTopology(mapping.n_sites)
    rng = np.random.default_rng(seed)
    dims = [min(int(chi), topo.cut_cap(i)) for i in range(topo.n_nodes)]
    dims[0] = 1
    tensors = []
    for i in range(topo.n_nodes):
        if topo.is_bottom(i):
            p0, p1 = topo.positions(i)
            d0, d1 = topo.phys_dim(p0), topo.phys_dim(p1)
        else:
            d0, d1 = dims[2 * i + 1], dims[2 * i + 2]
        shape = (d0, d1, dims[i])
        tensors.append(rng.standard_normal(shape)
                       + 1j * rng.standard_normal(shape))
    state = TreeState(topo, mapping, tensors, center=0)
    for i in range(topo.n_nodes - 1, 0, -1):
        _orth_up(state, i)
    state.tensors[0] /= np.linalg.norm(state.tensors[0])
    return state


def _project_up(a, m0, m1):
    """<a| m0 (x) m1 (x) 1 |a> as a matrix on the parent leg (bra, ket)."""
    b = a
    if m0 is not None:
        b = np.tensordot(m0, b, (1, 0))
    if m1 is not None:
        b = np.moveaxis(np.tensordot(m1, b, (1, 1)), 0, 1)
    return np.tensordot(a.conj(), b, ((0, 1), (0, 1)))


def _expect_product(state, ops):
    """<psi| prod ops |psi> / <psi|psi> for ops keyed by linear position."""
    topo = state.topology
    move_center(state, 0)
    involved = set()
    for p in ops:
        node = topo.bottom_of(p)
        involved.add(node)
        involved.update(topo.ancestors(node))
    involved.discard(0)
    pend = {}
    for i in sorted(involved, reverse=True):
        a = state.tensors[i]
        if topo.is_bottom(i):
            p0, p1 = topo.positions(i)
            m0, m1 = ops.get(p0), ops.get(p1)
        else:
            m0, m1 = pend.pop(2 * i + 1, None), pend.pop(2 * i + 2, None)
        pend[i] = _project_up(a, m0, m1)
    t = state.tensors[0]
    if topo.is_bottom(0):
        p0, p1 = topo.positions(0)
        m0, m1 = ops.get(p0), ops.get(p1)
    else:
        m0, m1 = pend.get(1), pend.get(2)
    b = t
    if m0 is not None:
        b = np.tensordot(m0, b, (1, 0))
    if m1 is not None:
        b = np.moveaxis(np.tensordot(m1, b, (1, 1)), 0, 1)
    num = complex(np.vdot(t, b))
    den = float(np.vdot(t, t).real)
    return num / den


def _site_ops(state, assignments):
    """{site: 2x2} keyed by row-major site -> keyed by linear position."""
    out = {}
    for site, op in assignments.items():
        out[int(state.mapping.inverse[site])] = np.asarray(op,
                                                           dtype=np.complex128)
    return out


def expect_local(state, site, axis="z"):
    """<sigma_axis> at one row-major site."""
    val = _expect_product(state, _site_ops(state, {site: PAULI[axis]}))
    return float(val.real)


def magnetization_all(state):
    """<sz> for every site in one down-sweep of density environments."""
    topo = state.topology
    move_center(state, 0)
    down = {0: np.ones((1, 1), dtype=np.complex128)}
    out = np.full(state.mapping.n_sites, np.nan)
    nrm2 = float(np.vdot(state.tensors[0], state.tensors[0]).real)
    for i in range(topo.n_nodes):
        a = state.tensors[i]
        c = np.tensordot(a, down[i], (2, 1))  # (a, b, p_bra)
        if topo.is_bottom(i):
            p0, p1 = topo.positions(i)
            if p0 < topo.n_sites:
                m = np.einsum("aup,ab,bup->", a.conj(), SZ, c)
                out[state.mapping.site_at(p0)] = m.real / nrm2
            if p1 < topo.n_sites:
                m = np.einsum("uap,ab,ubp->", a.conj(), SZ, c)
                out[state.mapping.site_at(p1)] = m.real / nrm2
        else:
            down[2 * i + 1] = np.tensordot(a.conj(), c, ((1, 2), (1, 2)))
            down[2 * i + 2] = np.tensordot(a.conj(), c, ((0, 2), (0, 2)))
    return out


def z_variance(state, site):
    """1 - <sz>^2, the only sanctioned self-correlation."""
    m = expect_local(state, site, "z")
    return 1.0 - m * m


def correlation(state, i, j):
    """Connected zz correlator between distinct row-major sites."""
    if i == j:
        raise ValueError("self-correlation is not defined; use z_variance")
    zz = _expect_product(state, _site_ops(state, {i: SZ, j: SZ})).real
    return float(zz) - expect_local(state, i) * expect_local(state, j)


@dataclass
class CorrelationCut:
    """Connected correlator along a line through an anchor site.

    offsets[k] sites from the anchor along the direction; values has nan at
    the anchor slot (offset 0).  ring marks a closed periodic line, where
    offset k and offset k - len(offsets) are the same separation.
    """

    anchor: int
    direction: str
    offsets: list
    sites: list
    values: np.ndarray
    ring: bool = False

    @property
    def anchor_index(self):
        return self.offsets.index(0)

    def distances(self):
        """Graph distance along the line for each slot."""
        n = len(self.offsets)
        if self.ring:
            return [min(k % n, (-k) % n) for k in self.offsets]
        return [abs(k) for k in self.offsets]


def cut_sites(lat, anchor, direction):
    """(offsets, sites) of the full line through anchor along a direction."""
    steps = {"row": (0, 1), "col": (1, 0), "diagonal": (1, 1)}
    if direction not in steps:
        raise ValueError(f"unknown cut direction {direction!r}")
    dr, dc = steps[direction]
    r0, c0 = lat.coords(anchor)

    def walk(sign):
        out = []
        r, c = r0, c0
        seen = {(r0, c0)}
        closed = False
        while True:
            r2, c2 = r + sign * dr, c + sign * dc
            if not 0 <= r2 < lat.rows:
                if lat.row_boundary == "open" or dr == 0:
                    break
                r2 %= lat.rows
            if not 0 <= c2 < lat.cols:
                if lat.col_boundary == "open" or dc == 0:
                    break
                c2 %= lat.cols
            if (r2, c2) in seen:
                closed = (r2, c2) == (r0, c0)
                break
            seen.add((r2, c2))
            out.append((r2, c2))
            r, c = r2, c2
        return out, closed

    fwd, ring = walk(+1)
    back, _ = walk(-1)
    if ring:
        back = []
    else:
        # drop overlap when a broken periodic line meets the forward arm
        fwd_set = set(fwd)
        pruned = []
        for rc in back:
            if rc in fwd_set:
                break
            pruned.append(rc)
        back = pruned
    offsets = list(range(-len(back), 0)) + [0] + list(range(1, len(fwd) + 1))
    coords = list(reversed(back)) + [(r0, c0)] + fwd
    sites = [lat.site(r, c) for r, c in coords]
    return offsets, sites, ring


def correlation_cut(state, anchor, direction):
    """CorrelationCut of connected zz correlators along a lattice line."""
    lat = state.mapping.lattice
    offsets, sites, ring = cut_sites(lat, anchor, direction)
    values = np.full(len(sites), np.nan)
    z_anchor = expect_local(state, anchor)
    for slot, (k, s) in enumerate(zip(offsets, sites)):
        if k == 0:
            continue
        zz = _expect_product(state, _site_ops(state, {anchor: SZ, s: SZ})).real
        values[slot] = float(zz) - z_anchor * expect_local(state, s)
    return CorrelationCut(anchor=anchor, direction=direction,
                          offsets=offsets, sites=sites, values=values,
                          ring=ring)


def link_entropy(state, node):
    """Entanglement entropy across the parent edge of a node."""
    if node == 0:
        raise ValueError("the root has no parent link")
    move_center(state, node)
    a = state.tensors[node]
    s = np.linalg.svd(a.reshape(-1, a.shape[2]), compute_uv=False)
    return entropy_from_weights(s * s)


def link_entropies(state, nodes):
    """Entropies across several parent edges without moving the center.

    Uses downward density matrices with the center at the root, so the
    sweep caches of a running engine stay valid.
    """
    topo = state.topology
    if any(n == 0 for n in nodes):
        raise ValueError("the root has no parent link")
    move_center(state, 0)
    wanted = set(nodes)
    needed = set(wanted)
    for n in wanted:
        needed.update(topo.ancestors(n))
    down = {0: np.ones((1, 1), dtype=np.complex128)}
    out = {}
    for i in range(topo.n_nodes):
        if i not in needed and i != 0:
            continue
        if i in wanted:
            out[i] = entropy_from_weights(np.linalg.eigvalsh(down[i]))
        if topo.is_bottom(i):
            continue
        a = state.tensors[i]
        c = np.tensordot(a, down[i], (2, 1))
        down[2 * i + 1] = np.tensordot(a.conj(), c, ((1, 2), (1, 2)))
        down[2 * i + 2] = np.tensordot(a.conj(), c, ((0, 2), (0, 2)))
    return [out[n] for n in nodes]


def subsystem_entropy(state, sites):
    """Entropy of 1 or 2 sites via the Pauli-expansion reduced matrix."""
    sites = tuple(sites)
    if not 1 <= len(sites) <= 2 or len(set(sites)) != len(sites):
        raise ValueError("subsystem must be 1 or 2 distinct sites")
    labels = "ixyz"
    if len(sites) == 1:
        rho = 0.5 * np.eye(2, dtype=np.complex128)
        for ax in "xyz":
            v = _expect_product(state, _site_ops(state,
                                                 {sites[0]: PAULI[ax]}))
            rho += 0.5 * v.real * PAULI[ax]
    else:
        rho = np.zeros((4, 4), dtype=np.complex128)
        for a in labels:
            for b in labels:
                if a == "i" and b == "i":
                    v = 1.0
                else:
                    ops = {}
                    if a != "i":
                        ops[sites[0]] = PAULI[a]
                    if b != "i":
                        ops[sites[1]] = PAULI[b]
                    v = _expect_product(state, _site_ops(state, ops)).real
                rho += 0.25 * v * np.kron(PAULI[a], PAULI[b])
    return entropy_from_weights(np.linalg.eigvalsh(rho))


def energy(state, terms):
    """<H> by per-term contraction; the slow cross-check path."""
    total = 0.0
    for term in terms:
        ops = {s: PAULI[ax] for s, ax in zip(term.sites, term.axes)}
        total += term.coeff * _expect_product(state, _site_ops(state, ops)).real
    return float(total)


def to_statevector(state):
    """Dense amplitudes in oracle bit order (bit k = linear position k)."""
    topo = state.topology

    def build(i):
        a = state.tensors[i]
        if topo.is_bottom(i):
            d0, d1, dp = a.shape
            return a.transpose(1, 0, 2).reshape(d0 * d1, dp)
        v0 = build(2 * i + 1)
        v1 = build(2 * i + 2)
        tmp = np.tensordot(v0, a, (1, 0))       # (D0, d1, p)
        tmp = np.tensordot(v1, tmp, (1, 1))     # (D1, D0, p)
        return tmp.reshape(v1.shape[0] * v0.shape[0], a.shape[2])

    return np.ascontiguousarray(build(0).reshape(-1))


# ---- checkpointing ----

CHECKPOINT_FORMAT = "ttnquench-checkpoint"


def save_checkpoint(state, path, config_hash=""):
    """Topology + mapping + tensors + center; byte-stable for fixed input."""
    lat = state.mapping.lattice
    head = {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "center": int(state.center),
        "config_hash": config_hash,
        "n_sites": int(state.mapping.n_sites),
        "lattice": {"rows": lat.rows, "cols": lat.cols,
                    "row_boundary": lat.row_boundary,
                    "col_boundary": lat.col_boundary},
        "mapping": {"scheme": state.mapping.scheme,
                    "fallback": state.mapping.fallback,
                    "order": state.mapping.order.tolist()},
        "tensors": state.topology.n_nodes,
    }
    with open(path, "wb") as fp:
        fp.write(json.dumps(head, sort_keys=True,
                            separators=(",", ":")).encode() + b"\n")
        for i, t in enumerate(state.tensors):
            legs = (("c0", t.shape[0]), ("c1", t.shape[1]), ("p", t.shape[2]))
            fp.write(tensor_to_bytes(DenseTensor(legs, t)))


def load_checkpoint(path):
    """Inverse of save_checkpoint -> (TreeState, config_hash)."""
    with open(path, "rb") as fp:
        head = json.loads(fp.readline().decode())
        if head.get("format") != CHECKPOINT_FORMAT:
            raise ValueError("not a checkpoint file")
        lat = Lattice(**head["lattice"])
        mapping = SiteMapping(lattice=lat,
                              order=np.array(head["mapping"]["order"]),
                              scheme=head["mapping"]["scheme"],
                              fallback=head["mapping"]["fallback"])
        tensors = []
        for _ in range(head["tensors"]):
            t = read_tensor(fp)
            tensors.append(np.ascontiguousarray(t.data))
    state = TreeState(TreeTopology(mapping.n_sites), mapping, tensors,
                      center=head["center"])
    return state, head["config_hash"]
