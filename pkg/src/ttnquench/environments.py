"""Hamiltonian environments and effective operators on the tree.

The Hamiltonian (zz bonds plus local fields) is compiled once against the
tree: every bond is classified per node as crossing the two child intervals,
or leaving the node's interval on either side.  Environment blocks carry the
contraction of one side of an edge: a single matrix for all terms fully on
that side, plus one flowed sigma-z matrix per position that still has an
open bond to the other side.  Effective operators assemble these blocks
into something Krylov can apply fast; two-body channels are stacked and
applied with batched matmuls.
"""

from dataclasses import dataclass

import numpy as np

from .model import PAULI, SZ


@dataclass
class EnvBlock:
    """One side of an edge: h for closed terms, ops for open z legs."""

    h: np.ndarray
    ops: dict

    @property
    def dim(self):
        return self.h.shape[0]


def _apply_axis(m, t, axis):
    return np.moveaxis(np.tensordot(m, t, (1, axis)), 0, axis)


def _project_pair(a, m0, m1):
    """Upward flow of m0 (x) m1 through a 3-leg tensor, onto the parent leg."""
    b = a
    if m0 is not None:
        b = np.tensordot(m0, b, (1, 0))
    if m1 is not None:
        b = np.moveaxis(np.tensordot(m1, b, (1, 1)), 0, 1)
    return np.tensordot(a.conj(), b, ((0, 1), (0, 1)))


def _project_down(a, axis, m_sib, m_par):
    """Downward flow through a 3-leg tensor, onto child leg `axis`."""
    sib = 1 - axis
    b = a
    if m_sib is not None:
        b = _apply_axis(m_sib, b, sib)
    if m_par is not None:
        b = _apply_axis(m_par, b, 2)
    return np.tensordot(a.conj(), b, ((sib, 2), (sib, 2)))


class CompiledHamiltonian:
    """Bond/field classification of a two-body-z Hamiltonian on the tree.

    Accepts 1-site terms on any axis and 2-site terms only with axes 'zz';
    that covers the transverse-field model and keeps every interaction
    channel a sigma-z flow.
    """

    def __init__(self, terms, mapping, topology):
        self.mapping = mapping
        self.topology = topology
        n = topology.n_nodes
        self.local_h = {}
        self.bonds = []
        inv = mapping.inverse
        for term in terms:
            if len(term.sites) == 1:
                p = int(inv[term.sites[0]])
                mat = self.local_h.setdefault(
                    p, np.zeros((2, 2), dtype=np.complex128))
                mat += term.coeff * PAULI[term.axes]
            elif len(term.sites) == 2:
                if term.axes != "zz":
                    raise ValueError(
                        f"two-site terms must be zz, got {term.axes!r}")
                p, q = (int(inv[s]) for s in term.sites)
                if p > q:
                    p, q = q, p
                self.bonds.append((p, q, float(term.coeff)))
            else:
                raise ValueError("only 1- and 2-site terms are supported")
        self.cross = [[] for _ in range(n)]
        self.bound = [([], []) for _ in range(n)]
        self.edge = [[] for _ in range(n)]
        for node in range(n):
            (l0, h0), (l1, h1) = self.halves(node)
            lo, hi = l0, h1
            for p, q, c in self.bonds:
                in_p, in_q = lo <= p < hi, lo <= q < hi
                if in_p and in_q:
                    if p < h0 <= q:
                        self.cross[node].append((p, q, c))
                elif in_p:
                    side = 0 if p < h0 else 1
                    self.bound[node][side].append((p, q, c))
                    self.edge[node].append((p, q, c))
                elif in_q:
                    side = 0 if q < h0 else 1
                    self.bound[node][side].append((q, p, c))
                    self.edge[node].append((q, p, c))

    def halves(self, node):
        """The two child intervals of a node (phys positions at the bottom)."""
        topo = self.topology
        if topo.is_bottom(node):
            lo = int(topo.lo[node])
            return (lo, lo + 1), (lo + 1, lo + 2)
        c0, c1 = topo.children(node)
        return ((int(topo.lo[c0]), int(topo.hi[c0])),
                (int(topo.lo[c1]), int(topo.hi[c1])))

    def subaxis(self, node, p):
        """Which half of a node's interval holds position p."""
        (_, h0), _ = self.halves(node)
        return 0 if p < h0 else 1

    def phys_env(self, position):
        """Environment block of a physical leg."""
        if position >= self.topology.n_sites:
            return EnvBlock(h=np.zeros((1, 1), dtype=np.complex128), ops={})
        h = self.local_h.get(position)
        if h is None:
            h = np.zeros((2, 2), dtype=np.complex128)
        return EnvBlock(h=h.copy(), ops={position: SZ.astype(np.complex128)})

    def child_blocks(self, node, up):
        """Below-blocks of a node's two child legs."""
        topo = self.topology
        if topo.is_bottom(node):
            p0, p1 = topo.positions(node)
            return self.phys_env(p0), self.phys_env(p1)
        c0, c1 = topo.children(node)
        return up[c0], up[c1]

    def below_block(self, node, a, up):
        """Below-block of node's parent edge; a must be isometric upward."""
        e0, e1 = self.child_blocks(node, up)
        h = _project_pair(a, e0.h, None) + _project_pair(a, None, e1.h)
        for p, q, c in self.cross[node]:
            h += c * _project_pair(a, e0.ops[p], e1.ops[q])
        ops = {}
        for p, q, c in self.edge[node]:
            if p in ops:
                continue
            if self.subaxis(node, p) == 0:
                ops[p] = _project_pair(a, e0.ops[p], None)
            else:
                ops[p] = _project_pair(a, None, e1.ops[p])
        return EnvBlock(h=h, ops=ops)

    def above_block(self, parent, axis, a, up, down):
        """Above-block of the edge toward child `axis` of parent.

        a is the parent tensor, isometric toward that child; up and down are
        the current caches, read at the sibling and at parent's own edge.
        """
        topo = self.topology
        sib_axis = 1 - axis
        child = topo.children(parent)[axis]
        e_sib = self.child_blocks(parent, up)[sib_axis]
        e_par = down[parent]
        h = _project_down(a, axis, e_sib.h, None) \
            + _project_down(a, axis, None, e_par.h)
        for p, q, c in self.bound[parent][sib_axis]:
            h += c * _project_down(a, axis, e_sib.ops[p], e_par.ops[q])
        slo, shi = self.halves(parent)[sib_axis]
        ops = {}
        for p, q, c in self.edge[child]:
            if q in ops:
                continue
            if slo <= q < shi:
                ops[q] = _project_down(a, axis, e_sib.ops[q], None)
            else:
                ops[q] = _project_down(a, axis, None, e_par.ops[q])
        return EnvBlock(h=h, ops=ops)

    def root_above(self):
        return EnvBlock(h=np.zeros((1, 1), dtype=np.complex128), ops={})


class EffectiveOperator:
    """Sum of one-leg matrices and stacked two-leg z..z channels.

    singles: list of (axis, matrix); pairs: list of
    (axis_i, axis_j, m_i, m_j, coeff) with axis_i < axis_j.  Channels with
    the same axis pair are stacked and applied with batched matmuls.
    """

    def __init__(self, shape, singles, pairs):
        self.shape = tuple(shape)
        nd = len(self.shape)
        acc = [None] * nd
        for axis, m in singles:
            if m.shape != (self.shape[axis],) * 2:
                raise ValueError("single-leg matrix has wrong shape")
            acc[axis] = m if acc[axis] is None else acc[axis] + m
        self.singles = [(ax, m) for ax, m in enumerate(acc) if m is not None]
        grouped = {}
        for ai, aj, mi, mj, coeff in pairs:
            if not ai < aj:
                raise ValueError("pair axes must be ordered")
            grouped.setdefault((ai, aj), ([], []))
            grouped[(ai, aj)][0].append(coeff * mi)
            grouped[(ai, aj)][1].append(mj)
        self.pairs = []
        for (ai, aj), (ms_i, ms_j) in sorted(grouped.items()):
            self.pairs.append((ai, aj, np.ascontiguousarray(np.stack(ms_i)),
                               np.ascontiguousarray(np.stack(ms_j))))

    def apply(self, t):
        if t.shape != self.shape:
            raise ValueError(f"tensor shape {t.shape} != {self.shape}")
        out = np.zeros_like(t)
        for axis, m in self.singles:
            out += _apply_axis(m, t, axis)
        nd = t.ndim
        for ai, aj, stack_i, stack_j in self.pairs:
            k, di, _ = stack_i.shape
            dj = stack_j.shape[1]
            p = np.moveaxis(t, (ai, aj), (0, 1)).reshape(di, dj, -1)
            rest = p.shape[2]
            c = np.tensordot(stack_i, p.reshape(di, dj * rest), (2, 0))
            c = c.reshape(k, di, dj, rest).transpose(0, 2, 1, 3) \
                .reshape(k, dj, di * rest)
            d = np.matmul(stack_j, c).reshape(k, dj, di, rest).sum(axis=0)
            d = np.moveaxis(d.transpose(1, 0, 2).reshape(
                (di, dj) + np.moveaxis(t, (ai, aj), (0, 1)).shape[2:]),
                (0, 1), (ai, aj))
            out += d
        return out

    def expectation(self, t):
        """<t|H|t> / <t|t>, real part."""
        num = np.vdot(t, self.apply(t))
        return float(num.real / np.vdot(t, t).real)

    def matrix(self):
        """Dense matrix; for tests on small shapes only."""
        dim = int(np.prod(self.shape))
        eye = np.eye(dim, dtype=np.complex128)
        cols = [self.apply(eye[:, k].reshape(self.shape)).reshape(-1)
                for k in range(dim)]
        return np.stack(cols, axis=1)


def node_operator(comp, node, up, down):
    """Effective Hamiltonian of a single node tensor at the center."""
    e0, e1 = comp.child_blocks(node, up)
    ea = down[node]
    shape = (e0.dim, e1.dim, ea.dim)
    singles = [(0, e0.h), (1, e1.h), (2, ea.h)]
    pairs = [(0, 1, e0.ops[p], e1.ops[q], c) for p, q, c in comp.cross[node]]
    for p, q, c in comp.bound[node][0]:
        pairs.append((0, 2, e0.ops[p], ea.ops[q], c))
    for p, q, c in comp.bound[node][1]:
        pairs.append((1, 2, e1.ops[p], ea.ops[q], c))
    return EffectiveOperator(shape, singles, pairs)


def link_operator(comp, node, up, down):
    """Effective Hamiltonian of the bond matrix on node's parent edge.

    Legs are (upper, lower): the upper leg faces the parent side, the lower
    leg faces the subtree.
    """
    below = up[node]
    above = down[node]
    shape = (above.dim, below.dim)
    singles = [(0, above.h), (1, below.h)]
    pairs = [(0, 1, above.ops[q], below.ops[p], c)
             for p, q, c in comp.edge[node]]
    return EffectiveOperator(shape, singles, pairs)


def merged_operator(comp, parent, axis, up, down):
    """Effective Hamiltonian of the two-node merge toward child `axis`.

    Leg order of the merged tensor: (child-half0, child-half1, sibling,
    parent), matching tensordot(child, parent_tensor, (2, axis)).
    """
    topo = comp.topology
    child = topo.children(parent)[axis]
    sib_axis = 1 - axis
    e0, e1 = comp.child_blocks(child, up)
    es = comp.child_blocks(parent, up)[sib_axis]
    ea = down[parent]
    shape = (e0.dim, e1.dim, es.dim, ea.dim)
    singles = [(0, e0.h), (1, e1.h), (2, es.h), (3, ea.h)]
    sub = {0: e0, 1: e1}
    pairs = [(0, 1, e0.ops[p], e1.ops[q], c) for p, q, c in comp.cross[child]]
    for p, q, c in comp.cross[parent]:
        # p sits in half0 of the parent, q in half1
        if axis == 0:
            k = comp.subaxis(child, p)
            pairs.append((k, 2, sub[k].ops[p], es.ops[q], c))
        else:
            k = comp.subaxis(child, q)
            pairs.append((k, 2, sub[k].ops[q], es.ops[p], c))
    for p, q, c in comp.bound[parent][axis]:
        k = comp.subaxis(child, p)
        pairs.append((k, 3, sub[k].ops[p], ea.ops[q], c))
    for p, q, c in comp.bound[parent][sib_axis]:
        pairs.append((2, 3, es.ops[p], ea.ops[q], c))
    return EffectiveOperator(shape, singles, pairs)


def root_pair_operator(comp, up):
    """Effective Hamiltonian of the root's children merged through the root.

    The root cut is one cut, so a (child, root) merge there is rank-capped
    by the sibling bond; growing it needs both children in one merge.  Leg
    order: (half0, half1 of the first child, half0, half1 of the second);
    the trivial parent leg is dropped.
    """
    n1, n2 = comp.topology.children(0)
    e0, e1 = comp.child_blocks(n1, up)
    f0, f1 = comp.child_blocks(n2, up)
    blocks = (e0, e1, f0, f1)
    shape = tuple(b.dim for b in blocks)
    singles = [(k, b.h) for k, b in enumerate(blocks)]
    pairs = [(0, 1, e0.ops[p], e1.ops[q], c) for p, q, c in comp.cross[n1]]
    pairs += [(2, 3, f0.ops[p], f1.ops[q], c) for p, q, c in comp.cross[n2]]
    for p, q, c in comp.cross[0]:
        # p under the first child, q under the second
        ai = comp.subaxis(n1, p)
        aj = 2 + comp.subaxis(n2, q)
        pairs.append((ai, aj, blocks[ai].ops[p], blocks[aj].ops[q], c))
    return EffectiveOperator(shape, singles, pairs)
