"""Dense labeled tensors and the numerical primitives built on them.

DenseTensor is the exchange currency at module boundaries (contraction,
factorization, serialization).  The evolution engines keep plain ndarrays
internally and drop to the flat-array helpers here (lanczos_expm) for the
hot loops.
"""

import io
import struct
from dataclasses import dataclass

import numpy as np


class KrylovError(RuntimeError):
    """Krylov exponential did not reach the requested tolerance."""


@dataclass
class DenseTensor:
    """Complex tensor with ordered, uniquely labeled legs.

    data is stored shaped (one axis per leg, C order), so data.ravel() gives
    the flat row-major layout in leg order.
    """

    legs: tuple
    data: np.ndarray

    def __post_init__(self):
        self.legs = tuple((str(l), int(d)) for l, d in self.legs)
        labels = [l for l, _ in self.legs]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate leg labels in {labels}")
        self.data = np.ascontiguousarray(self.data, dtype=np.complex128)
        dims = tuple(d for _, d in self.legs)
        if self.data.shape != dims:
            if self.data.size != int(np.prod(dims, dtype=np.int64)):
                raise ValueError("data size does not match leg dims")
            self.data = self.data.reshape(dims)

    @property
    def labels(self):
        return tuple(l for l, _ in self.legs)

    @property
    def dims(self):
        return tuple(d for _, d in self.legs)

    def axis(self, label):
        for i, (l, _) in enumerate(self.legs):
            if l == label:
                return i
        raise KeyError(f"no leg {label!r} in {self.labels}")

    def dim(self, label):
        return self.legs[self.axis(label)][1]

    def copy(self):
        return DenseTensor(self.legs, self.data.copy())

    def norm(self):
        return float(np.linalg.norm(self.data))

    def relabeled(self, mapping):
        """New tensor with labels renamed through a dict (data shared)."""
        legs = tuple((mapping.get(l, l), d) for l, d in self.legs)
        return DenseTensor(legs, self.data)


def contract(a, b, pairs):
    """Contract matching legs of two tensors.

    pairs is a list of (label_in_a, label_in_b).  Result legs are the
    remaining legs of a followed by the remaining legs of b; dimension
    mismatches raise.
    """
    ax_a = [a.axis(la) for la, _ in pairs]
    ax_b = [b.axis(lb) for _, lb in pairs]
    for (la, lb), ia, ib in zip(pairs, ax_a, ax_b):
        if a.legs[ia][1] != b.legs[ib][1]:
            raise ValueError(
                f"dim mismatch {la}:{a.legs[ia][1]} vs {lb}:{b.legs[ib][1]}")
    data = np.tensordot(a.data, b.data, axes=(ax_a, ax_b))
    legs = tuple(l for i, l in enumerate(a.legs) if i not in ax_a) \
        + tuple(l for i, l in enumerate(b.legs) if i not in ax_b)
    out_labels = [l for l, _ in legs]
    if len(set(out_labels)) != len(out_labels):
        raise ValueError(f"label clash in contraction result: {out_labels}")
    return DenseTensor(legs, data)


@dataclass
class TruncationReport:
    """Outcome of a truncated factorization."""

    rank: int
    discarded_weight: float
    spectrum: np.ndarray  # all singular values, descending


@dataclass
class EntropyResult:
    """Von Neumann entropy (natural log) with its probability spectrum."""

    value: float
    spectrum: np.ndarray  # descending, normalized to 1


def entropy_from_weights(w):
    """EntropyResult from unnormalized nonnegative weights (e.g. s^2)."""
    w = np.clip(np.asarray(w, dtype=float), 0.0, None)
    total = float(w.sum())
    if total <= 0.0:
        raise ValueError("entropy of an empty spectrum")
    p = np.sort(w / total)[::-1]
    nz = p[p > 0.0]
    return EntropyResult(float(-np.sum(nz * np.log(nz))), p)


def _split_axes(t, left_labels):
    left_labels = list(left_labels)
    ax_left = [t.axis(l) for l in left_labels]
    ax_right = [i for i in range(len(t.legs)) if i not in ax_left]
    if not ax_left or not ax_right:
        raise ValueError("split needs a nonempty set of legs on both sides")
    perm = ax_left + ax_right
    dl = int(np.prod([t.legs[i][1] for i in ax_left], dtype=np.int64))
    dr = int(np.prod([t.legs[i][1] for i in ax_right], dtype=np.int64))
    mat = t.data.transpose(perm).reshape(dl, dr)
    legs_l = tuple(t.legs[i] for i in ax_left)
    legs_r = tuple(t.legs[i] for i in ax_right)
    return mat, legs_l, legs_r


def _robust_svd(mat):
    try:
        return np.linalg.svd(mat, full_matrices=False)
    except np.linalg.LinAlgError:
        # gesdd occasionally fails to converge; gesvd is slower but sturdier
        import scipy.linalg
        return scipy.linalg.svd(mat, full_matrices=False,
                                lapack_driver="gesvd")


def _truncation_rank(s, max_rank, cutoff, floor=1):
    # floor keeps growth lanes open: directions seeded at the noise level
    # carry weight ~ noise^depth and would die under any usable cutoff
    total = float(np.sum(s * s))
    keep = len(s)
    if cutoff > 0.0 and total > 0.0:
        w = s * s
        keep = int(np.sum(w >= cutoff * total))
        keep = max(keep, min(int(floor), len(s)))
    if max_rank is not None:
        keep = min(keep, int(max_rank))
    return max(keep, 1)


def svd_factor(t, left_labels, max_rank=None, cutoff=0.0, new_label="bond"):
    """Three-way SVD t = U * diag(s) * V with optional truncation.

    Returns (u, s, v, report): u has legs left_labels + (new_label,), v has
    (new_label,) + the remaining legs, s is the kept singular value vector.
    A singular value is discarded when its squared value falls below cutoff
    times the total squared weight, or when it exceeds max_rank.
    """
    mat, legs_l, legs_r = _split_axes(t, left_labels)
    u, s, vh = _robust_svd(mat)
    keep = _truncation_rank(s, max_rank, cutoff)
    discarded = float(np.sum(s[keep:] ** 2))
    report = TruncationReport(rank=keep, discarded_weight=discarded,
                              spectrum=s.copy())
    u_t = DenseTensor(legs_l + ((new_label, keep),),
                      u[:, :keep].reshape([d for _, d in legs_l] + [keep]))
    v_t = DenseTensor(((new_label, keep),) + legs_r,
                      vh[:keep].reshape([keep] + [d for _, d in legs_r]))
    return u_t, s[:keep].copy(), v_t, report


def svd_split(t, left_labels, max_rank=None, cutoff=0.0, new_label="bond"):
    """Two-tensor split with singular values absorbed into the left factor.

    Returns (left, right, report) with left = U * diag(s) and right = V; the
    contraction of left and right over new_label reconstructs t up to the
    discarded weight.
    """
    u, s, v, report = svd_factor(t, left_labels, max_rank=max_rank,
                                 cutoff=cutoff, new_label=new_label)
    left = DenseTensor(u.legs, u.data * s)
    return left, v, report


def qr_isometrize(t, kept_labels, new_label="bond"):
    """Split t = Q R with Q an isometry over kept_labels.

    Q carries kept_labels plus the new internal leg and satisfies
    Q^dagger Q = identity on that leg; R carries (new_label,) + the
    complementary legs.
    """
    mat, legs_l, legs_r = _split_axes(t, kept_labels)
    q, r = np.linalg.qr(mat)
    k = q.shape[1]
    q_t = DenseTensor(legs_l + ((new_label, k),),
                      q.reshape([d for _, d in legs_l] + [k]))
    r_t = DenseTensor(((new_label, k),) + legs_r,
                      r.reshape([k] + [d for _, d in legs_r]))
    return q_t, r_t


def lanczos_expm(matvec, v, coefficient, tol=1e-12, max_dim=30):
    """exp(coefficient * H) v for Hermitian H given only H*v products.

    Works on flat complex ndarrays.  The Krylov dimension grows until the
    standard a-posteriori residual estimate drops below tol (relative to
    |v|), with full re-orthogonalization against all previous basis vectors.
    Raises KrylovError if max_dim is reached without convergence; a happy
    breakdown (invariant subspace) converges exactly.
    """
    v = np.asarray(v, dtype=np.complex128).reshape(-1)
    beta0 = np.linalg.norm(v)
    if beta0 == 0.0:
        raise ValueError("cannot evolve a zero vector")
    basis = [v / beta0]
    alphas = []
    offs = []
    y = None
    for j in range(max_dim):
        w = matvec(basis[j])
        a = float(np.vdot(basis[j], w).real)
        alphas.append(a)
        w = w - a * basis[j]
        if j > 0:
            w = w - offs[-1] * basis[j - 1]
        # full re-orthogonalization; cheap next to the matvec
        for u in basis:
            w = w - np.vdot(u, w) * u
        b = float(np.linalg.norm(w))
        tri = np.diag(alphas).astype(np.complex128)
        if j > 0:
            idx = np.arange(j)
            tri[idx, idx + 1] = offs
            tri[idx + 1, idx] = offs
        evals, evecs = np.linalg.eigh(tri)
        phases = np.exp(coefficient * evals)
        y = evecs @ (phases * evecs[0].conj())
        if b <= 1e-14 * max(1.0, abs(a)):
            break  # invariant subspace, result exact
        err = abs(b * y[-1])
        if err <= tol:
            break
        if j == max_dim - 1:
            raise KrylovError(
                f"no convergence at dimension {max_dim} (residual {err:.3e})")
        offs.append(b)
        basis.append(w / b)
    out = np.zeros_like(v)
    for c, u in zip(y, basis):
        out += c * u
    return beta0 * out


def krylov_expm_apply(apply_h, v, coefficient, tol=1e-12, max_dim=30):
    """DenseTensor front end to lanczos_expm.

    apply_h maps a DenseTensor to a DenseTensor on the same legs and must be
    Hermitian as a flat operator for the error control to hold.
    """
    legs = v.legs
    shape = v.data.shape

    def matvec(flat):
        t = DenseTensor(legs, flat.reshape(shape))
        return np.ascontiguousarray(apply_h(t).data).reshape(-1)

    out = lanczos_expm(matvec, v.data.reshape(-1), coefficient,
                       tol=tol, max_dim=max_dim)
    return DenseTensor(legs, out.reshape(shape))


def pad_with_noise(t, leg, new_dim, amplitude, seed=0):
    """Grow one leg to new_dim, filling the new slice with tiny noise.

    New entries are pseudorandom complex numbers of magnitude at most
    amplitude, deterministic for a fixed seed (an int or a Generator).
    """
    ax = t.axis(leg)
    old = t.legs[ax][1]
    if new_dim < old:
        raise ValueError(f"cannot shrink leg {leg!r} from {old} to {new_dim}")
    if new_dim == old:
        return t.copy()
    rng = seed if isinstance(seed, np.random.Generator) \
        else np.random.default_rng(seed)
    shape = list(t.data.shape)
    shape[ax] = new_dim - old
    r = amplitude * rng.random(shape)
    phi = 2.0 * np.pi * rng.random(shape)
    block = r * np.exp(1j * phi)
    data = np.concatenate([t.data, block], axis=ax)
    legs = tuple((l, new_dim if i == ax else d)
                 for i, (l, d) in enumerate(t.legs))
    return DenseTensor(legs, data)


_MAGIC = b"TTNQT1"


def write_tensor(fp, t):
    """Binary tensor record: header (endianness, legs) + raw complex data."""
    fp.write(_MAGIC)
    fp.write(b"<")  # written little-endian, tag kept for readers
    fp.write(struct.pack("<I", len(t.legs)))
    for label, dim in t.legs:
        enc = label.encode("utf-8")
        fp.write(struct.pack("<H", len(enc)))
        fp.write(enc)
        fp.write(struct.pack("<Q", dim))
    fp.write(np.ascontiguousarray(t.data, dtype="<c16").tobytes())


def read_tensor(fp):
    """Inverse of write_tensor."""
    magic = fp.read(len(_MAGIC))
    if magic != _MAGIC:
        raise ValueError(f"bad tensor magic {magic!r}")
    endian = fp.read(1).decode()
    if endian not in "<>":
        raise ValueError(f"bad endianness tag {endian!r}")
    (nlegs,) = struct.unpack("<I", fp.read(4))
    legs = []
    for _ in range(nlegs):
        (ll,) = struct.unpack("<H", fp.read(2))
        label = fp.read(ll).decode("utf-8")
        (dim,) = struct.unpack("<Q", fp.read(8))
        legs.append((label, dim))
    count = int(np.prod([d for _, d in legs], dtype=np.int64))
    raw = fp.read(16 * count)
    if len(raw) != 16 * count:
        raise ValueError("truncated tensor data")
    data = np.frombuffer(raw, dtype=endian + "c16").astype(np.complex128)
    return DenseTensor(tuple(legs), data.reshape([d for _, d in legs]))


def tensor_to_bytes(t):
    buf = io.BytesIO()
    write_tensor(buf, t)
    return buf.getvalue()


def tensor_from_bytes(blob):
    return read_tensor(io.BytesIO(blob))
