"""Square-lattice geometry and the 2D-to-1D site ordering used by the tree network.

Sites are indexed row-major: site = row * cols + col.  The 1D ordering along
which sites are handed to the tree is a Hilbert curve whenever the shape
allows one (squares with power-of-two side, 2:1 rectangles with power-of-two
sides), otherwise a boustrophedon snake with a fallback flag set.
"""

from dataclasses import dataclass, field

import numpy as np

PERIODIC = "periodic"
OPEN = "open"


@dataclass(frozen=True)
class Lattice:
    """Rectangular spin lattice with per-axis boundary conditions.

    row_boundary controls wrapping of the row index (site (rows-1, c) bonds to
    (0, c)), col_boundary the column index.
    """

    rows: int
    cols: int
    row_boundary: str = PERIODIC
    col_boundary: str = PERIODIC

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("lattice sides must be positive")
        for b in (self.row_boundary, self.col_boundary):
            if b not in (PERIODIC, OPEN):
                raise ValueError(f"unknown boundary {b!r}")

    @property
    def n_sites(self):
        return self.rows * self.cols

    def site(self, row, col):
        """Row-major site index of (row, col)."""
        if not (0 <= row < self.rows and 0 <= col < self.cols):
            raise ValueError(f"({row}, {col}) outside {self.rows}x{self.cols}")
        return row * self.cols + col

    def coords(self, site):
        """Inverse of site(): (row, col) of a row-major index."""
        if not 0 <= site < self.n_sites:
            raise ValueError(f"site {site} outside lattice")
        return divmod(site, self.cols)


def _is_pow2(n):
    return n >= 1 and (n & (n - 1)) == 0


def hilbert_d_to_xy(order, d):
    """Position along the Hilbert curve of side 2**order -> (x, y).

    Classic iterated quadrant-rotation construction.  d = 0 maps to (0, 0),
    d = 4**order - 1 maps to (2**order - 1, 0).
    """
    n = 1 << order
    if not 0 <= d < n * n:
        raise ValueError(f"curve index {d} outside side-{n} curve")
    x = y = 0
    t = d
    s = 1
    while s < n:
        rx = 1 & (t // 2)
        ry = 1 & (t ^ rx)
        if ry == 0:
            if rx == 1:
                x = s - 1 - x
                y = s - 1 - y
            x, y = y, x
        x += s * rx
        y += s * ry
        t //= 4
        s *= 2
    return x, y


def hilbert_xy_to_d(order, x, y):
    """Inverse of hilbert_d_to_xy: (x, y) -> position along the curve."""
    n = 1 << order
    if not (0 <= x < n and 0 <= y < n):
        raise ValueError(f"({x}, {y}) outside side-{n} curve")
    d = 0
    s = n // 2
    while s > 0:
        rx = 1 if (x & s) > 0 else 0
        ry = 1 if (y & s) > 0 else 0
        d += s * s * ((3 * rx) ^ ry)
        if ry == 0:
            if rx == 1:
                x = s - 1 - x
                y = s - 1 - y
            x, y = y, x
        s //= 2
    return d


@dataclass
class SiteMapping:
    """Bijection between row-major site indices and 1D linear positions.

    order[k] is the site occupying linear position k; inverse[site] is the
    linear position of a site.  scheme is one of "hilbert", "hilbert-tiles",
    "snake"; fallback marks shapes where no Hilbert construction applies.
    """

    lattice: Lattice
    order: np.ndarray
    scheme: str
    fallback: bool = False
    inverse: np.ndarray = field(init=False)

    def __post_init__(self):
        self.order = np.asarray(self.order, dtype=np.int64)
        if sorted(self.order.tolist()) != list(range(self.lattice.n_sites)):
            raise ValueError("mapping is not a permutation of the sites")
        inv = np.empty_like(self.order)
        inv[self.order] = np.arange(self.order.size)
        self.inverse = inv

    @property
    def n_sites(self):
        return self.order.size

    def position(self, site):
        return int(self.inverse[site])

    def site_at(self, position):
        return int(self.order[position])

    def dump(self):
        """Text table with one 'row col linear' line per site, row-major."""
        lat = self.lattice
        lines = []
        for s in range(lat.n_sites):
            r, c = lat.coords(s)
            lines.append(f"{r} {c} {self.position(s)}")
        return "\n".join(lines) + "\n"


def _hilbert_square_order(rows, cols, transpose=False, r0=0, c0=0):
    """Row-major site list of one Hilbert tile placed at offset (r0, c0).

    With transpose=False the curve runs (0,0) -> (rows-1, 0); transposed it
    runs (0,0) -> (0, cols-1).  cols == rows == power of two.
    """
    order = int(np.log2(rows))
    out = []
    for d in range(rows * rows):
        x, y = hilbert_d_to_xy(order, d)
        r, c = (y, x) if transpose else (x, y)
        out.append((r0 + r, c0 + c))
    return out


def build_mapping(lat):
    """1D ordering for a lattice: Hilbert when possible, else snake.

    Squares with power-of-two side get a single Hilbert curve.  2:1
    rectangles with power-of-two sides get two square tiles traversed in
    sequence; the tile orientations are chosen so the exit corner of the
    first tile is lattice-adjacent to the entry corner of the second.
    Everything else falls back to a snake with the fallback flag set.
    """
    rows, cols = lat.rows, lat.cols
    coords = None
    scheme = "snake"
    fallback = False
    if rows == cols and _is_pow2(rows):
        coords = _hilbert_square_order(rows, cols)
        scheme = "hilbert"
    elif rows == 2 * cols and _is_pow2(cols):
        # stacked vertically; the default orientation exits at (side-1, 0)
        coords = _hilbert_square_order(cols, cols)
        coords += _hilbert_square_order(cols, cols, r0=cols)
        scheme = "hilbert-tiles"
    elif cols == 2 * rows and _is_pow2(rows):
        # side by side; transposed tiles exit at (0, side-1)
        coords = _hilbert_square_order(rows, rows, transpose=True)
        coords += _hilbert_square_order(rows, rows, transpose=True, c0=rows)
        scheme = "hilbert-tiles"
    else:
        fallback = True
        coords = []
        for r in range(rows):
            cs = range(cols) if r % 2 == 0 else range(cols - 1, -1, -1)
            coords += [(r, c) for c in cs]
    order = [lat.site(r, c) for r, c in coords]
    return SiteMapping(lattice=lat, order=np.array(order), scheme=scheme,
                       fallback=fallback)


def neighbor_pairs(lat):
    """Nearest-neighbor bonds as sorted (site, site) pairs, deduplicated.

    Wrap bonds that coincide with an open-style bond (rings of length 2) are
    kept once; rings of length 1 produce no bond.  Periodic N x N with
    N >= 3 yields 2 N^2 pairs.
    """
    pairs = set()
    for r in range(lat.rows):
        for c in range(lat.cols):
            s = lat.site(r, c)
            # down neighbor
            if r + 1 < lat.rows:
                pairs.add(tuple(sorted((s, lat.site(r + 1, c)))))
            elif lat.row_boundary == PERIODIC and lat.rows > 1:
                pairs.add(tuple(sorted((s, lat.site(0, c)))))
            # right neighbor
            if c + 1 < lat.cols:
                pairs.add(tuple(sorted((s, lat.site(r, c + 1)))))
            elif lat.col_boundary == PERIODIC and lat.cols > 1:
                pairs.add(tuple(sorted((s, lat.site(r, 0)))))
    return sorted(pairs)
