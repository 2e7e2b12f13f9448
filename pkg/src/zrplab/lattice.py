"""Torus geometry, particle configurations, and periodic block averages.

Sites of the d-dimensional discrete torus of side N are indexed row-major
over {0..N-1}^d with periodic wrap.  Configurations store one nonnegative
occupation number per site plus a cached total.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import BlockTooLargeError, EmptySiteError, SnapshotFormatError

__all__ = [
    "Torus",
    "Configuration",
    "move_particle",
    "translate",
    "block_average",
    "block_average_field",
    "block_radius_for_gap_bound",
    "block_radius_for_lsi_bound",
    "save_snapshot",
    "load_snapshot",
    "save_snapshot_csv",
    "load_snapshot_csv",
]


@dataclass(frozen=True)
class Torus:
    """The discrete torus {0..N-1}^d with row-major site indexing."""

    d: int
    N: int

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimension must be >= 1")
        if self.N < 2:
            raise ValueError("torus side must be >= 2")

    @property
    def n_sites(self) -> int:
        return self.N**self.d

    @property
    def shape(self) -> tuple:
        return (self.N,) * self.d

    def site_index(self, coords) -> int:
        idx = 0
        for c in coords:
            idx = idx * self.N + (int(c) % self.N)
        return idx

    def site_coords(self, index: int) -> tuple:
        coords = []
        for _ in range(self.d):
            coords.append(index % self.N)
            index //= self.N
        return tuple(reversed(coords))

    def wrap(self, coords) -> tuple:
        return tuple(int(c) % self.N for c in coords)

    def displacement_table(self, disp) -> np.ndarray:
        """dest[x] = index of wrap(x + disp), for every site x."""
        if len(disp) != self.d:
            raise ValueError("displacement dimension mismatch")
        idx = np.arange(self.n_sites, dtype=np.int64).reshape(self.shape)
        shifted = np.roll(idx, shift=tuple(-int(c) for c in disp), axis=tuple(range(self.d)))
        return shifted.reshape(-1)

    def lattice_points(self) -> np.ndarray:
        """(n_sites, d) array of site coordinates in row-major order."""
        grids = np.meshgrid(*[np.arange(self.N)] * self.d, indexing="ij")
        return np.stack([g.reshape(-1) for g in grids], axis=1)


class Configuration:
    """Occupation numbers on a torus with a cached particle total.

    Value-like data: snapshots may be copied and shared freely; a
    configuration being mutated belongs to exactly one owner.
    """

    __slots__ = ("torus", "occupancies", "_total")

    def __init__(self, torus: Torus, occupancies):
        occ = np.asarray(occupancies, dtype=np.int64).reshape(-1)
        if occ.size != torus.n_sites:
            raise ValueError(f"expected {torus.n_sites} occupancies, got {occ.size}")
        if np.any(occ < 0):
            raise ValueError("occupancies must be nonnegative")
        self.torus = torus
        self.occupancies = occ
        self._total = int(occ.sum())

    @classmethod
    def constant(cls, torus: Torus, k: int) -> "Configuration":
        return cls(torus, np.full(torus.n_sites, int(k), dtype=np.int64))

    @classmethod
    def empty(cls, torus: Torus) -> "Configuration":
        return cls.constant(torus, 0)

    @property
    def total(self) -> int:
        return self._total

    def copy(self) -> "Configuration":
        return Configuration(self.torus, self.occupancies.copy())

    def as_array(self) -> np.ndarray:
        return self.occupancies.reshape(self.torus.shape)

    def _site(self, x) -> int:
        return x if isinstance(x, (int, np.integer)) else self.torus.site_index(x)

    def __getitem__(self, x) -> int:
        return int(self.occupancies[self._site(x)])

    def __eq__(self, other):
        return (
            isinstance(other, Configuration)
            and self.torus == other.torus
            and np.array_equal(self.occupancies, other.occupancies)
        )

    def __repr__(self):
        return f"Configuration(d={self.torus.d}, N={self.torus.N}, total={self._total})"

    def move(self, x, y) -> None:
        """In-place move of one particle from x to y (the update eta^{x,y})."""
        xi, yi = self._site(x), self._site(y)
        if self.occupancies[xi] < 1:
            raise EmptySiteError(f"site {x} is empty")
        if xi == yi:
            return
        self.occupancies[xi] -= 1
        self.occupancies[yi] += 1


def move_particle(eta: Configuration, x, y) -> Configuration:
    """eta^{x,y}: one particle moved from x to y, all other sites unchanged."""
    out = eta.copy()
    out.move(x, y)
    return out


def translate(eta: Configuration, y) -> Configuration:
    """tau_y eta with (tau_y eta)(x) = eta(x + y); bijective relabelling."""
    shift = tuple(-int(c) for c in y)
    rolled = np.roll(eta.as_array(), shift=shift, axis=tuple(range(eta.torus.d)))
    return Configuration(eta.torus, rolled.reshape(-1))


def _window_sum_axis(a: np.ndarray, ell: int, axis: int) -> np.ndarray:
    """Periodic moving-window sum of width 2*ell+1 along one axis."""
    n = a.shape[axis]
    lo = np.take(a, range(n - ell, n), axis=axis)
    hi = np.take(a, range(0, ell), axis=axis)
    padded = np.concatenate([lo, a, hi], axis=axis)
    c = np.cumsum(padded, axis=axis)
    w = 2 * ell + 1
    upper = np.take(c, range(w - 1, w - 1 + n), axis=axis)
    lower = np.take(c, range(0, n - 1), axis=axis)
    first = np.take(upper, [0], axis=axis)
    return np.concatenate([first, np.take(upper, range(1, n), axis=axis) - lower], axis=axis)


def block_average_field(field, ell: int, torus: Torus) -> np.ndarray:
    """Periodic block averages over {y : |y-x|_inf <= ell} for every centre x.

    Integer fields are summed in int64 (exact); float fields in float64.
    Returns a flat array in site order, denominator (2*ell+1)^d.
    """
    if ell < 0:
        raise ValueError("block radius must be >= 0")
    if 2 * ell + 1 > torus.N:
        raise BlockTooLargeError(f"block diameter {2 * ell + 1} exceeds torus side {torus.N}")
    a = np.asarray(field).reshape(torus.shape)
    if ell == 0:
        return a.reshape(-1).astype(np.float64)
    for axis in range(torus.d):
        a = _window_sum_axis(a, ell, axis)
    return a.reshape(-1) / float((2 * ell + 1) ** torus.d)


def block_average(field, x, ell: int, torus: Torus) -> float:
    """Block average at one centre; direct summation over the cube."""
    if 2 * ell + 1 > torus.N:
        raise BlockTooLargeError(f"block diameter {2 * ell + 1} exceeds torus side {torus.N}")
    flat = np.asarray(field).reshape(-1)
    centre = x if isinstance(x, (int, np.integer)) else torus.site_index(x)
    coords = torus.site_coords(int(centre))
    total = 0.0
    offsets = np.stack(
        np.meshgrid(*[np.arange(-ell, ell + 1)] * torus.d, indexing="ij"), axis=-1
    ).reshape(-1, torus.d)
    for off in offsets:
        total += flat[torus.site_index([c + o for c, o in zip(coords, off)])]
    return total / float((2 * ell + 1) ** torus.d)


def block_radius_for_gap_bound(N: int, alpha: float, d: int, c: float = 0.5) -> int:
    """Mesoscopic radius c * N^{(alpha + d/2)/(d+1)} used with gap estimates."""
    return max(1, int(c * N ** ((alpha + d / 2.0) / (d + 1.0))))


def block_radius_for_lsi_bound(N: int, alpha: float, d: int) -> int:
    """Mesoscopic radius N^{(alpha+1)/(d+1)} used with log-Sobolev estimates."""
    return max(1, int(N ** ((alpha + 1.0) / (d + 1.0))))


# ------------------------------------------------------------- snapshot files
#
# Binary layout (all little-endian): magic b"ZRPSNAP1", uint32 d, uint64 N,
# float64 time, then N^d int64 occupancies in row-major site order.

_MAGIC = b"ZRPSNAP1"


def save_snapshot(path, eta: Configuration, time: float) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQd", eta.torus.d, eta.torus.N, float(time)))
        fh.write(eta.occupancies.astype("<i8").tobytes())


def load_snapshot(path):
    """Returns (Configuration, time)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise SnapshotFormatError(f"bad magic {magic!r}")
        d, n, time = struct.unpack("<IQd", fh.read(4 + 8 + 8))
        torus = Torus(d, int(n))
        occ = np.frombuffer(fh.read(8 * torus.n_sites), dtype="<i8")
        if occ.size != torus.n_sites:
            raise SnapshotFormatError("truncated occupancy block")
    return Configuration(torus, occ.astype(np.int64)), time


def save_snapshot_csv(path, eta: Configuration, time: float) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# d={eta.torus.d} N={eta.torus.N} time={time!r}\n")
        fh.write("site,occupancy\n")
        for i, k in enumerate(eta.occupancies):
            fh.write(f"{i},{int(k)}\n")


def load_snapshot_csv(path):
    """Returns (Configuration, time)."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith("# d="):
            raise SnapshotFormatError("missing metadata header")
        meta = dict(part.split("=") for part in header[2:].split())
        torus = Torus(int(meta["d"]), int(meta["N"]))
        time = float(meta["time"])
        if fh.readline().strip() != "site,occupancy":
            raise SnapshotFormatError("missing column header")
        occ = np.zeros(torus.n_sites, dtype=np.int64)
        for line in fh:
            site, k = line.strip().split(",")
            occ[int(site)] = int(k)
    return Configuration(torus, occ), time
