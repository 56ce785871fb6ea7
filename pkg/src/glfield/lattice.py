"""Square boxes D_N = [-N, N]^2 on Z^2, l1-balls inside them, and site indexing.

Sites are integer pairs (x1, x2).  The dense index is row-major in (x1, x2):
``index = (x1 + N) * (2N + 1) + (x2 + N)``, so a field stored as a
``(2N+1, 2N+1)`` array ``a`` has ``a[x1 + N, x2 + N] = phi(x1, x2)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import GeometryError, SizeError

MAX_HALF_WIDTH = 4096
NEIGHBOR_OFFSETS = ((1, 0), (-1, 0), (0, 1), (0, -1))


@dataclass(frozen=True)
class LatticeDomain:
    N: int

    def __post_init__(self):
        if not isinstance(self.N, (int, np.integer)) or isinstance(self.N, bool):
            raise SizeError(f"half width must be an integer, got {self.N!r}")
        if not 1 <= self.N <= MAX_HALF_WIDTH:
            raise SizeError(f"half width N={self.N} outside [1, {MAX_HALF_WIDTH}]")
        object.__setattr__(self, "N", int(self.N))

    @property
    def side(self) -> int:
        return 2 * self.N + 1

    @property
    def shape(self) -> tuple[int, int]:
        return (self.side, self.side)

    @property
    def n_sites(self) -> int:
        return self.side * self.side

    @property
    def center(self) -> tuple[int, int]:
        return (0, 0)

    def contains(self, x) -> bool:
        return abs(x[0]) <= self.N and abs(x[1]) <= self.N

    def _check(self, x):
        if not self.contains(x):
            raise GeometryError(f"site {tuple(x)} is outside D_{self.N}")

    def index(self, x) -> int:
        self._check(x)
        return (int(x[0]) + self.N) * self.side + (int(x[1]) + self.N)

    def site(self, idx: int) -> tuple[int, int]:
        if not 0 <= idx < self.n_sites:
            raise GeometryError(f"index {idx} out of range")
        i, j = divmod(int(idx), self.side)
        return (i - self.N, j - self.N)

    def grid_pos(self, x) -> tuple[int, int]:
        """Array position of site x in a (side, side) field."""
        self._check(x)
        return (int(x[0]) + self.N, int(x[1]) + self.N)

    def is_boundary(self, x) -> bool:
        self._check(x)
        return abs(x[0]) == self.N or abs(x[1]) == self.N

    def neighbors(self, x) -> list[tuple[int, int]]:
        """Neighbors of x that lie in D_N."""
        self._check(x)
        out = []
        for dx, dy in NEIGHBOR_OFFSETS:
            y = (x[0] + dx, x[1] + dy)
            if self.contains(y):
                out.append(y)
        return out

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        m[0, :] = m[-1, :] = m[:, 0] = m[:, -1] = True
        m.flags.writeable = False
        return m

    @cached_property
    def boundary_indices(self) -> np.ndarray:
        out = np.flatnonzero(self.boundary_mask.ravel())
        out.flags.writeable = False
        return out

    @cached_property
    def interior_indices(self) -> np.ndarray:
        out = np.flatnonzero(~self.boundary_mask.ravel())
        out.flags.writeable = False
        return out

    def coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        """Arrays X1, X2 of shape (side, side) holding site coordinates."""
        r = np.arange(-self.N, self.N + 1)
        return np.meshgrid(r, r, indexing="ij")

    def as_site_set(self) -> "SiteSet":
        return SiteSet.from_window(self, (0, 0), np.ones(self.shape, dtype=bool), shape="box")

    def sub_box(self, center, half_width: int) -> "SiteSet":
        """The box center + [-n, n]^2 as a SiteSet; it must lie inside D_N."""
        n = int(half_width)
        lo = (center[0] - n, center[1] - n)
        hi = (center[0] + n, center[1] + n)
        if n < 1 or not (self.contains(lo) and self.contains(hi)):
            raise GeometryError(f"box of half width {n} at {tuple(center)} leaves D_{self.N}")
        pos = self.grid_pos(lo)
        return SiteSet.from_window(self, pos, np.ones((2 * n + 1, 2 * n + 1), dtype=bool), shape="box")


def build_box(N: int) -> LatticeDomain:
    return LatticeDomain(N)


@dataclass(frozen=True, eq=False)
class SiteSet:
    """A finite set of sites of a domain, stored as a boolean window.

    ``origin`` is the array position of ``mask[0, 0]`` in the domain grid.
    Boundary members are those with a neighbor outside the set (sites outside
    the domain count as outside the set).
    """

    domain: LatticeDomain
    origin: tuple[int, int]
    mask: np.ndarray
    shape_name: str = "custom"
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_window(cls, domain, origin, mask, shape="custom", **meta):
        mask = np.ascontiguousarray(mask, dtype=bool)
        i0, j0 = origin
        if i0 < 0 or j0 < 0 or i0 + mask.shape[0] > domain.side or j0 + mask.shape[1] > domain.side:
            raise GeometryError("site set window leaves the domain")
        mask.flags.writeable = False
        return cls(domain, (int(i0), int(j0)), mask, shape, dict(meta))

    @classmethod
    def from_indices(cls, domain, indices):
        idx = np.asarray(indices, dtype=np.int64)
        if idx.size == 0:
            raise GeometryError("empty site set")
        if idx.min() < 0 or idx.max() >= domain.n_sites:
            raise GeometryError("site index out of range")
        if np.unique(idx).size != idx.size:
            raise GeometryError("duplicate site indices")
        i, j = np.divmod(idx, domain.side)
        i0, j0 = int(i.min()), int(j.min())
        mask = np.zeros((int(i.max()) - i0 + 1, int(j.max()) - j0 + 1), dtype=bool)
        mask[i - i0, j - j0] = True
        return cls.from_window(domain, (i0, j0), mask)

    @cached_property
    def boundary_window(self) -> np.ndarray:
        """Boolean window marking boundary members."""
        p = np.pad(self.mask, 1, constant_values=False)
        inner = p[2:, 1:-1] & p[:-2, 1:-1] & p[1:-1, 2:] & p[1:-1, :-2]
        i0, j0 = self.origin
        # sites on the edge of D_N have a neighbor outside the domain
        h, w = self.mask.shape
        S = self.domain.side
        edge = np.zeros_like(self.mask)
        if i0 == 0:
            edge[0, :] = True
        if j0 == 0:
            edge[:, 0] = True
        if i0 + h == S:
            edge[-1, :] = True
        if j0 + w == S:
            edge[:, -1] = True
        out = self.mask & (~inner | edge)
        out.flags.writeable = False
        return out

    def _window_to_indices(self, win) -> np.ndarray:
        a, b = np.nonzero(win)
        out = (a + self.origin[0]) * self.domain.side + (b + self.origin[1])
        out = out.astype(np.int64)
        out.flags.writeable = False
        return out

    @cached_property
    def indices(self) -> np.ndarray:
        return self._window_to_indices(self.mask)

    @cached_property
    def boundary_indices(self) -> np.ndarray:
        return self._window_to_indices(self.boundary_window)

    @cached_property
    def interior_indices(self) -> np.ndarray:
        return self._window_to_indices(self.mask & ~self.boundary_window)

    @property
    def size(self) -> int:
        return int(self.mask.sum())

    def __len__(self):
        return self.size

    def sites(self, which: str = "all") -> list[tuple[int, int]]:
        idx = {"all": self.indices, "boundary": self.boundary_indices,
               "interior": self.interior_indices}[which]
        return [self.domain.site(k) for k in idx]

    def contains(self, x) -> bool:
        if not self.domain.contains(x):
            return False
        i, j = self.domain.grid_pos(x)
        i -= self.origin[0]
        j -= self.origin[1]
        h, w = self.mask.shape
        return 0 <= i < h and 0 <= j < w and bool(self.mask[i, j])

    def is_boundary(self, x) -> bool:
        if not self.contains(x):
            raise GeometryError(f"site {tuple(x)} is not in the set")
        i, j = self.domain.grid_pos(x)
        return bool(self.boundary_window[i - self.origin[0], j - self.origin[1]])

    def full_mask(self) -> np.ndarray:
        """Membership as a (side, side) boolean array over the whole domain."""
        m = np.zeros(self.domain.shape, dtype=bool)
        h, w = self.mask.shape
        i0, j0 = self.origin
        m[i0:i0 + h, j0:j0 + w] = self.mask
        return m

    def issubset(self, other: "SiteSet") -> bool:
        return bool(np.isin(self.indices, other.indices, assume_unique=True).all())


def l1_radius_steps(R: float) -> int:
    """Largest integer n with n < R, i.e. the l1 extent of B_R."""
    if not R > 0:
        raise GeometryError(f"radius must be positive, got {R}")
    return math.ceil(R) - 1


def l1_ball(domain: LatticeDomain, center, R: float) -> SiteSet:
    """B_R(v) = {x : |x1 - v1| + |x2 - v2| < R}."""
    n = l1_radius_steps(R)
    v = (int(center[0]), int(center[1]))
    if not domain.contains(v) or max(abs(v[0]), abs(v[1])) + n > domain.N:
        raise GeometryError(f"ball of radius {R} at {v} is not contained in D_{domain.N}")
    r = np.arange(-n, n + 1)
    mask = (np.abs(r)[:, None] + np.abs(r)[None, :]) <= n
    i, j = domain.grid_pos(v)
    return SiteSet.from_window(domain, (i - n, j - n), mask, shape="l1_ball",
                               center=v, radius=float(R), steps=n)


def dist_to_boundary(domain: LatticeDomain, x) -> int:
    """l-infinity distance from x to the outer ring of D_N."""
    domain._check(x)
    return min(domain.N - abs(int(x[0])), domain.N - abs(int(x[1])))
