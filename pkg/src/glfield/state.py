"""Field configurations on a box with pinned boundary values."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, NumericalError
from .lattice import LatticeDomain


@dataclass
class FieldState:
    """A configuration phi on D_N stored as a (2N+1, 2N+1) array.

    ``pinned`` marks sites whose values never change (by default the outer
    ring, i.e. the Dirichlet boundary).  ``seed`` is the counter-RNG key of the
    chain that owns the state and ``sweep_count`` / ``move_count`` index the
    next random draws, so a state plus its counters fully determines its future.
    """

    domain: LatticeDomain
    values: np.ndarray
    pinned: np.ndarray | None = None
    seed: int = 0
    sweep_count: int = 0
    move_count: int = 0
    lineage: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.shape != self.domain.shape:
            raise InputError(f"field shape {v.shape} does not match domain {self.domain.shape}")
        self.values = v
        if self.pinned is None:
            self.pinned = np.asarray(self.domain.boundary_mask).copy()
        else:
            self.pinned = np.asarray(self.pinned, dtype=bool)
            if not self.pinned[self.domain.boundary_mask].all():
                raise InputError("the outer ring of the box must be pinned")

    @classmethod
    def zeros(cls, domain, seed=0, boundary=None, **lineage):
        v = np.zeros(domain.shape)
        st = cls(domain, v, seed=int(seed), lineage=dict(lineage))
        if boundary is not None:
            st.set_boundary(boundary)
        return st

    def set_boundary(self, boundary):
        """Pin the outer ring to ``boundary`` (scalar or a full-size array)."""
        b = np.broadcast_to(np.asarray(boundary, dtype=float), self.domain.shape)
        m = self.domain.boundary_mask
        self.values[m] = b[m]

    @property
    def movable(self) -> np.ndarray:
        return ~self.pinned

    def __getitem__(self, x):
        return self.values[self.domain.grid_pos(x)]

    def check_finite(self):
        bad = ~np.isfinite(self.values)
        if bad.any():
            i, j = np.argwhere(bad)[0]
            site = (int(i) - self.domain.N, int(j) - self.domain.N)
            raise NumericalError(f"non-finite field value at site {site}", site=site)

    def copy(self) -> "FieldState":
        return FieldState(self.domain, self.values.copy(), self.pinned.copy(), self.seed,
                          self.sweep_count, self.move_count, dict(self.lineage))
