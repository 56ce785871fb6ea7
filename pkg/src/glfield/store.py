"""Ensembles of fields: in-memory, on-disk (JSON header + raw float64 payload),
and lazily regenerated exact Gaussian ensembles.

On-disk format for ``<stem>``:
  ``<stem>.json``  header: format version, N, potential {name, params}, config,
                   seeds, diagnostics, traces, payload file name, shape,
                   dtype ``<f8`` and the payload's sha256.
  ``<stem>.f64``   little-endian float64, row-major per field, fields concatenated.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import IntegrityError, InputError
from .lattice import LatticeDomain

FORMAT_VERSION = 1
_BLOCK = 64


def sha256_file(path, chunk=1 << 22) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        while True:
            b = fh.read(chunk)
            if not b:
                break
            h.update(b)
    return h.hexdigest()


class Ensemble:
    """Common interface: ``domain``, ``n_samples``, ``iter_batches``, ``ess``."""

    N: int
    exact: bool = False

    @property
    def domain(self) -> LatticeDomain:
        return LatticeDomain(self.N)

    def iter_batches(self, batch: int = 64):
        raise NotImplementedError

    def iter_fields(self):
        for b in self.iter_batches():
            yield from b

    def ess(self) -> float | None:
        raise NotImplementedError

    def map_batches(self, fn, batch: int = 64) -> np.ndarray:
        """Concatenate fn(batch) over all batches, in sample order."""
        return np.concatenate([np.asarray(fn(b)) for b in self.iter_batches(batch)])

    def describe(self) -> dict:
        raise NotImplementedError


@dataclass
class EnsembleStore(Ensemble):
    N: int
    potential: dict
    fields: np.ndarray
    config: dict = field(default_factory=dict)
    seeds: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    traces: dict = field(default_factory=dict)
    path: str | None = None

    def __post_init__(self):
        side = 2 * self.N + 1
        if self.fields.ndim != 3 or self.fields.shape[1:] != (side, side):
            raise InputError(f"fields must have shape (n, {side}, {side}), got {self.fields.shape}")

    @property
    def exact(self) -> bool:
        return self.config.get("sampler") == "exact"

    @property
    def n_samples(self) -> int:
        return int(self.fields.shape[0])

    def __len__(self):
        return self.n_samples

    def iter_batches(self, batch: int = 64):
        for s in range(0, self.n_samples, batch):
            yield np.asarray(self.fields[s:s + batch])

    def ess(self) -> float | None:
        if self.exact:
            return float(self.n_samples)
        v = self.diagnostics.get("ess_center"), self.diagnostics.get("ess_max")
        v = [x for x in v if x is not None]
        return min(v) if v else None

    def header(self) -> dict:
        return {"format": "glfield-ensemble", "version": FORMAT_VERSION, "N": self.N,
                "potential": self.potential, "config": self.config, "seeds": [int(s) for s in self.seeds],
                "diagnostics": self.diagnostics, "traces": self.traces,
                "shape": list(self.fields.shape), "dtype": "<f8"}

    def describe(self) -> dict:
        return {"N": self.N, "n_samples": self.n_samples, "potential": self.potential,
                "exact": self.exact, "path": self.path}

    def save(self, stem) -> tuple[Path, Path]:
        stem = Path(stem)
        stem.parent.mkdir(parents=True, exist_ok=True)
        payload = stem.with_suffix(".f64")
        head = stem.with_suffix(".json")
        with open(payload, "wb") as fh:
            for b in self.iter_batches(256):
                fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
        h = self.header()
        h["payload"] = payload.name
        h["sha256"] = sha256_file(payload)
        head.write_text(json.dumps(h, indent=1, sort_keys=True))
        self.path = str(head)
        return head, payload

    @classmethod
    def load(cls, path, mmap: bool = True, verify: bool = True) -> "EnsembleStore":
        head = Path(path)
        if head.suffix != ".json":
            head = head.with_suffix(".json")
        try:
            h = json.loads(head.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise IntegrityError(f"cannot read ensemble header {head}: {exc}") from None
        if h.get("format") != "glfield-ensemble":
            raise IntegrityError(f"{head} is not an ensemble header")
        payload = head.parent / h["payload"]
        shape = tuple(h["shape"])
        want = int(np.prod(shape)) * 8
        if not payload.exists() or payload.stat().st_size != want:
            raise IntegrityError(f"payload {payload} is missing or has the wrong size")
        if verify and sha256_file(payload) != h["sha256"]:
            raise IntegrityError(f"payload {payload} does not match its recorded hash")
        if mmap:
            fields = np.memmap(payload, dtype="<f8", mode="r", shape=shape)
        else:
            fields = np.fromfile(payload, dtype="<f8").reshape(shape)
        return cls(N=h["N"], potential=h["potential"], fields=fields, config=h["config"],
                   seeds=h["seeds"], diagnostics=h["diagnostics"], traces=h.get("traces", {}),
                   path=str(head))


class ExactEnsemble(Ensemble):
    """Exact zero-boundary GFF draws on D_N, regenerated on demand.

    Draw ``k`` belongs to block ``k // 64`` whose normals come from
    ``default_rng([seed, block])``; any batch size yields the same fields.
    """

    exact = True

    def __init__(self, N: int, n_samples: int, seed: int = 0):
        from .laplace import DirichletOperator
        self.N = int(N)
        self._n = int(n_samples)
        self.seed = int(seed)
        self.op = DirichletOperator(LatticeDomain(self.N))
        self.potential = {"name": "quadratic", "params": {}}
        self.config = {"sampler": "exact", "seed": self.seed, "n_samples": self._n, "block": _BLOCK}
        self.diagnostics = {}

    @property
    def n_samples(self) -> int:
        return self._n

    def __len__(self):
        return self._n

    def _block(self, b: int) -> np.ndarray:
        from .laplace import sample_exact_gff_batch
        m = min(_BLOCK, self._n - b * _BLOCK)
        return sample_exact_gff_batch(self.op, np.random.default_rng([self.seed, b]), m)

    def iter_batches(self, batch: int = 64):
        buf = []
        have = 0
        for b in range((self._n + _BLOCK - 1) // _BLOCK):
            blk = self._block(b)
            buf.append(blk)
            have += len(blk)
            while have >= batch:
                cat = np.concatenate(buf)
                yield cat[:batch]
                rest = cat[batch:]
                buf = [rest] if len(rest) else []
                have = len(rest)
        if have:
            yield np.concatenate(buf)

    def ess(self) -> float:
        return float(self._n)

    def describe(self) -> dict:
        return {"N": self.N, "n_samples": self._n, "potential": self.potential, "exact": True,
                "seed": self.seed}

    def to_store(self) -> EnsembleStore:
        return EnsembleStore(N=self.N, potential=self.potential,
                             fields=np.concatenate(list(self.iter_batches(_BLOCK))),
                             config=dict(self.config), seeds=[self.seed])
