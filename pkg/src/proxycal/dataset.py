"""Columnar dataset container shared by the generator, trainers, and I/O."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SchemaError, UnsupportedDatasetError

Array = np.ndarray


@dataclass(frozen=True)
class ProxyView:
    """Read-only slice of a dataset exposing only proxies and environment.

    Stage-1 training consumes this view, so the observed outcome is
    structurally out of reach there.
    """

    proxies: Array
    env: Array


@dataclass
class Dataset:
    """Tabular data: environment covariates, proxy vector, observed outcome.

    Ground-truth columns (z_true, a_true, y_true) are populated for synthetic
    and injected data and absent for raw real-world tables.  ``group`` is an
    optional string key per row (e.g. hazard type) used for CATE aggregation.
    """

    env: Array
    proxies: Array
    y_obs: Array
    z_true: Array | None = None
    a_true: Array | None = None
    y_true: Array | None = None
    group: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.env = np.asarray(self.env, dtype=float)
        self.proxies = np.asarray(self.proxies, dtype=float)
        self.y_obs = np.asarray(self.y_obs, dtype=float)
        if self.env.ndim != 2 or self.proxies.ndim != 2 or self.y_obs.ndim != 1:
            raise SchemaError("env and proxies must be 2-d, y_obs 1-d")
        n = self.env.shape[0]
        for name in ("proxies", "y_obs", "z_true", "a_true", "y_true", "group"):
            col = getattr(self, name)
            if col is not None and col.shape[0] != n:
                raise SchemaError(f"{name} has {col.shape[0]} rows, env has {n}")
        if self.a_true is not None:
            a = np.asarray(self.a_true, dtype=float)
            if not np.all((a == 0.0) | (a == 1.0)):
                raise SchemaError("a_true must be binary 0/1")
            self.a_true = a
        if self.z_true is not None and self.z_true.ndim != 2:
            raise SchemaError("z_true must be 2-d")

    @property
    def n(self) -> int:
        return self.env.shape[0]

    @property
    def d_e(self) -> int:
        return self.env.shape[1]

    @property
    def m(self) -> int:
        return self.proxies.shape[1]

    @property
    def d_z(self) -> int | None:
        return None if self.z_true is None else self.z_true.shape[1]

    def proxy_view(self) -> ProxyView:
        return ProxyView(self.proxies, self.env)

    def require_ground_truth(self, *names: str) -> None:
        for name in names:
            if getattr(self, name) is None:
                raise UnsupportedDatasetError(f"dataset has no {name} column")

    def subset(self, idx: Array) -> "Dataset":
        """Row subset (copying), preserving metadata."""
        idx = np.asarray(idx)
        take = lambda col: None if col is None else col[idx].copy()
        return Dataset(
            env=self.env[idx].copy(),
            proxies=self.proxies[idx].copy(),
            y_obs=self.y_obs[idx].copy(),
            z_true=take(self.z_true),
            a_true=take(self.a_true),
            y_true=take(self.y_true),
            group=take(self.group),
            meta=dict(self.meta),
        )
