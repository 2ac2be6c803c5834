"""On-disk cache of basis maps keyed by geometry hash, grid and map layout."""

from __future__ import annotations

import hashlib
import logging
import os
from dataclasses import asdict
from pathlib import Path

from .field_solver import (
    ALL_TAGS,
    Discretization,
    GridSpec,
    MapSpec,
    PotentialMap,
    StaleBasisError,
    solve_basis,
)
from .geometry import GeometrySpec, canonical_json

log = logging.getLogger(__name__)


def default_cache_dir():
    return Path(os.environ.get("FIBERCHARGE_CACHE", Path.home() / ".cache" / "fibercharge"))


def tags_for(spec: GeometrySpec):
    labels = {f.label for f in spec.fibers}
    return [t for t in ALL_TAGS if not t.startswith("charge(") or t[len("charge(")] in labels]


class BasisCache:
    """Stores one ``.npz`` file per (geometry, grid, map, tag)."""

    def __init__(self, directory=None, grid: GridSpec | None = None, map_spec: MapSpec | None = None, tol=1e-8):
        self.directory = Path(directory) if directory is not None else default_cache_dir()
        self.grid = grid or GridSpec()
        self.map_spec = map_spec or MapSpec()
        self.tol = tol
        self.solves = 0

    def key(self, spec: GeometrySpec):
        payload = canonical_json(
            {"geometry": spec.hash(), "grid": asdict(self.grid), "map": asdict(self.map_spec), "tol": self.tol}
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:20]

    def path(self, spec, tag):
        safe = tag.replace("(", "_").replace(")", "").replace(",", "")
        return self.directory / f"{self.key(spec)}_{safe}.npz"

    def cached(self, spec, tag):
        return self.path(spec, tag).exists()

    def load(self, spec, tag):
        return PotentialMap.load(self.path(spec, tag), expect_hash=spec.hash(), expect_tag=tag)

    def get(self, spec: GeometrySpec, tags=None):
        """Return ``(maps, reports)``; reports only hold freshly solved tags.

        Corrupted or mismatched files raise :class:`StaleBasisError` rather
        than being silently recomputed.
        """
        tags = list(tags) if tags is not None else tags_for(spec)
        maps, reports, missing = {}, {}, []
        for tag in tags:
            if self.cached(spec, tag):
                maps[tag] = self.load(spec, tag)
            else:
                missing.append(tag)
        if missing:
            self.directory.mkdir(parents=True, exist_ok=True)
            disc = Discretization(spec, self.grid)
            for tag in missing:
                pmap, report = solve_basis(spec, tag, map_spec=self.map_spec, tol=self.tol, discretization=disc)
                self.solves += 1
                tmp = self.path(spec, tag).with_suffix(".tmp")
                pmap.save(tmp)
                os.replace(tmp, self.path(spec, tag))
                maps[tag], reports[tag] = pmap, report
                log.info("solved %s in %d iterations (%.1f s)", tag, report.iterations, report.wall_time)
        return maps, reports


__all__ = ["BasisCache", "StaleBasisError", "default_cache_dir", "tags_for"]
