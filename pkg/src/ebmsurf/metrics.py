"""Reconstruction quality metrics between point sets / surfaces.

Conventions (pinned and recorded in every report, since table scalings vary
across papers): Chamfer distance is the symmetric mean of non-squared L2
nearest-neighbor distances with a 1/2 factor; F-score uses strict `< tau`;
normal consistency uses absolute dot products with nearest-neighbor pairing,
so global orientation does not matter.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from .geometry import GeometryError, PointCloud, TriangleMesh, sample_surface
from .kdtree import SpatialIndex

CHAMFER_CONVENTION = "0.5 * (mean_R min_G ||r-g|| + mean_G min_R ||r-g||), non-squared L2"


def chamfer_distance(R: PointCloud, G: PointCloud) -> float:
    """Symmetric mean nearest-neighbor distance (see CHAMFER_CONVENTION)."""
    _, d_rg = SpatialIndex(G.points).nearest_many(R.points)
    _, d_gr = SpatialIndex(R.points).nearest_many(G.points)
    return 0.5 * (float(d_rg.mean()) + float(d_gr.mean()))


def f_score(R: PointCloud, G: PointCloud, tau: float = 0.005) -> float:
    """Harmonic mean of precision and recall at distance threshold tau."""
    if not tau > 0.0:
        raise GeometryError("tau must be positive")
    _, d_rg = SpatialIndex(G.points).nearest_many(R.points)
    _, d_gr = SpatialIndex(R.points).nearest_many(G.points)
    precision = float((d_rg < tau).mean())
    recall = float((d_gr < tau).mean())
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def normal_consistency(R: PointCloud, G: PointCloud) -> float:
    """Mean absolute normal dot product of nearest-neighbor pairs, both ways."""
    if R.normals is None or G.normals is None:
        raise GeometryError("normal consistency requires normals on both clouds")
    ids_rg, _ = SpatialIndex(G.points).nearest_many(R.points)
    ids_gr, _ = SpatialIndex(R.points).nearest_many(G.points)
    fwd = np.abs((R.normals * G.normals[ids_rg]).sum(axis=1)).mean()
    bwd = np.abs((G.normals * R.normals[ids_gr]).sum(axis=1)).mean()
    return 0.5 * (float(fwd) + float(bwd))


@dataclass
class MetricsReport:
    chamfer: float
    f_score: float
    ncs: float
    tau: float
    sample_count: int
    seed: int
    chamfer_convention: str = CHAMFER_CONVENTION

    def __post_init__(self):
        if not (self.chamfer >= 0.0 and 0.0 <= self.f_score <= 1.0 and 0.0 <= self.ncs <= 1.0):
            raise ValueError("metric values out of range")

    @property
    def chamfer_x1e3(self) -> float:
        return 1e3 * self.chamfer

    @property
    def f_score_pct(self) -> float:
        return 100.0 * self.f_score

    @property
    def ncs_x1e2(self) -> float:
        return 100.0 * self.ncs

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(
            chamfer_x1e3=self.chamfer_x1e3,
            f_score_pct=self.f_score_pct,
            ncs_x1e2=self.ncs_x1e2,
        )
        return d

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def evaluate(
    recon_mesh: TriangleMesh,
    gt_mesh: TriangleMesh,
    n: int = 200_000,
    tau: float = 0.005,
    seed: int = 0,
) -> MetricsReport:
    """Sample both surfaces and compute all three metrics.

    Meshes are compared as given; callers evaluating a normalized
    reconstruction must denormalize it first so distances are in the
    ground-truth mesh's original units.
    """
    ss = np.random.SeedSequence(seed).spawn(2)
    R = sample_surface(recon_mesh, n, ss[0])
    G = sample_surface(gt_mesh, n, ss[1])
    return MetricsReport(
        chamfer=chamfer_distance(R, G),
        f_score=f_score(R, G, tau),
        ncs=normal_consistency(R, G),
        tau=tau,
        sample_count=n,
        seed=seed,
    )
