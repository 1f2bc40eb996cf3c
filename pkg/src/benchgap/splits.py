"""Construction of every named subset the diagnostics run on: the dense core,
distance-stratified bins, difficulty partitions, and the balanced test set.

Each split is a SplitManifest: an ordered id list plus enough provenance
(seed, generator name, parent digest) to rebuild it exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import LEVELS, Dataset
from .errors import SplitError
from .geometry import ClusterModel, densest_core
from .records import read_records, write_records
from .tsne import Projection2D

RNG_NAME = "numpy.random.PCG64"


@dataclass
class SplitManifest:
    name: str
    member_ids: list[str]
    provenance: dict
    seed: int | None = None
    parent_digest: str = ""
    rng: str | None = None

    def __post_init__(self):
        if len(set(self.member_ids)) != len(self.member_ids):
            raise SplitError(f"manifest {self.name!r} has duplicate member ids")

    def __len__(self) -> int:
        return len(self.member_ids)


def select_core(
    projection: Projection2D,
    cluster: ClusterModel,
    target_cluster: int,
    m: int,
    cluster_ids: Sequence[str] | None = None,
) -> SplitManifest:
    """The m most tightly packed points of one cluster in the 2-D projection:
    the center with the smallest m-1 neighbor radius, plus those neighbors."""
    n = projection.coords.shape[0]
    if cluster.assignments.shape[0] != n:
        raise SplitError(
            f"cluster assignments ({cluster.assignments.shape[0]}) do not align with "
            f"projection ({n})"
        )
    if cluster_ids is not None and list(cluster_ids) != list(projection.ids):
        raise SplitError("cluster ids do not match projection ids")
    if not 0 <= target_cluster < cluster.k:
        raise SplitError(f"target_cluster {target_cluster} out of range for k={cluster.k}")
    members = np.flatnonzero(cluster.assignments == target_cluster)
    if m < 1 or m > members.size:
        raise SplitError(f"core size m must be in [1, {members.size}] for cluster {target_cluster}")
    if m == 1:
        center, chosen, radius = int(members[0]), members[:1], 0.0
    else:
        center, chosen, radius = densest_core(projection.coords, members, m - 1)
    ids = [projection.ids[i] for i in np.atleast_1d(chosen)]
    return SplitManifest(
        name=f"core_c{target_cluster}_m{m}",
        member_ids=ids,
        provenance={
            "kind": "core",
            "cluster_id": target_cluster,
            "m": m,
            "center_id": projection.ids[center],
            "radius": radius,
        },
        seed=cluster.seed,
        parent_digest=projection.content_digest(),
    )


def distance_bins(
    projection: Projection2D,
    core: SplitManifest,
    n_bins: int = 5,
    per_bin: int = 80,
    seed: int = 0,
) -> list[SplitManifest]:
    """Sampled test sets at increasing distance from the core's 2-D centroid.

    Non-core points are sorted by distance (ties by id), cut into n_bins
    equal-size bins (the first remainder bins take one extra candidate), and
    per_bin members are drawn from each bin without replacement.
    """
    if not core.member_ids:
        raise SplitError("core manifest is empty")
    if n_bins < 1:
        raise SplitError("n_bins must be >= 1")
    id_to_row = {pid: i for i, pid in enumerate(projection.ids)}
    try:
        core_rows = np.array([id_to_row[pid] for pid in core.member_ids])
    except KeyError as exc:
        raise SplitError(f"core member {exc} not present in projection") from exc
    centroid = projection.coords[core_rows].mean(axis=0)
    core_set = set(core.member_ids)
    rest = [i for i, pid in enumerate(projection.ids) if pid not in core_set]
    if len(rest) < n_bins:
        raise SplitError(f"only {len(rest)} non-core points for {n_bins} bins")
    if per_bin < 0 or per_bin > len(rest) // n_bins:
        raise SplitError(f"per_bin must be in [0, {len(rest) // n_bins}]")
    rest_arr = np.array(rest)
    dists = np.sqrt(((projection.coords[rest_arr] - centroid) ** 2).sum(axis=1))
    order = sorted(range(len(rest)), key=lambda j: (dists[j], projection.ids[rest_arr[j]]))
    sorted_rows = rest_arr[order]
    sorted_d = dists[order]

    base, extra = divmod(len(rest), n_bins)
    rng = np.random.default_rng(seed)
    manifests = []
    start = 0
    parent = projection.content_digest()
    for k in range(n_bins):
        size = base + (1 if k < extra else 0)
        stop = start + size
        bin_rows = sorted_rows[start:stop]
        bin_d = sorted_d[start:stop]
        pick = np.sort(rng.choice(size, size=per_bin, replace=False)) if per_bin else np.array([], dtype=int)
        manifests.append(
            SplitManifest(
                name=f"bin_{k + 1}",
                member_ids=[projection.ids[r] for r in bin_rows[pick]],
                provenance={
                    "kind": "distance_bin",
                    "bin_index": k + 1,
                    "n_bins": n_bins,
                    "d_min": float(bin_d[0]),
                    "d_max": float(bin_d[-1]),
                    "core_name": core.name,
                },
                seed=seed,
                parent_digest=parent,
                rng=RNG_NAME,
            )
        )
        start = stop
    return manifests


def difficulty_partitions(dataset: Dataset) -> list[SplitManifest]:
    """Exact partition of the dataset by difficulty level."""
    unannotated = [p.id for p in dataset.problems if p.difficulty is None]
    if unannotated:
        raise SplitError(f"problems without difficulty annotation: {unannotated[:10]}")
    parent = dataset.content_digest()
    by_level: dict[str, list[str]] = {level: [] for level in LEVELS}
    for p in dataset.problems:
        by_level[p.difficulty].append(p.id)
    return [
        SplitManifest(
            name=f"difficulty_{level}",
            member_ids=by_level[level],
            provenance={"kind": "difficulty", "level": level},
            parent_digest=parent,
        )
        for level in LEVELS
    ]


def balanced_testset(dataset: Dataset, per_level: int = 40, seed: int = 0) -> SplitManifest:
    """An equal number of problems drawn from every difficulty level."""
    if per_level < 1:
        raise SplitError("per_level must be >= 1")
    partitions = {m.provenance["level"]: m.member_ids for m in difficulty_partitions(dataset)}
    rng = np.random.default_rng(seed)
    members: list[str] = []
    sublists: dict[str, list[str]] = {}
    for level in LEVELS:
        pool = partitions[level]
        if len(pool) < per_level:
            raise SplitError(f"level {level} has only {len(pool)} problems, need {per_level}")
        pick = np.sort(rng.choice(len(pool), size=per_level, replace=False))
        chosen = [pool[i] for i in pick]
        sublists[level] = chosen
        members.extend(chosen)
    return SplitManifest(
        name=f"balanced_{per_level}x{len(LEVELS)}",
        member_ids=members,
        provenance={"kind": "balanced", "per_level": per_level, "levels": sublists},
        seed=seed,
        parent_digest=dataset.content_digest(),
        rng=RNG_NAME,
    )


# ---------------------------------------------------------------------------
# Serialization: header record, then one id record per member


def save_manifest(manifest: SplitManifest, path: str | Path) -> str:
    header = {
        "kind": "split_manifest",
        "name": manifest.name,
        "provenance": manifest.provenance,
        "seed": manifest.seed,
        "parent_digest": manifest.parent_digest,
        "rng": manifest.rng,
        "member_count": len(manifest.member_ids),
    }
    return write_records(path, [header, *({"id": pid} for pid in manifest.member_ids)])


def load_manifest(path: str | Path) -> SplitManifest:
    records = read_records(path)
    if not records or records[0].get("kind") != "split_manifest":
        raise SplitError(f"{path}: missing split_manifest header")
    header = records[0]
    member_ids = [r["id"] for r in records[1:]]
    if header.get("member_count") != len(member_ids):
        raise SplitError(
            f"{path}: header records {header.get('member_count')} members, file has {len(member_ids)}"
        )
    return SplitManifest(
        name=header["name"],
        member_ids=member_ids,
        provenance=header.get("provenance", {}),
        seed=header.get("seed"),
        parent_digest=header.get("parent_digest", ""),
        rng=header.get("rng"),
    )
