"""Ward hierarchical clustering of regional reproduction-number series.

Implements the Lance-Williams recurrence on the Ward variance-increase
cost; fusion heights are square roots of that cost, so two singleton
rows at Euclidean distance d merge at height d/sqrt(2).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .estimation import EstimateSeries

__all__ = [
    "AlignedSeriesMatrix",
    "MergeStep",
    "Dendrogram",
    "align",
    "ward_cluster",
    "cut",
]


@dataclass(frozen=True)
class AlignedSeriesMatrix:
    """Regions x dates matrix of robust R0 values on a common date range."""

    region_codes: tuple[str, ...]
    dates: tuple
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (len(self.region_codes), len(self.dates)):
            raise ValueError("matrix shape must be (regions, dates)")
        if np.isnan(self.values).any():
            raise ValueError("aligned matrix must have no undefined entries")


@dataclass(frozen=True)
class MergeStep:
    """One agglomeration: cluster ids merged, fusion height, merged size.

    Leaf ids are region codes; internal ids are "#<step>".
    """

    left: str
    right: str
    height: float
    size: int


@dataclass(frozen=True)
class Dendrogram:
    leaves: tuple[str, ...]
    merges: tuple[MergeStep, ...]

    def to_json(self) -> str:
        return json.dumps({
            "leaves": list(self.leaves),
            "merges": [
                {"left": m.left, "right": m.right,
                 "height": m.height, "size": m.size}
                for m in self.merges
            ],
        }, indent=2, sort_keys=True)

    def to_newick(self) -> str:
        """Newick text with branch lengths from fusion heights."""
        height_of = {leaf: 0.0 for leaf in self.leaves}
        text_of = {leaf: leaf for leaf in self.leaves}
        node = None
        for step, m in enumerate(self.merges):
            node = f"#{step}"
            lb = m.height - height_of[m.left]
            rb = m.height - height_of[m.right]
            text_of[node] = (f"({text_of[m.left]}:{lb:.6g},"
                             f"{text_of[m.right]}:{rb:.6g})")
            height_of[node] = m.height
        return (text_of[node] if node else text_of[self.leaves[0]]) + ";"


def align(estimates: dict[str, EstimateSeries],
          policy: str = "intersect") -> AlignedSeriesMatrix:
    """Put robust R0 series for all regions on a common date grid.

    intersect: keep only dates where every region has a defined value.
    pad: union of dates; missing or undefined values are filled with the
    region's nearest defined value (first defined value for the head).
    """
    if len(estimates) < 2:
        raise ValueError("need at least 2 regions to align")
    per_region = {}
    for code, est in estimates.items():
        defined = {d: v for d, v in zip(est.dates, est.r0_robust)
                   if not math.isnan(v)}
        if not defined:
            raise ValueError(f"region {code} has no defined robust R0")
        per_region[code] = defined
    codes = tuple(sorted(per_region))

    if policy == "intersect":
        common = set.intersection(*(set(d) for d in per_region.values()))
        if not common:
            raise ValueError(
                "no common dates with defined values across all regions; "
                "try the pad alignment policy")
        dates = tuple(sorted(common))
        rows = [[per_region[c][d] for d in dates] for c in codes]
    elif policy == "pad":
        dates = tuple(sorted(set.union(*(set(d) for d in per_region.values()))))
        rows = []
        for c in codes:
            defined = per_region[c]
            first_date = min(defined)
            row, last = [], None
            for d in dates:
                if d in defined:
                    last = defined[d]
                elif last is None:
                    last = defined[first_date]
                row.append(last)
            rows.append(row)
    else:
        raise ValueError(f"unknown alignment policy {policy!r}")

    return AlignedSeriesMatrix(
        region_codes=codes, dates=dates,
        values=np.array(rows, dtype=float))


def ward_cluster(matrix: AlignedSeriesMatrix) -> Dendrogram:
    """Agglomerative clustering with Ward's minimum-variance criterion.

    At each step merges the pair with the smallest variance-increase
    cost (Lance-Williams recurrence); fusion height is sqrt(cost). Ties
    break toward the lexicographically smallest pair of cluster ids.
    """
    points = matrix.values
    n = points.shape[0]
    if n < 2:
        raise ValueError("need at least 2 rows to cluster")
    if not np.isfinite(points).all():
        raise ValueError("matrix entries must be finite")

    # Ward cost between singletons: squared Euclidean distance / 2
    ids = list(matrix.region_codes)
    sizes = {c: 1 for c in ids}
    cost: dict[frozenset, float] = {}
    for a in range(n):
        for b in range(a + 1, n):
            d2 = float(np.sum((points[a] - points[b]) ** 2))
            cost[frozenset((ids[a], ids[b]))] = d2 / 2.0

    merges = []
    active = list(ids)
    for step in range(n - 1):
        best_pair, best_cost = None, math.inf
        for x in range(len(active)):
            for y in range(x + 1, len(active)):
                pair = tuple(sorted((active[x], active[y])))
                c = cost[frozenset(pair)]
                if c < best_cost or (c == best_cost and pair < best_pair):
                    best_pair, best_cost = pair, c
        left, right = best_pair
        new_id = f"#{step}"
        new_size = sizes[left] + sizes[right]
        merges.append(MergeStep(left=left, right=right,
                                height=math.sqrt(best_cost), size=new_size))
        # Lance-Williams update of Ward costs to the merged cluster
        for other in active:
            if other in (left, right):
                continue
            nk = sizes[other]
            denom = new_size + nk
            c_new = ((sizes[left] + nk) * cost[frozenset((left, other))]
                     + (sizes[right] + nk) * cost[frozenset((right, other))]
                     - nk * best_cost) / denom
            cost[frozenset((new_id, other))] = c_new
        active.remove(left)
        active.remove(right)
        active.append(new_id)
        sizes[new_id] = new_size

    return Dendrogram(leaves=matrix.region_codes, merges=tuple(merges))


def cut(dendrogram: Dendrogram, k: int) -> dict[str, int]:
    """Labels from undoing the last k-1 merges.

    Labels are assigned in order of each cluster's lexicographically
    smallest member, so they are stable across runs.
    """
    n = len(dendrogram.leaves)
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    members: dict[str, list[str]] = {leaf: [leaf] for leaf in dendrogram.leaves}
    for step, m in enumerate(dendrogram.merges[:n - k]):
        members[f"#{step}"] = members.pop(m.left) + members.pop(m.right)
    clusters = sorted(members.values(), key=min)
    return {region: label
            for label, group in enumerate(clusters)
            for region in group}
