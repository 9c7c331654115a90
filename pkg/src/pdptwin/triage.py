"""Failure triage: realism filtering, clustering, and representatives.

Realistic failures are clustered by UPGMA (average linkage) on a mixed
genome metric: parameters min-max normalized to [0,1] by their declared
bounds, concatenated with the raw edge-presence bits, under Euclidean
distance. The dendrogram is cut at every k up to 20 and the cut with
the best silhouette wins (ties to the smaller k); each cluster is
represented by the member closest to its mean feature vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BadMatrix, SchemaMismatch, SingleCluster, TooFewFailures
from .explorer import Genome
from .kvconfig import parse_kv


@dataclass
class RealismConstraints:
    mandatory_edges: set[str] = field(default_factory=set)
    param_bounds: dict[str, tuple[float, float]] = field(default_factory=dict)


def parse_realism(text: str) -> RealismConstraints:
    kv = parse_kv(text)
    mandatory = set(kv.get("mandatory", []))
    bounds: dict[str, tuple[float, float]] = {}
    for key, values in kv.items():
        if key.startswith("bound."):
            lo, hi = values[-1].split(",")
            bounds[key.split(".", 1)[1]] = (float(lo), float(hi))
    return RealismConstraints(mandatory, bounds)


def check_realism(genome: Genome, constraints: RealismConstraints) -> tuple[bool, list[str]]:
    """False iff a mandatory edge is absent or a parameter leaves its band."""
    reasons = []
    removed = genome.removed_edges()
    for edge_id in sorted(constraints.mandatory_edges):
        if edge_id in removed:
            reasons.append(f"mandatory edge absent: {edge_id}")
    for name, value in genome.params:
        lo, hi = constraints.param_bounds.get(name, (-math.inf, math.inf))
        if not lo <= value <= hi:
            reasons.append(f"param {name}={value:.4g} outside admissible [{lo}, {hi}]")
    return not reasons, reasons


# ---------------------------------------------------------------------------
# genome metric


def genome_features(genome: Genome) -> np.ndarray:
    feats = []
    bounds = genome.bounds_dict()
    for name, value in genome.params:
        lo, hi = bounds[name]
        feats.append((value - lo) / (hi - lo) if hi > lo else 0.0)
    feats.extend(1.0 if bit else 0.0 for bit in genome.edge_mask)
    return np.asarray(feats)


def genome_distance(g1: Genome, g2: Genome) -> float:
    """Euclidean distance on [normalized params ++ mask bits]."""
    if (
        tuple(n for n, _ in g1.params) != tuple(n for n, _ in g2.params)
        or g1.edge_ids != g2.edge_ids
        or g1.bounds != g2.bounds
    ):
        raise SchemaMismatch("genomes come from different model spaces")
    return float(np.linalg.norm(genome_features(g1) - genome_features(g2)))


def distance_matrix(genomes: list[Genome]) -> np.ndarray:
    feats = np.stack([genome_features(g) for g in genomes])
    diff = feats[:, None, :] - feats[None, :, :]
    return np.sqrt((diff**2).sum(axis=2))


# ---------------------------------------------------------------------------
# UPGMA


@dataclass
class Dendrogram:
    """Merge list over leaves 0..n-1; merge i creates cluster id n+i."""

    n: int
    merges: list[tuple[int, int, float, int]]  # (left, right, height, size)

    def cut(self, k: int) -> list[int]:
        """Labels after undoing the last k-1 merges (0-based cluster ids)."""
        if not 1 <= k <= self.n:
            raise ValueError(f"k must be in [1, {self.n}]")
        parent = list(range(self.n + len(self.merges)))
        for step, (a, b, _, _) in enumerate(self.merges[: self.n - k]):
            parent[a] = parent[b] = self.n + step

        def root(i: int) -> int:
            while parent[i] != i:
                i = parent[i]
            return i

        roots: dict[int, int] = {}
        labels = []
        for leaf in range(self.n):
            r = root(leaf)
            labels.append(roots.setdefault(r, len(roots)))
        return labels


def upgma(dist: np.ndarray) -> Dendrogram:
    """Average-linkage agglomeration; ties broken by smallest (i, j) ids."""
    d = np.asarray(dist, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise BadMatrix("distance matrix must be square")
    n = d.shape[0]
    if n < 2:
        raise BadMatrix("need at least two items")
    if not np.allclose(d, d.T) or not np.allclose(np.diag(d), 0.0) or np.isnan(d).any():
        raise BadMatrix("matrix must be symmetric with a zero diagonal")

    # active clusters: id -> (member leaves, creation id); distances between
    # clusters recomputed by arithmetic mean over all cross pairs
    members: dict[int, list[int]] = {i: [i] for i in range(n)}
    merges: list[tuple[int, int, float, int]] = []
    next_id = n

    def cluster_dist(a: int, b: int) -> float:
        ma, mb = members[a], members[b]
        return float(sum(d[i, j] for i in ma for j in mb) / (len(ma) * len(mb)))

    while len(members) > 1:
        ids = sorted(members)
        best = None
        for x in range(len(ids)):
            for y in range(x + 1, len(ids)):
                cd = cluster_dist(ids[x], ids[y])
                if best is None or cd < best[0] - 1e-12:
                    best = (cd, ids[x], ids[y])
        height, a, b = best
        members[next_id] = members.pop(a) + members.pop(b)
        merges.append((a, b, height, len(members[next_id])))
        next_id += 1
    return Dendrogram(n, merges)


# ---------------------------------------------------------------------------
# silhouette and selection


def silhouette(labels: list[int], dist: np.ndarray) -> float:
    """Mean silhouette with the s=0 convention for singleton clusters."""
    labels = list(labels)
    k = len(set(labels))
    if k < 2:
        raise SingleCluster("silhouette needs at least two clusters")
    d = np.asarray(dist, dtype=float)
    clusters: dict[int, list[int]] = {}
    for i, c in enumerate(labels):
        clusters.setdefault(c, []).append(i)
    scores = []
    for i, c in enumerate(labels):
        own = clusters[c]
        if len(own) == 1:
            scores.append(0.0)
            continue
        a = sum(d[i, j] for j in own if j != i) / (len(own) - 1)
        b = min(
            sum(d[i, j] for j in other) / len(other)
            for cid, other in clusters.items()
            if cid != c
        )
        scores.append((b - a) / max(a, b) if max(a, b) > 0 else 0.0)
    return float(np.mean(scores))


@dataclass
class Clustering:
    labels: list[int]
    k: int
    silhouette: float
    flagged: str | None = None  # set when the trivial single cluster was forced


def select_clustering(genomes: list[Genome], k_max: int = 20) -> Clustering:
    """Cut the UPGMA dendrogram at each k in [2, min(k_max, n)], keep the
    silhouette maximizer (ties to the smaller k)."""
    if not genomes:
        raise TooFewFailures("no realistic failures to cluster")
    if len(genomes) == 1:
        return Clustering([0], 1, float("nan"), flagged="single failure; trivial cluster")
    d = distance_matrix(genomes)
    tree = upgma(d)
    best: Clustering | None = None
    for k in range(2, min(k_max, len(genomes)) + 1):
        labels = tree.cut(k)
        if len(set(labels)) < 2:
            continue
        s = silhouette(labels, d)
        if best is None or s > best.silhouette + 1e-12:
            best = Clustering(labels, k, s)
    if best is None:  # all items identical: every cut collapses
        return Clustering([0] * len(genomes), 1, float("nan"), flagged="all failures identical")
    return best


def representatives(clustering: Clustering, genomes: list[Genome]) -> dict[int, int]:
    """Per cluster, the member index closest to the cluster mean (ties: lowest)."""
    feats = np.stack([genome_features(g) for g in genomes])
    out: dict[int, int] = {}
    for cluster in sorted(set(clustering.labels)):
        idx = [i for i, c in enumerate(clustering.labels) if c == cluster]
        center = feats[idx].mean(axis=0)
        out[cluster] = min(idx, key=lambda i: (float(np.linalg.norm(feats[i] - center)), i))
    return out


def dendrogram_text(tree: Dendrogram) -> str:
    lines = ["left,right,height,size"]
    for a, b, h, size in tree.merges:
        lines.append(f"{a},{b},{h:.6g},{size}")
    return "\n".join(lines) + "\n"
