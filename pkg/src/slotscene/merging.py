"""Agglomerative slot merging.

Slots are greedily merged under average-linkage cosine distance until K
clusters remain. Cluster labels are the smallest original slot index of
their members; exact distance ties (within 1e-12) break toward the
lexicographically smallest label pair, which keeps the procedure fully
deterministic and permutation-relabelable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import AttentionMaps, SlotSet
from .exceptions import ShapeError, ValidationError

TIE_TOL = 1e-12
NORM_FLOOR = 1e-10


@dataclass
class MergedSlots:
    """K merged slots, pooled masks, and the member partition."""

    slots: np.ndarray                  # (K, D_what)
    masks: np.ndarray                  # (K, H, W)
    members: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        self.slots = np.asarray(self.slots, dtype=np.float32)
        self.masks = np.asarray(self.masks, dtype=np.float32)
        if self.slots.ndim != 2 or self.masks.ndim != 3:
            raise ShapeError("merged slots must be (K, D); masks (K, H, W)")
        if self.slots.shape[0] != self.masks.shape[0] or self.slots.shape[0] != len(self.members):
            raise ShapeError("slots, masks and members must agree on K")
        flat = [i for grp in self.members for i in grp]
        if sorted(flat) != list(range(len(flat))):
            raise ValidationError("members must partition the original slot indices")

    @property
    def k(self) -> int:
        return self.slots.shape[0]


def cosine_distances(vectors: np.ndarray) -> np.ndarray:
    """Pairwise 1 - cos for slot vectors; near-zero norms get a 1e-12 floor.

    Exactly-zero vectors are rejected: their direction is undefined and a
    silent answer would hide a degenerate encoder.
    """
    v = np.asarray(vectors, dtype=np.float64)
    norms = np.sqrt((v * v).sum(axis=1))
    if (norms == 0.0).any():
        bad = int(np.argmax(norms == 0.0))
        raise ValidationError(f"slot {bad} has an exactly zero vector; cosine undefined")
    norms = np.where(norms < NORM_FLOOR, norms + 1e-12, norms)
    unit = v / norms[:, None]
    sim = np.clip(unit @ unit.T, -1.0, 1.0)
    return 1.0 - sim


def merge_slots(slots: SlotSet, attention: AttentionMaps, k: int) -> MergedSlots:
    """Agglomerate N slots down to exactly K groups.

    Merged slot vectors are arithmetic means of their members' originals;
    merged masks are sums of member attention maps (so per-location mass is
    conserved). Output groups are ordered by smallest original slot index.
    """
    if slots.slots.ndim != 2:
        raise ShapeError("merge_slots operates on a single frame's SlotSet")
    if attention.weights.ndim != 3:
        raise ShapeError("merge_slots operates on single-frame AttentionMaps")
    n = slots.n_slots
    if attention.n_slots != n:
        raise ShapeError(f"{n} slots but {attention.n_slots} attention maps")
    if not (1 <= k <= n):
        raise ValidationError(f"K must be in [1, {n}], got {k}")

    base = cosine_distances(slots.slots)
    # Clusters keyed by smallest original member index.
    clusters: dict[int, list[int]] = {i: [i] for i in range(n)}
    # Average linkage between current clusters, maintained by the
    # Lance-Williams update for unweighted averages.
    dist: dict[tuple[int, int], float] = {
        (i, j): float(base[i, j]) for i in range(n) for j in range(i + 1, n)
    }

    while len(clusters) > k:
        labels = sorted(clusters)
        best = None
        best_d = None
        for a_idx, a in enumerate(labels):
            for b in labels[a_idx + 1:]:
                d = dist[(a, b)]
                if best_d is None or d < best_d - TIE_TOL:
                    best, best_d = (a, b), d
        a, b = best
        na, nb = len(clusters[a]), len(clusters[b])
        for c in labels:
            if c in (a, b):
                continue
            key_a = (min(a, c), max(a, c))
            key_b = (min(b, c), max(b, c))
            merged_d = (na * dist[key_a] + nb * dist[key_b]) / (na + nb)
            dist[key_a] = merged_d
            del dist[key_b]
        del dist[(a, b)]
        clusters[a] = clusters[a] + clusters[b]
        del clusters[b]

    groups = tuple(tuple(sorted(clusters[label])) for label in sorted(clusters))
    merged_vecs = np.stack([slots.slots[list(g)].mean(axis=0) for g in groups])
    merged_masks = np.stack([attention.weights[list(g)].sum(axis=0) for g in groups])
    return MergedSlots(slots=merged_vecs, masks=merged_masks, members=groups)
