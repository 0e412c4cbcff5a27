"""Iterative segmentation refinement toward one connected region per class.

The post-processor isolates the largest patch of each class and fills the
regions they fully enclose; remaining pixels are then repeatedly relabeled to
their next-ranked class prediction until the map has exactly one patch per
class. Escalation to a lower-ranked prediction happens only when the previous
relabeling stage has stopped changing between loop iterations. Pixels inside
the selected largest patches are never relabeled.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError
from .model import predict_labels, rank_labels

FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=np.uint8)
LOOP_CAP = 100


@dataclass
class Patch:
    class_id: int
    size: int
    first_pixel: tuple[int, int]   # raster-order anchor
    mask: np.ndarray


@dataclass
class PatchDecomposition:
    """Connected same-class regions partitioning the pixels."""

    patches: list[Patch]
    patch_count: int
    class_count: int

    def per_class_largest(self) -> dict[int, Patch]:
        best: dict[int, Patch] = {}
        for p in self.patches:
            if p.class_id not in best:
                best[p.class_id] = p  # patches are pre-sorted, first wins
        return best


def connected_components(labels: np.ndarray) -> PatchDecomposition:
    """4-connected same-label components, ordered by size descending then
    first-pixel raster order."""
    labels = np.asarray(labels)
    w = labels.shape[1]
    patches: list[Patch] = []
    for cls in np.unique(labels):
        comp, n = ndimage.label(labels == cls, structure=FOUR_CONN)
        for i in range(1, n + 1):
            mask = comp == i
            ys, xs = np.nonzero(mask)  # already raster-ordered
            patches.append(Patch(int(cls), int(ys.size),
                                 (int(ys[0]), int(xs[0])), mask))
    patches.sort(key=lambda p: (-p.size, p.first_pixel[0] * w + p.first_pixel[1]))
    return PatchDecomposition(patches, len(patches),
                              len({p.class_id for p in patches}))


def _select_largest(labels: np.ndarray, n: int) -> dict[int, np.ndarray]:
    """Largest patch of each of the top-n classes (classes ranked by that
    patch's size, raster tie-break)."""
    w = labels.shape[1]
    best = connected_components(labels).per_class_largest()
    chosen = sorted(best.values(),
                    key=lambda p: (-p.size,
                                   p.first_pixel[0] * w + p.first_pixel[1]))[:n]
    return {p.class_id: p.mask for p in chosen}


def _fill_enclosed(labels: np.ndarray, owner: np.ndarray) -> bool:
    """Absorb every connected same-label region whose entire outer boundary
    touches a single selected patch; iterates to a fixpoint as patches grow.

    `owner` holds the selected patch class per pixel (-1 elsewhere); both
    arrays are updated in place. Returns whether anything changed.
    """
    any_change = False
    while True:
        free = owner < 0
        if not free.any():
            break
        # unique ids over all free same-label regions
        ids = np.zeros(labels.shape, dtype=np.int64)
        nxt = 1
        for v in np.unique(labels[free]):
            comp, m = ndimage.label(free & (labels == v), structure=FOUR_CONN)
            sel = comp > 0
            ids[sel] = comp[sel] + (nxt - 1)
            nxt += m
        touches_border = np.zeros(nxt, dtype=bool)
        for edge in (ids[0, :], ids[-1, :], ids[:, 0], ids[:, -1]):
            touches_border[edge] = True
        min_owner = np.full(nxt, np.iinfo(np.int64).max)
        max_owner = np.full(nxt, -1, dtype=np.int64)
        touches_free = np.zeros(nxt, dtype=bool)
        has_owned = np.zeros(nxt, dtype=bool)

        def scan(a_ids, b_ids, b_owner):
            mask = (a_ids > 0) & (a_ids != b_ids)
            am, bi, bo = a_ids[mask], b_ids[mask], b_owner[mask]
            freenb = bi > 0
            touches_free[am[freenb]] = True
            am, bo = am[~freenb], bo[~freenb]
            np.minimum.at(min_owner, am, bo)
            np.maximum.at(max_owner, am, bo)
            has_owned[am] = True

        scan(ids[1:, :], ids[:-1, :], owner[:-1, :])
        scan(ids[:-1, :], ids[1:, :], owner[1:, :])
        scan(ids[:, 1:], ids[:, :-1], owner[:, :-1])
        scan(ids[:, :-1], ids[:, 1:], owner[:, 1:])

        fillable = ~touches_border & ~touches_free & has_owned \
            & (min_owner == max_owner)
        fillable[0] = False
        if not fillable.any():
            break
        target = np.where(fillable, max_owner, -1)
        sel = fillable[ids]
        labels[sel] = target[ids[sel]].astype(labels.dtype)
        owner[sel] = target[ids[sel]]
        any_change = True
    return any_change


def _count_patches(labels: np.ndarray) -> int:
    total = 0
    for v in np.unique(labels):
        _, n = ndimage.label(labels == v, structure=FOUR_CONN)
        total += n
    return total


def _owner_grid(shape, selected: dict[int, np.ndarray]) -> np.ndarray:
    owner = np.full(shape, -1, dtype=np.int32)
    for cls, mask in selected.items():
        owner[mask] = cls
    return owner


def largest_patches_fill(labels: np.ndarray, n: int) -> np.ndarray:
    """Select the largest patch of each of the top-n classes and relabel every
    region they fully enclose to the enclosing patch's class."""
    out = np.asarray(labels).copy()
    owner = _owner_grid(out.shape, _select_largest(out, n))
    _fill_enclosed(out, owner)
    return out


@dataclass
class RefineResult:
    labels: np.ndarray
    loop_iterations: int
    max_rank_used: int
    forced: bool                  # fallback engaged


def _one_patch_per_class(labels: np.ndarray, classes) -> bool:
    present = {int(v) for v in np.unique(labels)}
    if present != set(classes):
        return False
    for cls in classes:
        _, n = ndimage.label(labels == cls, structure=FOUR_CONN)
        if n != 1:
            return False
    return True


def _grow_owner(labels: np.ndarray, owner: np.ndarray) -> np.ndarray:
    """Extend each selected patch to the full connected component that now
    contains it (selections only ever grow: their pixels keep their labels)."""
    out = np.full(labels.shape, -1, dtype=np.int32)
    for cls in np.unique(owner[owner >= 0]):
        comp, _ = ndimage.label(labels == cls, structure=FOUR_CONN)
        ids = np.unique(comp[owner == cls])
        out[np.isin(comp, ids[ids > 0])] = cls
    return out


def _geodesic_fallback(labels: np.ndarray, owner: np.ndarray) -> np.ndarray:
    """Assign every non-selected pixel to the nearest selected patch by
    multi-source BFS over the grid (geodesic distance)."""
    out = labels.copy()
    own = owner.copy()
    h, w = labels.shape
    ys, xs = np.nonzero(own >= 0)
    queue = deque(zip(ys.tolist(), xs.tolist()))
    while queue:
        y, x = queue.popleft()
        for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
            if 0 <= ny < h and 0 <= nx < w and own[ny, nx] < 0:
                own[ny, nx] = own[y, x]
                queue.append((ny, nx))
    reached = own >= 0
    out[reached] = own[reached]
    return out


def refine(scores: np.ndarray, n: int) -> RefineResult:
    """Refine the argmax segmentation of a score volume to one patch per class.

    scores: (C, H, W) finite values; n <= C is the number of texture classes
    in the image. If rank escalation exhausts all C ranks with no further
    change, or the loop cap is hit, the remaining pixels fall back to
    nearest-selected-patch assignment and the result is flagged "forced".
    """
    c = scores.shape[0]
    if not 1 <= n <= c:
        raise ConfigError(f"need 1 <= n <= C, got n={n}, C={c}")
    if not np.all(np.isfinite(scores)):
        raise ConfigError("scores must be finite")

    ranks = rank_labels(scores)
    labels = predict_labels(scores).copy()

    # step 1: isolate the largest patch per class and fill enclosed regions
    selected = _select_largest(labels, n)
    target_classes = sorted(selected)
    owner = _owner_grid(labels.shape, selected)
    _fill_enclosed(labels, owner)
    owner = _grow_owner(labels, owner)

    def stage(rank):
        nonlocal labels, owner
        free = owner < 0
        labels[free] = ranks[rank - 1][free]
        _fill_enclosed(labels, owner)
        owner = _grow_owner(labels, owner)

    def patch_count():
        return _count_patches(labels)

    prev_images: dict[int, np.ndarray] = {}
    loop_t = 0
    max_rank = 1
    forced = False
    while patch_count() != n:
        if loop_t >= LOOP_CAP:
            forced = True
            break
        loop_t += 1
        cur: dict[int, np.ndarray] = {}
        top = 1
        for rank in (2, 3):          # unconditional stages
            if rank > c:
                break
            stage(rank)
            cur[rank] = labels.copy()
            top = rank
        x = 4                        # escalate while the previous stage stalls
        while x <= c:
            prev = prev_images.get(x - 1)
            if prev is None or not np.array_equal(prev, cur[x - 1]):
                break
            stage(x)
            cur[x] = labels.copy()
            top = x
            x += 1
        max_rank = max(max_rank, top)
        stagnant = all(k in prev_images
                       and np.array_equal(prev_images[k], img)
                       for k, img in cur.items())
        prev_images = cur
        if top == c and stagnant:
            forced = True            # every rank exhausted, nothing moves
            break

    if not _one_patch_per_class(labels, target_classes):
        labels = _geodesic_fallback(labels, owner)
        forced = True
    return RefineResult(labels, loop_t, max_rank, forced)
