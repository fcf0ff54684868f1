"""SEEDS superpixels and superpixel/label matching.

Hill-climbing on a per-superpixel color-histogram concentration energy
E = sum_k sum_bins (H_k[b] / N_k)^2, starting from a regular grid and
proposing boundary-block exchanges coarse-to-fine (block levels, then
pixels). Moves are accepted only when they strictly increase the energy and
keep every superpixel 4-connected, so the initial-partition invariants are
preserved throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage


@dataclass
class SuperpixelMap:
    assignment: np.ndarray  # (H, W) int64, ids dense in [0, num_superpixels)
    num_superpixels: int
    sizes: np.ndarray  # (K,) pixel counts
    centroids: np.ndarray  # (K, 2) mean (u, v) per superpixel
    mean_colors: np.ndarray  # (K, 3)


@dataclass(frozen=True)
class MatchedSuperpixel:
    superpixel_id: int
    class_id: int
    point_indices: tuple[int, ...]  # supporting sparse-labeled points


def _quantize(image: np.ndarray, bins: int) -> np.ndarray:
    clipped = np.clip(image, 0.0, np.nextafter(1.0, 0.0))
    q = (clipped * bins).astype(np.int64)
    return q[..., 0] * bins * bins + q[..., 1] * bins + q[..., 2]


def _grid_dims(k: int, height: int, width: int) -> tuple[int, int]:
    cols = max(1, round(math.sqrt(k * width / height)))
    cols = min(cols, width, k)
    rows = max(1, min(round(k / cols), height))
    return rows, cols


_RING = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))


def _removal_keeps_connectivity(labels: np.ndarray, r: int, c: int) -> bool:
    """Local test: the 8-ring cells sharing labels[r, c] must form exactly one
    contiguous arc, so removing (r, c) cannot split its superpixel."""
    h, w = labels.shape
    own = labels[r, c]
    ring = []
    for dr, dc in _RING:
        rr, cc = r + dr, c + dc
        ring.append(0 <= rr < h and 0 <= cc < w and labels[rr, cc] == own)
    runs = 0
    for i in range(8):
        if ring[i] and not ring[i - 1]:
            runs += 1
    return runs == 1


class _SeedsState:
    """Histogram bookkeeping: per-superpixel bin counts, sizes and the sum of
    squared counts, all integers so energy comparisons are exact."""

    def __init__(self, quantized: np.ndarray, assign: np.ndarray, k: int, num_bins: int):
        self.num_bins = num_bins
        self.hist = np.zeros((k, num_bins), dtype=np.int64)
        np.add.at(self.hist, (assign.ravel(), quantized.ravel()), 1)
        self.size = np.bincount(assign.ravel(), minlength=k).astype(np.int64)
        self.sumsq = np.sum(self.hist.astype(np.float64) ** 2, axis=1).astype(np.int64)

    def energy(self) -> float:
        return float(np.sum(self.sumsq / self.size.astype(np.float64) ** 2))

    def move_gain(self, src: int, dst: int, bins: np.ndarray, counts: np.ndarray, m: int) -> float:
        if self.size[src] <= m:
            return -1.0  # never empty a superpixel
        hs = self.hist[src, bins]
        hd = self.hist[dst, bins]
        csq = int(np.dot(counts, counts))
        src_sumsq = self.sumsq[src] - 2 * int(np.dot(hs, counts)) + csq
        dst_sumsq = self.sumsq[dst] + 2 * int(np.dot(hd, counts)) + csq
        before = self.sumsq[src] / float(self.size[src]) ** 2 + self.sumsq[dst] / float(self.size[dst]) ** 2
        after = src_sumsq / float(self.size[src] - m) ** 2 + dst_sumsq / float(self.size[dst] + m) ** 2
        return after - before

    def apply_move(self, src: int, dst: int, bins: np.ndarray, counts: np.ndarray, m: int) -> None:
        hs = self.hist[src, bins]
        hd = self.hist[dst, bins]
        csq = int(np.dot(counts, counts))
        self.sumsq[src] += -2 * int(np.dot(hs, counts)) + csq
        self.sumsq[dst] += 2 * int(np.dot(hd, counts)) + csq
        self.hist[src, bins] -= counts
        self.hist[dst, bins] += counts
        self.size[src] -= m
        self.size[dst] += m


def _level_pass(
    assign: np.ndarray,
    quantized: np.ndarray,
    state: _SeedsState,
    step: int,
    iterations: int,
    energy_log: list[float],
) -> None:
    """Hill-climb at one block level (step = block edge in pixels)."""
    h, w = assign.shape
    hb, wb = h // step, w // step
    block_assign = assign[::step, ::step].copy()
    block_hist = None
    if step > 1:
        # per-block histograms, constant during the level
        block_index = (
            np.repeat(np.arange(hb), step)[:, None] * wb + np.repeat(np.arange(wb), step)[None, :]
        )
        block_hist = np.zeros((hb * wb, state.num_bins), dtype=np.int64)
        np.add.at(block_hist, (block_index.ravel(), quantized.ravel()), 1)
    m = step * step

    hist = state.hist
    size = state.size
    sumsq = state.sumsq
    for sweep in range(iterations):
        boundary = np.zeros((hb, wb), dtype=bool)
        boundary[:-1] |= block_assign[:-1] != block_assign[1:]
        boundary[1:] |= block_assign[1:] != block_assign[:-1]
        boundary[:, :-1] |= block_assign[:, :-1] != block_assign[:, 1:]
        boundary[:, 1:] |= block_assign[:, 1:] != block_assign[:, :-1]
        cells = np.argwhere(boundary).tolist()
        if sweep % 2 == 1:
            cells.reverse()
        moved = 0
        for r, c in cells:
            src = int(block_assign[r, c])
            candidates = []
            for dr, dc in ((-1, 0), (0, 1), (1, 0), (0, -1)):
                rr, cc = r + dr, c + dc
                if 0 <= rr < hb and 0 <= cc < wb:
                    lab = int(block_assign[rr, cc])
                    if lab != src and lab not in candidates:
                        candidates.append(lab)
            if not candidates or size[src] <= m:
                continue
            best_gain = 1e-12
            best_dst = -1
            if step == 1:
                # single-pixel move: one histogram bin changes, O(1) exact ints
                b = int(quantized[r, c])
                ns = int(size[src])
                src_after = (int(sumsq[src]) - 2 * int(hist[src, b]) + 1) / float(ns - 1) ** 2
                src_before = int(sumsq[src]) / float(ns) ** 2
                for dst in candidates:
                    nd = int(size[dst])
                    gain = (
                        src_after
                        + (int(sumsq[dst]) + 2 * int(hist[dst, b]) + 1) / float(nd + 1) ** 2
                        - src_before
                        - int(sumsq[dst]) / float(nd) ** 2
                    )
                    if gain > best_gain:
                        best_gain = gain
                        best_dst = dst
                if best_dst < 0 or not _removal_keeps_connectivity(block_assign, r, c):
                    continue
                sumsq[src] += -2 * hist[src, b] + 1
                sumsq[best_dst] += 2 * hist[best_dst, b] + 1
                hist[src, b] -= 1
                hist[best_dst, b] += 1
                size[src] -= 1
                size[best_dst] += 1
            else:
                row = block_hist[r * wb + c]
                bins = np.nonzero(row)[0]
                counts = row[bins]
                for dst in candidates:
                    gain = state.move_gain(src, dst, bins, counts, m)
                    if gain > best_gain:
                        best_gain = gain
                        best_dst = dst
                if best_dst < 0 or not _removal_keeps_connectivity(block_assign, r, c):
                    continue
                state.apply_move(src, best_dst, bins, counts, m)
            block_assign[r, c] = best_dst
            assign[r * step : (r + 1) * step, c * step : (c + 1) * step] = best_dst
            moved += 1
        energy_log.append(state.energy())
        if not moved:
            break


def seeds_segment(
    image: np.ndarray,
    num_superpixels: int,
    num_levels: int = 3,
    iterations: int = 8,
    bins: int = 5,
    return_energy: bool = False,
):
    """Segment an (H, W, 3) image in [0, 1] into roughly ``num_superpixels``
    superpixels (the realized count is the nearest regular grid). With
    ``return_energy`` also returns the per-sweep energy trace."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("image must be (H, W, 3)")
    h, w = image.shape[:2]
    if num_superpixels < 1 or num_superpixels > h * w:
        raise ValueError("num_superpixels must be in [1, H*W]")
    if num_levels < 1:
        raise ValueError("num_levels must be >= 1")

    block = 2 ** (num_levels - 1)
    pad_h = (-h) % block
    pad_w = (-w) % block
    padded = np.pad(image, ((0, pad_h), (0, pad_w), (0, 0)), mode="edge")
    ph, pw = padded.shape[:2]
    quantized = _quantize(padded, bins)

    hb, wb = ph // block, pw // block
    rows, cols = _grid_dims(num_superpixels, hb, wb)
    row_edges = np.linspace(0, hb, rows + 1).astype(int)
    col_edges = np.linspace(0, wb, cols + 1).astype(int)
    top_assign = np.zeros((hb, wb), dtype=np.int64)
    for i in range(rows):
        for j in range(cols):
            top_assign[row_edges[i] : row_edges[i + 1], col_edges[j] : col_edges[j + 1]] = i * cols + j
    assign = np.repeat(np.repeat(top_assign, block, axis=0), block, axis=1)

    k = rows * cols
    state = _SeedsState(quantized, assign, k, bins**3)
    energy_log = [state.energy()]
    for level in range(num_levels - 1, -1, -1):
        _level_pass(assign, quantized, state, 2**level, iterations, energy_log)
    # hill climbing must never lose energy
    drops = np.diff(np.asarray(energy_log))
    if len(drops) and drops.min() < -1e-9:
        raise AssertionError("SEEDS energy decreased")

    result = _finalize(assign[:h, :w], image)
    if return_energy:
        return result, energy_log
    return result


def _finalize(assignment: np.ndarray, image: np.ndarray) -> SuperpixelMap:
    """Relabel into dense, 4-connected components (a no-op for unpadded
    segmentations; guards the connectivity invariant after padding strips)."""
    structure = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])
    out = np.zeros_like(assignment)
    next_id = 0
    for label in np.unique(assignment):
        comp, n = ndimage.label(assignment == label, structure=structure)
        for c in range(1, n + 1):
            out[comp == c] = next_id
            next_id += 1
    # renumber by first raster occurrence for determinism
    labels, first = np.unique(out.ravel(), return_index=True)
    remap = np.empty(next_id, dtype=np.int64)
    remap[labels[np.argsort(first)]] = np.arange(len(labels))
    dense = remap[out]

    k = next_id
    sizes = np.bincount(dense.ravel(), minlength=k).astype(np.int64)
    h, w = dense.shape
    vs, us = np.mgrid[0:h, 0:w]
    centroids = np.zeros((k, 2))
    np.add.at(centroids[:, 0], dense.ravel(), us.ravel())
    np.add.at(centroids[:, 1], dense.ravel(), vs.ravel())
    centroids /= sizes[:, None]
    mean_colors = np.zeros((k, 3))
    np.add.at(mean_colors, dense.ravel(), image.reshape(-1, 3))
    mean_colors /= sizes[:, None]
    return SuperpixelMap(
        assignment=dense,
        num_superpixels=k,
        sizes=sizes,
        centroids=centroids,
        mean_colors=mean_colors,
    )


def segmentation_energy(assignment: np.ndarray, image: np.ndarray, bins: int = 5) -> float:
    """Reference energy recomputation used by tests."""
    quantized = _quantize(np.asarray(image, dtype=np.float64), bins)
    k = int(assignment.max()) + 1
    hist = np.zeros((k, bins**3), dtype=np.int64)
    np.add.at(hist, (assignment.ravel(), quantized.ravel()), 1)
    sizes = np.bincount(assignment.ravel(), minlength=k)
    return float(np.sum((hist / np.maximum(sizes[:, None], 1)) ** 2))


def match_superpixels(spx: SuperpixelMap, hits, sparse_labels: dict[int, int]) -> list[MatchedSuperpixel]:
    """Superpixels containing at least one projected sparse-labeled point;
    one entry per (superpixel, class), carrying the supporting points."""
    groups: dict[tuple[int, int], list[int]] = {}
    for k in range(len(hits)):
        point = int(hits.point_index[k])
        if point not in sparse_labels:
            continue
        sp = int(spx.assignment[int(hits.v[k]), int(hits.u[k])])
        key = (sp, sparse_labels[point])
        groups.setdefault(key, []).append(point)
    return [
        MatchedSuperpixel(superpixel_id=sp, class_id=cls, point_indices=tuple(sorted(pts)))
        for (sp, cls), pts in sorted(groups.items())
    ]


def superpixel_features(spx: SuperpixelMap, feature_map: np.ndarray) -> np.ndarray:
    """Mean-pool an (H, W, D) feature map over each superpixel."""
    feature_map = np.asarray(feature_map)
    if feature_map.shape[:2] != spx.assignment.shape:
        raise ValueError("feature map does not match the superpixel map")
    d = feature_map.shape[2]
    out = np.zeros((spx.num_superpixels, d))
    np.add.at(out, spx.assignment.ravel(), feature_map.reshape(-1, d))
    return out / spx.sizes[:, None]
