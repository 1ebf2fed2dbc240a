"""Slow, obviously-correct reference implementations used only by tests."""

import itertools

import numpy as np


def clamp(v, lo, hi):
    return lo if v < lo else hi if v > hi else v


def block_sad(cur, ref, by, bx, b, dx, dy):
    h, w = ref.shape
    total = 0
    for y in range(by * b, by * b + b):
        for x in range(bx * b, bx * b + b):
            p = int(ref[clamp(y + dy, 0, h - 1), clamp(x + dx, 0, w - 1)])
            total += abs(int(cur[y, x]) - p)
    return total


def exhaustive_motion(cur, ref, b, r):
    """Per-block (dx, dy, sad) by trying every offset, pixel by pixel."""
    h, w = cur.shape
    out = {}
    for by in range(h // b):
        for bx in range(w // b):
            cands = []
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    sad = block_sad(cur, ref, by, bx, b, dx, dy)
                    cands.append((sad, dx * dx + dy * dy, dy, dx))
            sad, _, dy, dx = min(cands)
            out[by, bx] = (dx, dy, sad)
    return out


def rect_overlap_max(values, block, patch, grid_h, grid_w):
    """Max over blocks whose rectangle intersects each patch rectangle."""
    rows, cols = values.shape
    out = np.zeros((grid_h, grid_w))
    for pi, pj in itertools.product(range(grid_h), range(grid_w)):
        py0, px0 = pi * patch, pj * patch
        best = 0.0
        for bi, bj in itertools.product(range(rows), range(cols)):
            by0, bx0 = bi * block, bj * block
            iy = min(py0 + patch, by0 + block) - max(py0, by0)
            ix = min(px0 + patch, bx0 + block) - max(px0, bx0)
            if iy > 0 and ix > 0:
                best = max(best, float(values[bi, bj]))
        out[pi, pj] = best
    return out


def groups_by_index(active, g):
    """Set of retained (group_row, group_col) by scanning every patch."""
    keep = set()
    for i, j in zip(*np.nonzero(active)):
        keep.add((i // g, j // g))
    return keep
