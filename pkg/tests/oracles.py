"""Brute-force reference implementations, independent of the package code paths."""
import math

import numpy as np


def ranks_bruteforce(values):
    """Average (fractional) 1-based ranks by counting, O(n^2)."""
    out = []
    for v in values:
        below = sum(1 for u in values if u < v)
        equal = sum(1 for u in values if u == v)
        out.append(below + (equal + 1) / 2.0)
    return out


def pearson_bruteforce(x, y):
    n = len(x)
    mx = math.fsum(x) / n
    my = math.fsum(y) / n
    cov = math.fsum((a - mx) * (b - my) for a, b in zip(x, y))
    vx = math.fsum((a - mx) ** 2 for a in x)
    vy = math.fsum((b - my) ** 2 for b in y)
    return cov / math.sqrt(vx * vy)


def spearman_bruteforce(x, y):
    return pearson_bruteforce(ranks_bruteforce(list(x)), ranks_bruteforce(list(y)))


def spearman_no_ties(x, y):
    """1 - 6 sum d^2 / (n (n^2 - 1)), valid only without ties."""
    rx, ry = ranks_bruteforce(list(x)), ranks_bruteforce(list(y))
    n = len(x)
    d2 = sum((a - b) ** 2 for a, b in zip(rx, ry))
    return 1 - 6 * d2 / (n * (n * n - 1))


def adaptive_avg_pool_bruteforce(grid, ph, pw):
    """Per-cell means over floor/ceil windows, enumerated with plain loops."""
    H, W = len(grid), len(grid[0])
    out = [[0.0] * pw for _ in range(ph)]
    for i in range(ph):
        r0, r1 = math.floor(i * H / ph), math.ceil((i + 1) * H / ph)
        for j in range(pw):
            c0, c1 = math.floor(j * W / pw), math.ceil((j + 1) * W / pw)
            cells = [grid[r][c] for r in range(r0, r1) for c in range(c0, c1)]
            out[i][j] = sum(cells) / len(cells)
    return out


def cluster_bruteforce(features_color, positions, centers, spatial_weight, max_iter=100):
    """Alternating assignment/update over joint (colour, position) features.

    ``features_color``: list of per-pixel colour tuples; ``positions``: list of
    (y, x); ``centers``: list of (y, x, c...) initial centres. Every pixel is
    compared against every centre (no search window). Iterates to a fixed point.
    """
    centers = [list(c) for c in centers]
    labels = None
    for _ in range(max_iter):
        new_labels = []
        for col, (py, px) in zip(features_color, positions):
            best, best_k = math.inf, -1
            for k, c in enumerate(centers):
                dc = sum((a - b) ** 2 for a, b in zip(col, c[2:]))
                ds = (py - c[0]) ** 2 + (px - c[1]) ** 2
                d = dc + spatial_weight * ds
                if d < best:
                    best, best_k = d, k
            new_labels.append(best_k)
        for k in range(len(centers)):
            members = [i for i, l in enumerate(new_labels) if l == k]
            if members:
                dims = len(centers[k])
                feats = [(positions[i][0], positions[i][1], *features_color[i]) for i in members]
                centers[k] = [sum(f[d] for f in feats) / len(feats) for d in range(dims)]
        if new_labels == labels:
            break
        labels = new_labels
    return labels


def same_partition(a, b):
    """True when two label maps induce the same partition (up to relabelling)."""
    a, b = np.asarray(a).ravel(), np.asarray(b).ravel()
    fwd, bwd = {}, {}
    for x, y in zip(a, b):
        if fwd.setdefault(x, y) != y or bwd.setdefault(y, x) != x:
            return False
    return True


def srgb_to_lab_d65(rgb):
    """Textbook sRGB -> XYZ (D65) -> CIELAB for one pixel in [0, 1]."""
    def lin(c):
        return c / 12.92 if c <= 0.04045 else ((c + 0.055) / 1.055) ** 2.4

    r, g, b = (lin(c) for c in rgb)
    x = 0.412453 * r + 0.357580 * g + 0.180423 * b
    y = 0.212671 * r + 0.715160 * g + 0.072169 * b
    z = 0.019334 * r + 0.119193 * g + 0.950227 * b
    xn, yn, zn = 0.95047, 1.0, 1.08883

    def f(t):
        return t ** (1 / 3) if t > 0.008856 else 7.787 * t + 16 / 116

    fx, fy, fz = f(x / xn), f(y / yn), f(z / zn)
    L = 116 * fy - 16 if y / yn > 0.008856 else 903.3 * y / yn
    return (L, 500 * (fx - fy), 200 * (fy - fz))


def slic_oracle(rgb, seeds, compactness, n):
    """Brute-force clustering over every (pixel, centre) pair from the given seeds."""
    H, W = rgb.shape[:2]
    colours = [srgb_to_lab_d65(rgb[y, x]) for y in range(H) for x in range(W)]
    positions = [(y, x) for y in range(H) for x in range(W)]
    centers = [(sy, sx, *colours[int(round(sy)) * W + int(round(sx))]) for sy, sx in seeds]
    step = np.sqrt(H * W / n)
    labels = cluster_bruteforce(colours, positions, centers, (compactness / step) ** 2)
    return np.array(labels).reshape(H, W)
