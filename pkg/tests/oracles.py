"""Brute-force reference implementations shared by the unit and acceptance tests."""

import heapq
import math

from fpexplore.mapping import FREE, UNKNOWN


def frontier_oracle(cells):
    """Free cells with an Unknown 8-neighbor, by double loop, in row-major order."""
    rows, cols = cells.shape
    out = []
    for r in range(rows):
        for c in range(cols):
            if cells[r, c] != FREE:
                continue
            if any(0 <= r + dr < rows and 0 <= c + dc < cols and cells[r + dr, c + dc] == UNKNOWN
                   for dr in (-1, 0, 1) for dc in (-1, 0, 1) if dr or dc):
                out.append((r, c))
    return out


def dijkstra_cost(free, s, g):
    """8-connected shortest path cost in cells (straight 1, diagonal sqrt 2); inf if cut off."""
    rows, cols = free.shape
    dist = {s: 0.0}
    heap = [(0.0, s)]
    while heap:
        d, (r, c) = heapq.heappop(heap)
        if (r, c) == g:
            return d
        if d > dist[(r, c)]:
            continue
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                nr, nc = r + dr, c + dc
                if (dr or dc) and 0 <= nr < rows and 0 <= nc < cols and free[nr, nc]:
                    nd = d + (math.sqrt(2) if dr and dc else 1.0)
                    if nd < dist.get((nr, nc), math.inf):
                        dist[(nr, nc)] = nd
                        heapq.heappush(heap, (nd, (nr, nc)))
    return math.inf
