"""Numba kernels for topology-preserving 3D thinning (26/6 connectivity).

Neighbourhood positions are indexed ``i = (dz+1)*9 + (dy+1)*3 + (dx+1)``; the centre is 13.
"""
from __future__ import annotations

import numpy as np
from numba import njit

CENTER = 13


def _offsets():
    return np.array(
        [(dz, dy, dx) for dz in (-1, 0, 1) for dy in (-1, 0, 1) for dx in (-1, 0, 1)],
        dtype=np.int64,
    )


def _build_tables():
    off = _offsets()
    # 26-adjacency between neighbourhood positions (centre excluded).
    adj26 = np.full((27, 26), -1, np.int64)
    n26 = np.zeros(27, np.int64)
    # 6-adjacency restricted to N18 (positions with at most two nonzero offsets).
    adj6 = np.full((27, 6), -1, np.int64)
    n6 = np.zeros(27, np.int64)
    in18 = np.zeros(27, np.bool_)
    for i in range(27):
        if i != CENTER and np.count_nonzero(off[i]) <= 2:
            in18[i] = True
    for i in range(27):
        if i == CENTER:
            continue
        for j in range(27):
            if j == CENTER or j == i:
                continue
            d = np.abs(off[i] - off[j])
            if d.max() == 1:
                adj26[i, n26[i]] = j
                n26[i] += 1
            if in18[i] and in18[j] and d.sum() == 1:
                adj6[i, n6[i]] = j
                n6[i] += 1
    faces = np.array([i for i in range(27) if np.abs(off[i]).sum() == 1], np.int64)

    def idx(dz, dy, dx):
        return (dz + 1) * 9 + (dy + 1) * 3 + (dx + 1)

    # Cells of the centre voxel's closed unit cube and the other voxels sharing each cell.
    corner_share = np.zeros((8, 7), np.int64)
    k = 0
    for sz in (-1, 1):
        for sy in (-1, 1):
            for sx in (-1, 1):
                m = 0
                for dz in (0, sz):
                    for dy in (0, sy):
                        for dx in (0, sx):
                            if dz == 0 and dy == 0 and dx == 0:
                                continue
                            corner_share[k, m] = idx(dz, dy, dx)
                            m += 1
                k += 1
    edge_share = np.zeros((12, 3), np.int64)
    k = 0
    for axis in range(3):
        for s1 in (-1, 1):
            for s2 in (-1, 1):
                m = 0
                for a in (0, s1):
                    for b in (0, s2):
                        if a == 0 and b == 0:
                            continue
                        o = [0, 0, 0]
                        others = [ax for ax in range(3) if ax != axis]
                        o[others[0]] = a
                        o[others[1]] = b
                        edge_share[k, m] = idx(o[0], o[1], o[2])
                        m += 1
                k += 1
    face_share = faces.copy()
    return adj26, n26, adj6, n6, in18, faces, corner_share, edge_share, face_share


ADJ26, N26, ADJ6, N6, IN18, FACES, CORNER_SHARE, EDGE_SHARE, FACE_SHARE = _build_tables()


@njit(cache=True)
def _gather(vol, z, y, x, nb):
    i = 0
    for dz in range(-1, 2):
        for dy in range(-1, 2):
            for dx in range(-1, 2):
                nb[i] = vol[z + dz, y + dy, x + dx]
                i += 1


@njit(cache=True)
def _euler_invariant(nb, corner_share, edge_share, face_share):
    own_v = 0
    for k in range(8):
        shared = False
        for m in range(7):
            if nb[corner_share[k, m]]:
                shared = True
                break
        if not shared:
            own_v += 1
    own_e = 0
    for k in range(12):
        shared = False
        for m in range(3):
            if nb[edge_share[k, m]]:
                shared = True
                break
        if not shared:
            own_e += 1
    own_f = 0
    for k in range(6):
        if not nb[face_share[k]]:
            own_f += 1
    return own_v - own_e + own_f - 1 == 0


@njit(cache=True)
def _is_simple(nb, adj26, n26, adj6, n6, in18, faces):
    # Foreground: exactly one 26-component in N26 minus the centre.
    seen = np.zeros(27, np.bool_)
    stack = np.empty(27, np.int64)
    comps = 0
    for s in range(27):
        if s == 13 or not nb[s] or seen[s]:
            continue
        comps += 1
        if comps > 1:
            return False
        top = 0
        stack[top] = s
        seen[s] = True
        while top >= 0:
            c = stack[top]
            top -= 1
            for k in range(n26[c]):
                j = adj26[c, k]
                if nb[j] and not seen[j]:
                    seen[j] = True
                    top += 1
                    stack[top] = j
    if comps != 1:
        return False
    # Background: exactly one 6-component of N18 minus the centre touching a face neighbour.
    seen[:] = False
    comps = 0
    for f in range(6):
        s = faces[f]
        if nb[s] or seen[s]:
            continue
        comps += 1
        if comps > 1:
            return False
        top = 0
        stack[top] = s
        seen[s] = True
        while top >= 0:
            c = stack[top]
            top -= 1
            for k in range(n6[c]):
                j = adj6[c, k]
                if in18[j] and not nb[j] and not seen[j]:
                    seen[j] = True
                    top += 1
                    stack[top] = j
    return comps == 1


@njit(cache=True)
def _count_neighbors(nb):
    n = 0
    for i in range(27):
        if i != 13 and nb[i]:
            n += 1
    return n


@njit(cache=True)
def thin_padded(vol, directions, adj26, n26, adj6, n6, in18, faces, corner_share, edge_share, face_share):
    """Thin ``vol`` (uint8, zero-padded by one voxel on every side) in place."""
    nz, ny, nx = vol.shape
    nb = np.zeros(27, np.uint8)
    cand = np.empty((nz * ny * nx, 3), np.int64)
    changed = True
    while changed:
        changed = False
        for d in range(directions.shape[0]):
            ddz = directions[d, 0]
            ddy = directions[d, 1]
            ddx = directions[d, 2]
            nc = 0
            for z in range(1, nz - 1):
                for y in range(1, ny - 1):
                    for x in range(1, nx - 1):
                        if vol[z, y, x] == 0 or vol[z + ddz, y + ddy, x + ddx] != 0:
                            continue
                        _gather(vol, z, y, x, nb)
                        if _count_neighbors(nb) <= 1:
                            continue
                        if not _euler_invariant(nb, corner_share, edge_share, face_share):
                            continue
                        if not _is_simple(nb, adj26, n26, adj6, n6, in18, faces):
                            continue
                        cand[nc, 0] = z
                        cand[nc, 1] = y
                        cand[nc, 2] = x
                        nc += 1
            for c in range(nc):
                z = cand[c, 0]
                y = cand[c, 1]
                x = cand[c, 2]
                _gather(vol, z, y, x, nb)
                # re-check: earlier deletions may have made this an end point or non-simple
                if _count_neighbors(nb) > 1 and _is_simple(nb, adj26, n26, adj6, n6, in18, faces):
                    vol[z, y, x] = 0
                    changed = True
    return vol


@njit(cache=True)
def neighbor_counts(vol):
    """26-neighbour foreground counts for every voxel of a zero-padded uint8 volume."""
    nz, ny, nx = vol.shape
    out = np.zeros((nz, ny, nx), np.int64)
    for z in range(1, nz - 1):
        for y in range(1, ny - 1):
            for x in range(1, nx - 1):
                if vol[z, y, x] == 0:
                    continue
                n = 0
                for dz in range(-1, 2):
                    for dy in range(-1, 2):
                        for dx in range(-1, 2):
                            if (dz or dy or dx) and vol[z + dz, y + dy, x + dx]:
                                n += 1
                out[z, y, x] = n
    return out
