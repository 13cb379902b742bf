"""Compiled inner loops: union-find, priority-flood watershed, ray marching.

Everything here works on C-ordered flat indices ``i = (x*ny + y)*nz + z``,
so ascending index order is lexicographic ``(x, y, z)`` order.
"""
import numpy as np
from numba import njit

_CACHE = True


@njit(cache=_CACHE)
def _find(parent, i):
    root = i
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:
        nxt = parent[i]
        parent[i] = root
        i = nxt
    return root


@njit(cache=_CACHE)
def _union(parent, a, b):
    ra = _find(parent, a)
    rb = _find(parent, b)
    if ra == rb:
        return
    # smaller index becomes the root so roots are component minima
    if ra < rb:
        parent[rb] = ra
    else:
        parent[ra] = rb


@njit(cache=_CACHE)
def components_kernel(aff, t, allowed):
    """Label 6-connected components over edges with affinity > t.

    Only voxels with ``allowed`` set take part.  Voxels without any
    qualifying edge stay 0.  Labels are numbered by their minimum voxel.
    """
    _, nx, ny, nz = aff.shape
    n = nx * ny * nz
    parent = np.arange(n)
    touched = np.zeros(n, dtype=np.bool_)
    for x in range(nx):
        for y in range(ny):
            for z in range(nz):
                i = (x * ny + y) * nz + z
                if not allowed[x, y, z]:
                    continue
                if x + 1 < nx and aff[0, x, y, z] > t and allowed[x + 1, y, z]:
                    j = i + ny * nz
                    _union(parent, i, j)
                    touched[i] = True
                    touched[j] = True
                if y + 1 < ny and aff[1, x, y, z] > t and allowed[x, y + 1, z]:
                    j = i + nz
                    _union(parent, i, j)
                    touched[i] = True
                    touched[j] = True
                if z + 1 < nz and aff[2, x, y, z] > t and allowed[x, y, z + 1]:
                    j = i + 1
                    _union(parent, i, j)
                    touched[i] = True
                    touched[j] = True
    labels = np.zeros(n, dtype=np.int32)
    root_label = np.zeros(n, dtype=np.int32)
    nxt = 0
    for i in range(n):
        if not touched[i]:
            continue
        r = _find(parent, i)
        if root_label[r] == 0:
            nxt += 1
            root_label[r] = nxt
        labels[i] = root_label[r]
    return labels.reshape((nx, ny, nz)), nxt


# -- binary heap keyed on (affinity desc, label asc, voxel asc) ---------------

@njit(cache=_CACHE)
def _less(ha, hl, hv, i, j):
    if ha[i] != ha[j]:
        return ha[i] > ha[j]
    if hl[i] != hl[j]:
        return hl[i] < hl[j]
    return hv[i] < hv[j]


@njit(cache=_CACHE)
def _swap(ha, hl, hv, hs, i, j):
    ha[i], ha[j] = ha[j], ha[i]
    hl[i], hl[j] = hl[j], hl[i]
    hv[i], hv[j] = hv[j], hv[i]
    hs[i], hs[j] = hs[j], hs[i]


@njit(cache=_CACHE)
def _push(ha, hl, hv, hs, size, a, lab, vox, src):
    i = size
    ha[i] = a
    hl[i] = lab
    hv[i] = vox
    hs[i] = src
    while i > 0:
        p = (i - 1) // 2
        if _less(ha, hl, hv, i, p):
            _swap(ha, hl, hv, hs, i, p)
            i = p
        else:
            break
    return size + 1


@njit(cache=_CACHE)
def _pop(ha, hl, hv, hs, size):
    size -= 1
    _swap(ha, hl, hv, hs, 0, size)
    i = 0
    while True:
        left = 2 * i + 1
        if left >= size:
            break
        best = left
        right = left + 1
        if right < size and _less(ha, hl, hv, right, left):
            best = right
        if _less(ha, hl, hv, best, i):
            _swap(ha, hl, hv, hs, i, best)
            i = best
        else:
            break
    return size


@njit(cache=_CACHE)
def _edge(aff, x, y, z, k, nx, ny, nz):
    """Affinity and neighbour coordinates of the k-th of the 6 edges at (x, y, z)."""
    if k == 0:
        if x + 1 < nx:
            return aff[0, x, y, z], x + 1, y, z
    elif k == 1:
        if x > 0:
            return aff[0, x - 1, y, z], x - 1, y, z
    elif k == 2:
        if y + 1 < ny:
            return aff[1, x, y, z], x, y + 1, z
    elif k == 3:
        if y > 0:
            return aff[1, x, y - 1, z], x, y - 1, z
    elif k == 4:
        if z + 1 < nz:
            return aff[2, x, y, z], x, y, z + 1
    else:
        if z > 0:
            return aff[2, x, y, z - 1], x, y, z - 1
    return np.float32(-1.0), -1, -1, -1


@njit(cache=_CACHE)
def grow_kernel(labels, aff, t):
    """Seeded priority-flood: labels spread along edges with affinity > t."""
    _, nx, ny, nz = aff.shape
    n = nx * ny * nz
    out = labels.copy()
    cap = 6 * n + 6
    ha = np.empty(cap, dtype=np.float32)
    hl = np.empty(cap, dtype=np.int32)
    hv = np.empty(cap, dtype=np.int32)
    hs = np.empty(cap, dtype=np.int32)
    size = 0
    for x in range(nx):
        for y in range(ny):
            for z in range(nz):
                lab = out[x, y, z]
                if lab == 0:
                    continue
                for k in range(6):
                    a, qx, qy, qz = _edge(aff, x, y, z, k, nx, ny, nz)
                    if qx >= 0 and a > t and out[qx, qy, qz] == 0:
                        size = _push(ha, hl, hv, hs, size, a, lab, (qx * ny + qy) * nz + qz, 0)
    while size > 0:
        lab = hl[0]
        v = hv[0]
        size = _pop(ha, hl, hv, hs, size)
        x = v // (ny * nz)
        y = (v // nz) % ny
        z = v % nz
        if out[x, y, z] != 0:
            continue
        out[x, y, z] = lab
        for k in range(6):
            a, qx, qy, qz = _edge(aff, x, y, z, k, nx, ny, nz)
            if qx >= 0 and a > t and out[qx, qy, qz] == 0:
                size = _push(ha, hl, hv, hs, size, a, lab, (qx * ny + qy) * nz + qz, 0)
    return out


@njit(cache=_CACHE)
def meet_kernel(labels, aff):
    """Flood labels 1 and 2 until they touch.

    Returns ``(affinity, source_voxel, target_voxel)`` of the first edge joining
    the two basins, or ``(0, -1, -1)`` when they never meet through edges
    with positive affinity.
    """
    _, nx, ny, nz = aff.shape
    n = nx * ny * nz
    out = labels.copy()
    cap = 6 * n + 6
    ha = np.empty(cap, dtype=np.float32)
    hl = np.empty(cap, dtype=np.int32)
    hv = np.empty(cap, dtype=np.int32)
    hs = np.empty(cap, dtype=np.int32)
    size = 0
    for x in range(nx):
        for y in range(ny):
            for z in range(nz):
                lab = out[x, y, z]
                if lab == 0:
                    continue
                src = (x * ny + y) * nz + z
                for k in range(6):
                    a, qx, qy, qz = _edge(aff, x, y, z, k, nx, ny, nz)
                    if qx >= 0 and a > 0 and out[qx, qy, qz] != lab:
                        size = _push(ha, hl, hv, hs, size, a, lab, (qx * ny + qy) * nz + qz, src)
    while size > 0:
        a = ha[0]
        lab = hl[0]
        v = hv[0]
        src = hs[0]
        size = _pop(ha, hl, hv, hs, size)
        x = v // (ny * nz)
        y = (v // nz) % ny
        z = v % nz
        cur = out[x, y, z]
        if cur == lab:
            continue
        if cur != 0:
            return a, src, v
        out[x, y, z] = lab
        for k in range(6):
            b, qx, qy, qz = _edge(aff, x, y, z, k, nx, ny, nz)
            if qx >= 0 and b > 0 and out[qx, qy, qz] != lab:
                size = _push(ha, hl, hv, hs, size, b, lab, (qx * ny + qy) * nz + qz, v)
    return np.float32(0.0), -1, -1


# -- ray marching ---------------------------------------------------------------

@njit(cache=_CACHE)
def trilinear(vol, px, py, pz):
    nx, ny, nz = vol.shape
    if px < 0.0:
        px = 0.0
    if py < 0.0:
        py = 0.0
    if pz < 0.0:
        pz = 0.0
    if px > nx - 1:
        px = nx - 1.0
    if py > ny - 1:
        py = ny - 1.0
    if pz > nz - 1:
        pz = nz - 1.0
    x0 = min(int(np.floor(px)), nx - 2) if nx > 1 else 0
    y0 = min(int(np.floor(py)), ny - 2) if ny > 1 else 0
    z0 = min(int(np.floor(pz)), nz - 2) if nz > 1 else 0
    fx = px - x0
    fy = py - y0
    fz = pz - z0
    x1 = min(x0 + 1, nx - 1)
    y1 = min(y0 + 1, ny - 1)
    z1 = min(z0 + 1, nz - 1)
    c00 = vol[x0, y0, z0] * (1 - fx) + vol[x1, y0, z0] * fx
    c10 = vol[x0, y1, z0] * (1 - fx) + vol[x1, y1, z0] * fx
    c01 = vol[x0, y0, z1] * (1 - fx) + vol[x1, y0, z1] * fx
    c11 = vol[x0, y1, z1] * (1 - fx) + vol[x1, y1, z1] * fx
    c0 = c00 * (1 - fy) + c10 * fy
    c1 = c01 * (1 - fy) + c11 * fy
    return c0 * (1 - fz) + c1 * fz


@njit(cache=_CACHE)
def _inside(shape, px, py, pz):
    return (px >= -0.5 and py >= -0.5 and pz >= -0.5
            and px < shape[0] - 0.5 and py < shape[1] - 0.5 and pz < shape[2] - 0.5)


@njit(cache=_CACHE)
def _nearest(p):
    return int(np.floor(p + 0.5))


@njit(cache=_CACHE)
def march_threshold(vol, origin, dirs, t, step):
    """Distance each ray travels before the interpolated value drops below t."""
    out = np.zeros(dirs.shape[0])
    shape = vol.shape
    for r in range(dirs.shape[0]):
        k = 0
        while True:
            s = k * step
            px = origin[0] + s * dirs[r, 0]
            py = origin[1] + s * dirs[r, 1]
            pz = origin[2] + s * dirs[r, 2]
            if not _inside(shape, px, py, pz):
                out[r] = max(s - step, 0.0)
                break
            if trilinear(vol, px, py, pz) < t:
                out[r] = s
                break
            k += 1
    return out


@njit(cache=_CACHE)
def march_mask_exit(mask, origin, dirs, step):
    """Distance each ray travels before its nearest voxel leaves ``mask``."""
    out = np.zeros(dirs.shape[0])
    shape = mask.shape
    for r in range(dirs.shape[0]):
        k = 0
        while True:
            s = k * step
            px = origin[0] + s * dirs[r, 0]
            py = origin[1] + s * dirs[r, 1]
            pz = origin[2] + s * dirs[r, 2]
            if not _inside(shape, px, py, pz):
                out[r] = max(s - step, 0.0)
                break
            if not mask[_nearest(px), _nearest(py), _nearest(pz)]:
                out[r] = s
                break
            k += 1
    return out


@njit(cache=_CACHE)
def march_through(mask, origin, dirs, step):
    """Length of each ray (to the window edge) spent inside ``mask``."""
    out = np.zeros(dirs.shape[0])
    shape = mask.shape
    for r in range(dirs.shape[0]):
        k = 0
        total = 0.0
        while True:
            s = k * step
            px = origin[0] + s * dirs[r, 0]
            py = origin[1] + s * dirs[r, 1]
            pz = origin[2] + s * dirs[r, 2]
            if not _inside(shape, px, py, pz):
                break
            if mask[_nearest(px), _nearest(py), _nearest(pz)]:
                total += step
            k += 1
        out[r] = total
    return out


@njit(cache=_CACHE)
def march_chords(mask, origins, dirs, point_idx, dir_idx, step):
    """Exit distance of ray ``dirs[dir_idx[k]]`` cast from ``origins[point_idx[k]]``, for every k."""
    out = np.zeros(point_idx.shape[0])
    shape = mask.shape
    for k in range(point_idx.shape[0]):
        i = point_idx[k]
        j = dir_idx[k]
        n = 1
        while True:
            s = n * step
            px = origins[i, 0] + s * dirs[j, 0]
            py = origins[i, 1] + s * dirs[j, 1]
            pz = origins[i, 2] + s * dirs[j, 2]
            if not _inside(shape, px, py, pz):
                out[k] = s - step
                break
            if not mask[_nearest(px), _nearest(py), _nearest(pz)]:
                out[k] = s
                break
            n += 1
    return out


# -- level set / GVF stencils -----------------------------------------------

@njit(cache=_CACHE)
def advect_step(phi, vel, dt):
    """One first-order upwind step of phi_t + V . grad(phi) = 0 (edge-clamped)."""
    nx, ny, nz = phi.shape
    out = np.empty_like(phi)
    for x in range(nx):
        xm = max(x - 1, 0)
        xp = min(x + 1, nx - 1)
        for y in range(ny):
            ym = max(y - 1, 0)
            yp = min(y + 1, ny - 1)
            for z in range(nz):
                zm = max(z - 1, 0)
                zp = min(z + 1, nz - 1)
                p = phi[x, y, z]
                vx = vel[0, x, y, z]
                vy = vel[1, x, y, z]
                vz = vel[2, x, y, z]
                if vx > 0:
                    gx = p - phi[xm, y, z]
                else:
                    gx = phi[xp, y, z] - p
                if vy > 0:
                    gy = p - phi[x, ym, z]
                else:
                    gy = phi[x, yp, z] - p
                if vz > 0:
                    gz = p - phi[x, y, zm]
                else:
                    gz = phi[x, y, zp] - p
                out[x, y, z] = p - dt * (vx * gx + vy * gy + vz * gz)
    return out


@njit(cache=_CACHE)
def gvf_step(u, fx, mag2, mu, dt):
    """u <- u + dt*(mu*lap(u) - |grad f|^2 (u - grad f)) with zero-flux borders."""
    c, nx, ny, nz = u.shape
    out = np.empty_like(u)
    for k in range(c):
        for x in range(nx):
            xm = max(x - 1, 0)
            xp = min(x + 1, nx - 1)
            for y in range(ny):
                ym = max(y - 1, 0)
                yp = min(y + 1, ny - 1)
                for z in range(nz):
                    zm = max(z - 1, 0)
                    zp = min(z + 1, nz - 1)
                    p = u[k, x, y, z]
                    lap = (u[k, xm, y, z] + u[k, xp, y, z] + u[k, x, ym, z]
                           + u[k, x, yp, z] + u[k, x, y, zm] + u[k, x, y, zp] - 6.0 * p)
                    out[k, x, y, z] = p + dt * (mu * lap - mag2[x, y, z] * (p - fx[k, x, y, z]))
    return out
