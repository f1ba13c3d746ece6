"""Per-triangle geometry kernels.

Everything downstream (operators, curvatures, residuals) is assembled from
one fused pass over the triangle list.  The pass exists twice: a numba
version for speed and a vectorized numpy version used as fallback.  Select
with the environment variable HELFTUBE_BACKEND=numba|numpy (default: numba
when importable).
"""

import os
import numpy as np

try:
    from numba import njit
    _HAS_NUMBA = True
except ImportError:
    _HAS_NUMBA = False

_env = os.environ.get("HELFTUBE_BACKEND", "").strip().lower()
if _env == "numpy":
    USE_NUMBA = False
elif _env == "numba":
    if not _HAS_NUMBA:
        raise ImportError("HELFTUBE_BACKEND=numba but numba is not importable")
    USE_NUMBA = True
else:
    USE_NUMBA = _HAS_NUMBA


def backend_name():
    return "numba" if USE_NUMBA else "numpy"


def _tri_pass_py(verts, tris, master, ndof):
    """Fused triangle pass, vectorized numpy implementation.

    Returns (areas, cots, tnormals, vmass, angsum, vnormal, lapx, coo_i,
    coo_j, coo_v, agrad, vgrad).  See the numba twin for the layout.
    """
    p0 = verts[tris[:, 0]]
    p1 = verts[tris[:, 1]]
    p2 = verts[tris[:, 2]]
    # edge opposite corner c is from the other two corners
    e0 = p2 - p1
    e1 = p0 - p2
    e2 = p1 - p0
    cr = np.cross(e2, -e1)          # (p1-p0) x (p2-p0)
    dbl = np.linalg.norm(cr, axis=1)
    areas = 0.5 * dbl
    tn = cr / dbl[:, None]
    # cot at corner k: adjacent edges meet there
    d0 = np.einsum("ij,ij->i", -e1, e2)     # at corner 0: (p2-p0).(p1-p0)
    d1 = np.einsum("ij,ij->i", -e2, e0)
    d2 = np.einsum("ij,ij->i", -e0, e1)
    cots = np.stack([d0, d1, d2], axis=1) / dbl[:, None]
    angs = np.stack([np.arctan2(dbl, d0), np.arctan2(dbl, d1),
                     np.arctan2(dbl, d2)], axis=1)

    m = master[tris]                         # (nt,3) dof ids
    vmass = np.zeros(ndof)
    angsum = np.zeros(ndof)
    vnormal = np.zeros((ndof, 3))
    lapx = np.zeros((ndof, 3))
    agrad = np.zeros((ndof, 3))
    vgrad = np.zeros((ndof, 3))

    np.add.at(angsum, m[:, 0], angs[:, 0])
    np.add.at(angsum, m[:, 1], angs[:, 1])
    np.add.at(angsum, m[:, 2], angs[:, 2])

    for k in range(3):
        np.add.at(vnormal, m[:, k], tn * areas[:, None])

    # mixed Voronoi cell areas: cotan formula, obtuse corners fall back to
    # area/2 at the obtuse corner and area/4 at the others
    sq0 = np.einsum("ij,ij->i", e0, e0)
    sq1 = np.einsum("ij,ij->i", e1, e1)
    sq2 = np.einsum("ij,ij->i", e2, e2)
    ob0 = d0 < 0.0
    ob1 = d1 < 0.0
    ob2 = d2 < 0.0
    nonob = ~(ob0 | ob1 | ob2)
    w0 = np.where(nonob, (sq1 * cots[:, 1] + sq2 * cots[:, 2]) / 8.0,
                  np.where(ob0, areas / 2.0, areas / 4.0))
    w1 = np.where(nonob, (sq2 * cots[:, 2] + sq0 * cots[:, 0]) / 8.0,
                  np.where(ob1, areas / 2.0, areas / 4.0))
    w2 = np.where(nonob, (sq0 * cots[:, 0] + sq1 * cots[:, 1]) / 8.0,
                  np.where(ob2, areas / 2.0, areas / 4.0))
    np.add.at(vmass, m[:, 0], w0)
    np.add.at(vmass, m[:, 1], w1)
    np.add.at(vmass, m[:, 2], w2)

    # stiffness action on coordinates, with local (unwrapped) positions
    pts = (p0, p1, p2)
    nt = len(tris)
    coo_i = np.empty(12 * nt, dtype=np.int64)
    coo_j = np.empty(12 * nt, dtype=np.int64)
    coo_v = np.empty(12 * nt)
    idx = 0
    for c, (a, b) in enumerate(((1, 2), (2, 0), (0, 1))):
        w = 0.5 * cots[:, c]
        diff = pts[a] - pts[b]
        np.add.at(lapx, m[:, a], w[:, None] * diff)
        np.add.at(lapx, m[:, b], -w[:, None] * diff)
        n4 = 4 * nt
        coo_i[idx:idx + nt] = m[:, a]
        coo_j[idx:idx + nt] = m[:, b]
        coo_v[idx:idx + nt] = -w
        coo_i[idx + nt:idx + 2 * nt] = m[:, b]
        coo_j[idx + nt:idx + 2 * nt] = m[:, a]
        coo_v[idx + nt:idx + 2 * nt] = -w
        coo_i[idx + 2 * nt:idx + 3 * nt] = m[:, a]
        coo_j[idx + 2 * nt:idx + 3 * nt] = m[:, a]
        coo_v[idx + 2 * nt:idx + 3 * nt] = w
        coo_i[idx + 3 * nt:idx + 4 * nt] = m[:, b]
        coo_j[idx + 3 * nt:idx + 4 * nt] = m[:, b]
        coo_v[idx + 3 * nt:idx + 4 * nt] = w
        idx += n4

    # shape gradients of total area and of the lateral volume integral
    for k, (a, b) in enumerate(((1, 2), (2, 0), (0, 1))):
        g = 0.5 * np.cross(tn, pts[b] - pts[a])
        np.add.at(agrad, m[:, k], g)
    # lateral volume = -(1/6) sum det[p0,p1,p2] for inward orientation
    np.add.at(vgrad, m[:, 0], -np.cross(p1, p2) / 6.0)
    np.add.at(vgrad, m[:, 1], -np.cross(p2, p0) / 6.0)
    np.add.at(vgrad, m[:, 2], -np.cross(p0, p1) / 6.0)

    return (areas, cots, tn, vmass, angsum, vnormal, lapx,
            coo_i, coo_j, coo_v, agrad, vgrad)


if _HAS_NUMBA:

    @njit(cache=True)
    def _tri_pass_nb(verts, tris, master, ndof):
        nt = tris.shape[0]
        areas = np.empty(nt)
        cots = np.empty((nt, 3))
        tn = np.empty((nt, 3))
        vmass = np.zeros(ndof)
        angsum = np.zeros(ndof)
        vnormal = np.zeros((ndof, 3))
        lapx = np.zeros((ndof, 3))
        agrad = np.zeros((ndof, 3))
        vgrad = np.zeros((ndof, 3))
        coo_i = np.empty(12 * nt, dtype=np.int64)
        coo_j = np.empty(12 * nt, dtype=np.int64)
        coo_v = np.empty(12 * nt)

        p = np.empty((3, 3))
        e = np.empty((3, 3))
        d = np.empty(3)
        sq = np.empty(3)
        w = np.empty(3)
        for t in range(nt):
            i0 = tris[t, 0]
            i1 = tris[t, 1]
            i2 = tris[t, 2]
            m0 = master[i0]
            m1 = master[i1]
            m2 = master[i2]
            for c in range(3):
                p[0, c] = verts[i0, c]
                p[1, c] = verts[i1, c]
                p[2, c] = verts[i2, c]
            for c in range(3):
                e[0, c] = p[2, c] - p[1, c]
                e[1, c] = p[0, c] - p[2, c]
                e[2, c] = p[1, c] - p[0, c]
            cx = e[2, 1] * (-e[1, 2]) - e[2, 2] * (-e[1, 1])
            cy = e[2, 2] * (-e[1, 0]) - e[2, 0] * (-e[1, 2])
            cz = e[2, 0] * (-e[1, 1]) - e[2, 1] * (-e[1, 0])
            dbl = np.sqrt(cx * cx + cy * cy + cz * cz)
            ar = 0.5 * dbl
            areas[t] = ar
            tn[t, 0] = cx / dbl
            tn[t, 1] = cy / dbl
            tn[t, 2] = cz / dbl
            d[0] = -(e[1, 0] * e[2, 0] + e[1, 1] * e[2, 1] + e[1, 2] * e[2, 2])
            d[1] = -(e[2, 0] * e[0, 0] + e[2, 1] * e[0, 1] + e[2, 2] * e[0, 2])
            d[2] = -(e[0, 0] * e[1, 0] + e[0, 1] * e[1, 1] + e[0, 2] * e[1, 2])
            for c in range(3):
                cots[t, c] = d[c] / dbl
                sq[c] = e[c, 0] ** 2 + e[c, 1] ** 2 + e[c, 2] ** 2
            angsum[m0] += np.arctan2(dbl, d[0])
            angsum[m1] += np.arctan2(dbl, d[1])
            angsum[m2] += np.arctan2(dbl, d[2])
            for c in range(3):
                vnormal[m0, c] += tn[t, c] * ar
                vnormal[m1, c] += tn[t, c] * ar
                vnormal[m2, c] += tn[t, c] * ar
            if d[0] < 0.0 or d[1] < 0.0 or d[2] < 0.0:
                for c in range(3):
                    w[c] = ar / 4.0
                    if d[c] < 0.0:
                        w[c] = ar / 2.0
            else:
                w[0] = (sq[1] * cots[t, 1] + sq[2] * cots[t, 2]) / 8.0
                w[1] = (sq[2] * cots[t, 2] + sq[0] * cots[t, 0]) / 8.0
                w[2] = (sq[0] * cots[t, 0] + sq[1] * cots[t, 1]) / 8.0
            vmass[m0] += w[0]
            vmass[m1] += w[1]
            vmass[m2] += w[2]

            mm = (m0, m1, m2)
            base = 12 * t
            for c in range(3):
                a = (c + 1) % 3
                b = (c + 2) % 3
                wc = 0.5 * cots[t, c]
                for k in range(3):
                    diff = p[a, k] - p[b, k]
                    lapx[mm[a], k] += wc * diff
                    lapx[mm[b], k] -= wc * diff
                o = base + 4 * c
                coo_i[o] = mm[a]
                coo_j[o] = mm[b]
                coo_v[o] = -wc
                coo_i[o + 1] = mm[b]
                coo_j[o + 1] = mm[a]
                coo_v[o + 1] = -wc
                coo_i[o + 2] = mm[a]
                coo_j[o + 2] = mm[a]
                coo_v[o + 2] = wc
                coo_i[o + 3] = mm[b]
                coo_j[o + 3] = mm[b]
                coo_v[o + 3] = wc

            for c in range(3):
                a = (c + 1) % 3
                b = (c + 2) % 3
                gx = 0.5 * (tn[t, 1] * (p[b, 2] - p[a, 2]) - tn[t, 2] * (p[b, 1] - p[a, 1]))
                gy = 0.5 * (tn[t, 2] * (p[b, 0] - p[a, 0]) - tn[t, 0] * (p[b, 2] - p[a, 2]))
                gz = 0.5 * (tn[t, 0] * (p[b, 1] - p[a, 1]) - tn[t, 1] * (p[b, 0] - p[a, 0]))
                vgx = -(p[a, 1] * p[b, 2] - p[a, 2] * p[b, 1]) / 6.0
                vgy = -(p[a, 2] * p[b, 0] - p[a, 0] * p[b, 2]) / 6.0
                vgz = -(p[a, 0] * p[b, 1] - p[a, 1] * p[b, 0]) / 6.0
                agrad[mm[c], 0] += gx
                agrad[mm[c], 1] += gy
                agrad[mm[c], 2] += gz
                vgrad[mm[c], 0] += vgx
                vgrad[mm[c], 1] += vgy
                vgrad[mm[c], 2] += vgz

        return (areas, cots, tn, vmass, angsum, vnormal, lapx,
                coo_i, coo_j, coo_v, agrad, vgrad)


def tri_pass(verts, tris, master, ndof):
    """One pass over all triangles.

    Returns a tuple of
      areas     (nt,)    triangle areas
      cots      (nt,3)   cotangent of the angle at each corner
      tnormals  (nt,3)   unit triangle normals from the vertex order
      vmass     (ndof,)  mixed Voronoi vertex areas
      angsum    (ndof,)  total interior angle at each vertex
      vnormal   (ndof,3) area-weighted normal accumulator (not unit)
      lapx      (ndof,3) cotan stiffness applied to the local coordinates
      coo_i/j/v           COO triplets of the stiffness matrix
      agrad     (ndof,3) shape gradient of the total area
      vgrad     (ndof,3) shape gradient of the lateral volume integral
    """
    if USE_NUMBA:
        return _tri_pass_nb(verts, tris, master, ndof)
    return _tri_pass_py(verts, tris, master, ndof)
