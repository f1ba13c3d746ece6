"""Periodic triangulated cylinder meshes.

A tube mesh is an open triangulated cylinder whose two boundary rings are
identified through ``periodic_pairs``: every left-ring vertex (at x = 0)
owns a translated copy at x = L.  All fields and operators live on the
quotient (the identified degrees of freedom); the paired copy only exists
so triangles near the seam have honest coordinates.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


@dataclass(eq=False)
class SurfaceMesh:
    """Triangulated tube (or closed surface, with no pairs).

    vertices      (nv, 3) float array
    triangles     (nt, 3) int array, inward-oriented vertex order
    periodic_pairs  {left_vid: right_vid}; right = left + (L, 0, 0)
    axial_period  L
    inward        orientation flag (True: triangle normals point to axis)
    left_ring     ordered cycle of left-boundary vids, CCW in (y, z)
    ref_area      mean triangle area frozen at creation (refinement unit)
    """
    vertices: np.ndarray
    triangles: np.ndarray
    periodic_pairs: dict
    axial_period: float
    inward: bool = True
    left_ring: np.ndarray = field(default=None)
    ref_area: float = None

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        self.periodic_pairs = {int(k): int(v)
                               for k, v in self.periodic_pairs.items()}
        if self.left_ring is None:
            self.left_ring = np.empty(0, dtype=np.int64)
        self.left_ring = np.asarray(self.left_ring, dtype=np.int64)
        if self.ref_area is None:
            self.ref_area = float(np.mean(
                triangle_areas(self.vertices, self.triangles)))

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def right_ring(self):
        return np.array([self.periodic_pairs[int(v)] for v in self.left_ring],
                        dtype=np.int64)

    def _dof_tables(self):
        if "_dofs" not in self.__dict__:
            nv = self.n_vertices
            dofs = np.full(nv, -1, dtype=np.int64)
            slaves = set(self.periodic_pairs.values())
            rep = []
            for v in range(nv):
                if v in slaves:
                    continue
                dofs[v] = len(rep)
                rep.append(v)
            for lft, rgt in self.periodic_pairs.items():
                dofs[rgt] = dofs[lft]
            self._dofs = dofs
            self._rep = np.array(rep, dtype=np.int64)
        return self._dofs, self._rep

    @property
    def dofs(self):
        """Vertex id -> degree-of-freedom id (paired copies share one)."""
        return self._dof_tables()[0]

    @property
    def rep_vertices(self):
        """One representative vertex id per degree of freedom."""
        return self._dof_tables()[1]

    @property
    def ndof(self):
        return len(self.rep_vertices)

    @property
    def ring_dofs(self):
        return self.dofs[self.left_ring]

    def expand(self, f):
        """DOF field -> per-vertex field (pairs get equal values)."""
        f = np.asarray(f)
        if f.shape[0] != self.ndof:
            raise ValueError("expected a DOF-length field")
        return f[self.dofs]

    def restrict(self, f, check=True):
        """Per-vertex field -> DOF field; pairs must carry equal values."""
        f = np.asarray(f, dtype=np.float64)
        if f.shape[0] != self.n_vertices:
            raise ValueError("expected a vertex-length field")
        if check and self.periodic_pairs:
            lft = np.fromiter(self.periodic_pairs.keys(), dtype=np.int64)
            rgt = np.fromiter(self.periodic_pairs.values(), dtype=np.int64)
            if not np.allclose(f[lft], f[rgt], rtol=0.0, atol=1e-10):
                raise ValueError("periodic pairs carry unequal values")
        return f[self.rep_vertices]

    def copy(self):
        return SurfaceMesh(self.vertices.copy(), self.triangles.copy(),
                           dict(self.periodic_pairs), self.axial_period,
                           self.inward, self.left_ring.copy(), self.ref_area)

    def with_vertices(self, verts):
        """Same topology on new coordinates."""
        return SurfaceMesh(verts, self.triangles, self.periodic_pairs,
                           self.axial_period, self.inward, self.left_ring,
                           self.ref_area)

    def validate(self, tol=1e-8):
        """Manifold / pairing / orientation check.  Returns (ok, message)."""
        nv, nt = self.n_vertices, self.n_triangles
        tris = self.triangles
        if tris.size and (tris.min() < 0 or tris.max() >= nv):
            return False, "triangle references an invalid vertex"
        for t in range(nt):
            if len(set(tris[t])) != 3:
                return False, "degenerate triangle (repeated vertex)"
        halves = {}
        for t in range(nt):
            for c in range(3):
                a, b = int(tris[t, c]), int(tris[t, (c + 1) % 3])
                halves[(a, b)] = halves.get((a, b), 0) + 1
        for (a, b), cnt in halves.items():
            if cnt > 1:
                return False, "inconsistent orientation (repeated half-edge)"
        boundary = [e for e in halves if (e[1], e[0]) not in halves]
        ne = (len(halves) + len(boundary)) // 2
        chi = nv - ne + nt
        if self.periodic_pairs:
            lft = list(self.periodic_pairs.keys())
            rgt = list(self.periodic_pairs.values())
            if len(set(lft)) != len(lft) or len(set(rgt)) != len(rgt):
                return False, "periodic pairs not bijective"
            if set(lft) & set(rgt):
                return False, "a vertex is paired on both sides"
            shift = np.array([self.axial_period, 0.0, 0.0])
            dev = np.abs(self.vertices[rgt] - self.vertices[lft] - shift)
            if dev.max() > tol:
                return False, "paired vertices do not differ by (L, 0, 0)"
            if chi != 0:
                return False, "Euler characteristic changed (expected 0)"
            bset = set(boundary)
            for ring in (self.left_ring, self.right_ring):
                n = len(ring)
                ok_fwd = all((int(ring[i]), int(ring[(i + 1) % n])) in bset
                             for i in range(n))
                ok_bwd = all((int(ring[(i + 1) % n]), int(ring[i])) in bset
                             for i in range(n))
                if not (ok_fwd or ok_bwd):
                    return False, "boundary ring is not a stored cycle"
            if len(boundary) != len(self.left_ring) + len(self.right_ring):
                return False, "stray boundary edges beyond the two rings"
        else:
            if boundary:
                return False, "unpaired boundary loop"
            if chi != 2:
                return False, "closed surface with nonspherical topology"
        return True, "ok"


def triangle_areas(verts, tris):
    p0, p1, p2 = verts[tris[:, 0]], verts[tris[:, 1]], verts[tris[:, 2]]
    return 0.5 * np.linalg.norm(np.cross(p1 - p0, p2 - p0), axis=1)


def triangle_qualities(verts, tris):
    """Per-triangle quotient: longest edge times perimeter over twice the
    area.  Equilateral floor is 2*sqrt(3)."""
    p0, p1, p2 = verts[tris[:, 0]], verts[tris[:, 1]], verts[tris[:, 2]]
    e0 = np.linalg.norm(p2 - p1, axis=1)
    e1 = np.linalg.norm(p0 - p2, axis=1)
    e2 = np.linalg.norm(p1 - p0, axis=1)
    areas = triangle_areas(verts, tris)
    emax = np.maximum(e0, np.maximum(e1, e2))
    with np.errstate(divide="ignore"):
        return emax * (e0 + e1 + e2) / (2.0 * areas)


def mesh_quality(mesh):
    """Worst triangle-quality quotient of the mesh."""
    return float(triangle_qualities(mesh.vertices, mesh.triangles).max())


def build_cylinder_mesh(L, r, target_nodes):
    """Structured staggered grid wrapped onto the cylinder of radius r.

    The azimuthal and axial counts are chosen so the triangles come out
    near-equilateral (axial spacing ~ sqrt(3)/2 of the azimuthal one),
    which minimizes the quality quotient for this family of grids.  Row
    parity alternates a half-cell azimuthal offset; the last row is the
    periodic copy of the first.

    Parameters
    ----------
    L, r : floats, axial period and radius.
    target_nodes : requested number of degrees of freedom (approximate).
    """
    if L <= 0.0 or r <= 0.0:
        raise ValueError("need positive L and r")
    if target_nodes < 64:
        raise ValueError("need target_nodes >= 64")
    nphi = int(round(math.sqrt(target_nodes * math.sqrt(3.0) * math.pi
                               * r / L) / 2.0)) * 2
    if nphi < 3:
        raise ValueError("target too small to close the tube: "
                         "fewer than 3 azimuthal nodes")
    nx = int(math.ceil(target_nodes / nphi))
    nx += nx % 2
    nx = max(nx, 2)

    dphi = 2.0 * math.pi / nphi
    h = L / nx
    jj = np.arange(nx + 1)
    ii = np.arange(nphi)
    phi = (ii[None, :] + 0.5 * (jj[:, None] % 2)) * dphi
    verts = np.empty(((nx + 1) * nphi, 3))
    verts[:, 0] = np.repeat(jj * h, nphi)
    verts[:, 1] = (r * np.cos(phi)).ravel()
    verts[:, 2] = (r * np.sin(phi)).ravel()

    tris = np.empty((2 * nx * nphi, 3), dtype=np.int64)
    t = 0
    for j in range(nx):
        a = j * nphi + ii
        a1 = j * nphi + (ii + 1) % nphi
        b = (j + 1) * nphi + ii
        b1 = (j + 1) * nphi + (ii + 1) % nphi
        if j % 2 == 0:
            tris[t:t + nphi] = np.stack([a, b, a1], axis=1)
            tris[t + nphi:t + 2 * nphi] = np.stack([a1, b, b1], axis=1)
        else:
            tris[t:t + nphi] = np.stack([a, b, b1], axis=1)
            tris[t + nphi:t + 2 * nphi] = np.stack([a, b1, a1], axis=1)
        t += 2 * nphi
    pairs = {int(i): int(nx * nphi + i) for i in range(nphi)}
    return SurfaceMesh(verts, tris, pairs, float(L), True,
                       np.arange(nphi, dtype=np.int64))


def _edge(a, b):
    return (a, b) if a < b else (b, a)


def _refine(mesh, marked_tris):
    """Red-green refinement of the marked triangles.

    Edge marks are closed under two rules until stable: a triangle with
    two marked edges is promoted to red (all three), and a marked edge
    between paired vertices marks its translated copy, so refinement at
    one boundary ring mirrors at the other.
    """
    tris = mesh.triangles
    nt = len(tris)
    verts = mesh.vertices
    pairs = dict(mesh.periodic_pairs)
    partner = {}
    for lft, rgt in pairs.items():
        partner[lft] = rgt
        partner[rgt] = lft

    tri_edges = []
    edge_set = set()
    for t in range(nt):
        v0, v1, v2 = (int(x) for x in tris[t])
        es = (_edge(v1, v2), _edge(v2, v0), _edge(v0, v1))
        tri_edges.append(es)
        edge_set.update(es)

    marked = set()
    for t in np.flatnonzero(marked_tris):
        marked.update(tri_edges[t])
    changed = True
    while changed:
        changed = False
        for e in list(marked):
            a, b = e
            if a in partner and b in partner:
                pe = _edge(partner[a], partner[b])
                if pe in edge_set and pe not in marked:
                    marked.add(pe)
                    changed = True
        for t in range(nt):
            es = tri_edges[t]
            hit = sum(e in marked for e in es)
            if hit == 2:
                for e in es:
                    if e not in marked:
                        marked.add(e)
                        changed = True

    left_set = set(int(v) for v in mesh.left_ring)
    new_pos = []
    mid = {}

    def new_vid(pos):
        new_pos.append(pos)
        return len(verts) + len(new_pos) - 1

    for e in sorted(marked):
        if e in mid:
            continue
        a, b = e
        vm = new_vid(0.5 * (verts[a] + verts[b]))
        mid[e] = vm
        if a in partner and b in partner:
            pe = _edge(partner[a], partner[b])
            if pe in edge_set and pe not in mid:
                pa, pb = pe
                pm = new_vid(0.5 * (verts[pa] + verts[pb]))
                mid[pe] = pm
                if a in left_set and b in left_set:
                    pairs[vm] = pm
                else:
                    pairs[pm] = vm

    out = []
    for t in range(nt):
        v0, v1, v2 = (int(x) for x in tris[t])
        e0, e1, e2 = tri_edges[t]
        m0, m1, m2 = mid.get(e0), mid.get(e1), mid.get(e2)
        hit = sum(m is not None for m in (m0, m1, m2))
        if hit == 0:
            out.append((v0, v1, v2))
        elif hit == 3:
            out.extend([(v0, m2, m1), (v1, m0, m2), (v2, m1, m0),
                        (m0, m1, m2)])
        else:
            if m0 is not None:
                out.extend([(v0, v1, m0), (v0, m0, v2)])
            elif m1 is not None:
                out.extend([(v1, v2, m1), (v1, m1, v0)])
            else:
                out.extend([(v2, v0, m2), (v2, m2, v1)])

    ring = [int(v) for v in mesh.left_ring]
    new_ring = []
    for i, a in enumerate(ring):
        new_ring.append(a)
        e = _edge(a, ring[(i + 1) % len(ring)])
        if e in mid:
            new_ring.append(mid[e])
    return SurfaceMesh(np.vstack([verts, np.array(new_pos)]),
                       np.array(out, dtype=np.int64), pairs,
                       mesh.axial_period, mesh.inward,
                       np.array(new_ring, dtype=np.int64), mesh.ref_area)


def _flip_edge(verts, tris, a, b):
    """Flip the interior edge (a, b); returns new triangle array or None."""
    owners = []
    for t in range(len(tris)):
        s = set(int(x) for x in tris[t])
        if a in s and b in s:
            owners.append(t)
    if len(owners) != 2:
        return None
    t1, t2 = owners
    c = (set(int(x) for x in tris[t1]) - {a, b}).pop()
    d = (set(int(x) for x in tris[t2]) - {a, b}).pop()
    if c == d:
        return None
    for t in range(len(tris)):
        s = set(int(x) for x in tris[t])
        if c in s and d in s:
            return None
    # orient children like t1: walk t1's cycle to find a -> b or b -> a
    tri1 = [int(x) for x in tris[t1]]
    i = tri1.index(a)
    a_then_b = tri1[(i + 1) % 3] == b
    if not a_then_b:
        a, b = b, a
    new1 = (a, d, c)
    new2 = (b, c, d)
    for tri in (new1, new2):
        p = verts[list(tri)]
        if 0.5 * np.linalg.norm(np.cross(p[1] - p[0], p[2] - p[0])) < 1e-14:
            return None
    old_q = triangle_qualities(verts, tris[[t1, t2]]).max()
    cand = np.array([new1, new2], dtype=np.int64)
    if triangle_qualities(verts, cand).max() >= old_q:
        return None
    out = tris.copy()
    out[t1] = new1
    out[t2] = new2
    return out


def _collapse_edge(mesh, a, b):
    """Collapse (a, b) by merging b into a; returns a new mesh or None."""
    protected = set(mesh.periodic_pairs.keys()) | \
        set(mesh.periodic_pairs.values())
    if b in protected:
        if a in protected:
            return None
        a, b = b, a
    tris = mesh.triangles
    nbr_a, nbr_b = set(), set()
    shared_tris = []
    for t in range(len(tris)):
        s = set(int(x) for x in tris[t])
        if a in s:
            nbr_a.update(s - {a})
        if b in s:
            nbr_b.update(s - {b})
        if a in s and b in s:
            shared_tris.append(t)
    if len(shared_tris) != 2:
        return None
    if len(nbr_a & nbr_b) != 2:                       # link condition
        return None
    keep = [t for t in range(len(tris)) if t not in shared_tris]
    new_tris = tris[keep].copy()
    new_tris[new_tris == b] = a
    areas = triangle_areas(mesh.vertices, new_tris)
    if areas.min() < 1e-14:
        return None
    remap = np.arange(mesh.n_vertices, dtype=np.int64)
    remap[b + 1:] -= 1
    remap[b] = -1
    new_verts = np.delete(mesh.vertices, b, axis=0)
    new_tris = remap[new_tris]
    new_pairs = {int(remap[k]): int(remap[v])
                 for k, v in mesh.periodic_pairs.items()}
    new_ring = remap[mesh.left_ring]
    out = SurfaceMesh(new_verts, new_tris, new_pairs, mesh.axial_period,
                      mesh.inward, new_ring, mesh.ref_area)
    ok, _ = out.validate()
    return out if ok else None


def _coarsen(mesh, q_max, area_floor_factor):
    """Worst-first local repair: flip obtuse offenders, collapse small
    acute ones.  Each op that would break the mesh is skipped."""
    cur = mesh
    for _ in range(64):
        verts, tris = cur.vertices, cur.triangles
        quals = triangle_qualities(verts, tris)
        t = int(np.argmax(quals))
        if quals[t] <= q_max:
            break
        v0, v1, v2 = (int(x) for x in tris[t])
        p = verts[[v0, v1, v2]]
        edges = [(v1, v2), (v2, v0), (v0, v1)]
        lens = [np.linalg.norm(p[(c + 2) % 3] - p[(c + 1) % 3])
                for c in range(3)]
        dots = [np.dot(p[(c + 1) % 3] - p[c], p[(c + 2) % 3] - p[c])
                for c in range(3)]
        progressed = False
        if min(dots) < 0.0:
            for c in np.argsort(lens)[::-1]:
                new_tris = _flip_edge(verts, tris, *edges[c])
                if new_tris is not None:
                    cur = SurfaceMesh(verts, new_tris,
                                      dict(cur.periodic_pairs),
                                      cur.axial_period, cur.inward,
                                      cur.left_ring.copy(), cur.ref_area)
                    progressed = True
                    break
        areas = triangle_areas(verts, tris)
        if not progressed and areas[t] < area_floor_factor * areas.max():
            c = int(np.argmin(lens))
            collapsed = _collapse_edge(cur, *edges[c])
            if collapsed is not None:
                cur = collapsed
                progressed = True
        if not progressed:
            break
    return cur


def adapt(mesh, refine_factor=1.3, q_max=8.0, area_floor_factor=1.0 / 3.0):
    """Refine oversized triangles; repair quality only when it is poor.

    Triangles above refine_factor times the creation-time mean area are
    red-refined (with green closure and mirrored boundary refinement).
    If the quality quotient exceeds q_max, obtuse offenders are edge-
    flipped and small acute ones collapsed.  Any step that would break
    manifoldness or the periodic pairing is rolled back and reported; the
    returned mesh is always valid.
    """
    areas = triangle_areas(mesh.vertices, mesh.triangles)
    marked = areas > refine_factor * mesh.ref_area
    out = mesh
    if marked.any():
        refined = _refine(mesh, marked)
        ok, msg = refined.validate()
        if ok:
            out = refined
        else:
            log.warning("refinement rolled back: %s", msg)
    if mesh_quality(out) > q_max:
        out = _coarsen(out, q_max, area_floor_factor)
        ok, msg = out.validate()
        if not ok:
            log.warning("coarsening rolled back: %s", msg)
            out = mesh
    return out
