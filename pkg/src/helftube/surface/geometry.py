"""Discrete differential geometry on tube meshes.

All quantities come out of one fused pass over the triangles (see
``_kernels``): cotan stiffness, mixed Voronoi masses, vertex normals,
angle sums, and the exact shape gradients of area and enclosed volume.
Everything lives on the degrees of freedom of the periodic quotient;
per-vertex views are produced with ``mesh.expand``.
"""

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .._kernels import tri_pass
from .mesh import mesh_quality as _mesh_quality
from .mesh import triangle_areas

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class GeometryReport:
    area: float
    volume: float
    energy: float
    normalized_energy: float
    reduced_volume: float
    mesh_quality: float


class Geometry:
    """Operators and scalars of one mesh state.

    Builds the stiffness matrix L (positive semidefinite), the diagonal
    mass vector, unit inward vertex normals (x-component zeroed on the
    boundary rings so those stay planar), curvatures, area, volume, and
    the gradients of area and volume with respect to outward normal
    displacement of each degree of freedom.
    """

    def __init__(self, mesh):
        self.mesh = mesh
        dofs = mesh.dofs
        ndof = mesh.ndof
        if triangle_areas(mesh.vertices, mesh.triangles).min() < 1e-14:
            raise ValueError("degenerate (zero-area) triangle")
        (areas, cots, tnormals, vmass, angsum, vnormal, lapx,
         coo_i, coo_j, coo_v, agrad, vgrad) = tri_pass(
            mesh.vertices, mesh.triangles, dofs, ndof)
        self.tri_areas = areas
        self.tri_normals = tnormals
        self.mass = vmass
        self._coo = (coo_i, coo_j, coo_v)
        self._L = None

        normals = vnormal.copy()
        ring = mesh.ring_dofs
        if ring.size:
            normals[ring, 0] = 0.0
        norms = np.linalg.norm(normals, axis=1)
        if norms.min() < 1e-14:
            raise ValueError("degenerate vertex normal")
        self.normals = normals / norms[:, None]

        self.H = -0.5 * np.einsum("ij,ij->i", lapx, self.normals) / vmass
        self.K = (TWO_PI - angsum) / vmass

        self.area = float(areas.sum())
        p0 = mesh.vertices[mesh.triangles[:, 0]]
        p1 = mesh.vertices[mesh.triangles[:, 1]]
        p2 = mesh.vertices[mesh.triangles[:, 2]]
        vol = -np.einsum("ij,ij->i", p0, np.cross(p1, p2)).sum() / 6.0
        grad_total = vgrad
        if len(mesh.left_ring):
            rv = mesh.left_ring
            y = mesh.vertices[rv, 1]
            z = mesh.vertices[rv, 2]
            ring_area = 0.5 * np.sum(y * np.roll(z, -1) - z * np.roll(y, -1))
            third = mesh.axial_period / 3.0
            vol += third * ring_area
            grad_total = vgrad.copy()
            rd = dofs[rv]
            grad_total[rd, 1] += third * 0.5 * (np.roll(z, -1) - np.roll(z, 1))
            grad_total[rd, 2] += third * 0.5 * (np.roll(y, 1) - np.roll(y, -1))
        elif mesh.periodic_pairs:
            raise ValueError("periodic mesh without a stored boundary ring")
        self.volume = float(vol)

        # raw shape gradients per DOF (ring cap included for volume)
        self.area_shape_grad = agrad
        self.volume_shape_grad = grad_total
        # outward normal displacement moves X by -u N (N is inward)
        self.dA_du = -np.einsum("ij,ij->i", agrad, self.normals)
        self.dV_du = -np.einsum("ij,ij->i", grad_total, self.normals)

    @property
    def L(self):
        if self._L is None:
            ndof = self.mesh.ndof
            coo_i, coo_j, coo_v = self._coo
            L = sp.coo_matrix((coo_v, (coo_i, coo_j)),
                              shape=(ndof, ndof)).tocsr()
            self._L = 0.5 * (L + L.T)
        return self._L

    def energy(self, c0):
        dev = self.H - c0
        e = float(np.dot(self.mass, dev * dev))
        return e, e / self.area

    def reduced_volume(self):
        if not len(self.mesh.left_ring):
            raise ValueError("reduced volume needs a periodic tube")
        v0 = self.area ** 2 / (4.0 * math.pi * self.mesh.axial_period)
        return self.volume / v0


def cotan_laplacian(mesh):
    """Positive semidefinite stiffness matrix on the degrees of freedom."""
    return Geometry(mesh).L


def voronoi_mass(mesh):
    """Diagonal mass operator (sparse); entries are mixed Voronoi areas."""
    return sp.diags(Geometry(mesh).mass)


def vertex_normals(mesh):
    """Per-vertex unit normals, inward; N_x = 0 on the boundary rings."""
    g = Geometry(mesh)
    return g.normals[mesh.dofs]


def mean_curvature(mesh):
    """Per-vertex mean curvature (1/(2r) on the reference cylinder)."""
    return mesh.expand(Geometry(mesh).H)


def gauss_curvature(mesh):
    """Per-vertex Gauss curvature from the angle defect; periodic pairs
    are folded so boundary vertices count as interior."""
    return mesh.expand(Geometry(mesh).K)


def area(mesh):
    return Geometry(mesh).area


def volume(mesh):
    """Enclosed volume per period: lateral flux plus the left-ring cap."""
    if not mesh.periodic_pairs:
        tris = mesh.triangles
        halves = set()
        for t in range(len(tris)):
            for c in range(3):
                halves.add((int(tris[t, c]), int(tris[t, (c + 1) % 3])))
        for a, b in halves:
            if (b, a) not in halves:
                raise ValueError("unpaired boundary loop")
    return Geometry(mesh).volume


def area_gradient(mesh):
    """Per-vertex density of the area shape derivative: the exact
    discrete gradient divided by the Voronoi mass (about 2H)."""
    g = Geometry(mesh)
    return mesh.expand(g.dA_du / g.mass)


def volume_gradient(mesh):
    """Per-vertex density of the volume shape derivative, boundary-ring
    cap term included (about 1 on the reference cylinder)."""
    g = Geometry(mesh)
    return mesh.expand(g.dV_du / g.mass)


def helfrich_energy(mesh, c0):
    """Bending energy sum m_i (H_i - c0)^2 and its per-area normalization."""
    return Geometry(mesh).energy(c0)


def reduced_volume(mesh):
    """Volume over the volume of the straight cylinder with the same area
    and period (1 on the reference cylinder)."""
    return Geometry(mesh).reduced_volume()


def geometry_report(mesh, c0=0.0):
    g = Geometry(mesh)
    e, en = g.energy(c0)
    return GeometryReport(area=g.area, volume=g.volume, energy=e,
                          normalized_energy=en,
                          reduced_volume=g.reduced_volume(),
                          mesh_quality=_mesh_quality(mesh))


def displace(mesh, u):
    """Move every vertex by u along the outward normal (X -> X - u N).

    u may be a DOF-length or vertex-length field; paired vertices move
    identically, and boundary rings stay in their planes because their
    normals have no axial component.
    """
    u = np.asarray(u, dtype=np.float64)
    u_v = mesh.expand(u) if u.shape[0] == mesh.ndof else \
        mesh.expand(mesh.restrict(u))
    rad = np.hypot(mesh.vertices[:, 1], mesh.vertices[:, 2])
    if np.any(np.abs(u_v) >= 0.95 * rad):
        raise ValueError("displacement too large: |u| must stay below "
                         "0.95 of the local radius")
    n_v = Geometry(mesh).normals[mesh.dofs]
    return mesh.with_vertices(mesh.vertices - u_v[:, None] * n_v)


def project_amplitude(mesh, mode):
    """Mass-weighted Fourier coefficient of the radial deviation.

    Each degree of freedom is projected onto cylinder parameters
    (x, phi); the deviation of its radius from the mass-weighted mean is
    correlated against exp(-i (k_m x + n phi)).  With this convention a
    displacement u = eps cos(k_m x + n phi) returns eps/2.
    """
    g = Geometry(mesh)
    p = mesh.vertices[mesh.rep_vertices]
    x = p[:, 0]
    phi = np.arctan2(p[:, 2], p[:, 1])
    rho = np.hypot(p[:, 1], p[:, 2])
    wtot = g.mass.sum()
    rbar = np.dot(g.mass, rho) / wtot
    k = mode.k(mesh.axial_period)
    phase = np.exp(-1j * (k * x + mode.n * phi))
    return complex(np.dot(g.mass, (rho - rbar) * phase) / wtot)
