"""Triangulated periodic cylinder meshes and their discrete geometry."""

from .mesh import (SurfaceMesh, build_cylinder_mesh, mesh_quality,
                   triangle_areas, triangle_qualities, adapt)
from .geometry import (Geometry, GeometryReport, cotan_laplacian,
                       voronoi_mass, vertex_normals, mean_curvature,
                       gauss_curvature, area, volume, area_gradient,
                       volume_gradient, helfrich_energy, reduced_volume,
                       geometry_report, displace, project_amplitude)
from .io import save_off, load_off, save_vtk, load_vtk

__all__ = [
    "SurfaceMesh", "build_cylinder_mesh", "mesh_quality", "triangle_areas",
    "triangle_qualities", "adapt", "Geometry", "GeometryReport",
    "cotan_laplacian", "voronoi_mass", "vertex_normals", "mean_curvature",
    "gauss_curvature", "area", "volume", "area_gradient", "volume_gradient",
    "helfrich_energy", "reduced_volume", "geometry_report", "displace",
    "project_amplitude", "save_off", "load_off", "save_vtk", "load_vtk",
]
