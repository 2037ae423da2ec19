from .mesh import TriangleMesh, mesh_frame, smooth_mesh, triangle_gates
from .ply import export_ply, read_ply
from .tsdf import TsdfVolume, extract_surface, integrate_depth, integrate_mesh, rasterize_depth

__all__ = [
    "TriangleMesh", "TsdfVolume", "export_ply", "extract_surface", "integrate_depth",
    "integrate_mesh", "mesh_frame", "rasterize_depth", "read_ply", "smooth_mesh", "triangle_gates",
]
