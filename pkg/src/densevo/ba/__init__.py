from .normal_equations import (
    HessianBlocks,
    assemble_normal_equations,
    back_substitute,
    marginalize_points,
    reduced_camera_system,
    solve_schur,
    to_dense,
)
from .problem import BAProblem, apply_update, linearize, residual_and_jacobians, total_cost
from .subspace import (
    SolverReport,
    SweepSchedule,
    gauss_seidel,
    gauss_seidel_cameras,
    solve_subspace_gn,
    subspace_step,
)
from .window import MapState, WindowConfig, WindowResult, build_window_problem, run_windowed_ba

__all__ = [
    "BAProblem", "HessianBlocks", "MapState", "SolverReport", "SweepSchedule", "WindowConfig",
    "WindowResult", "apply_update", "assemble_normal_equations", "back_substitute",
    "build_window_problem", "gauss_seidel", "gauss_seidel_cameras", "linearize",
    "marginalize_points", "reduced_camera_system", "residual_and_jacobians", "run_windowed_ba",
    "solve_schur", "solve_subspace_gn", "subspace_step", "to_dense", "total_cost",
]
