"""Taylor-Hood P2-P1 steady Navier-Stokes on (optionally mapped) triangular meshes."""
from .assembly import (Assembler, ElementData, PullbackCoefficients, assemble, element_data,
                       pullback_coefficients)
from .solver import (BoundaryConditions, FlowField, FluidProps, SolverConfig, boundary_flux,
                     dirichlet_data, field_to_snapshots, snapshots_to_field, solve_flow)

__all__ = ["Assembler", "ElementData", "PullbackCoefficients", "assemble", "element_data",
           "pullback_coefficients", "BoundaryConditions", "FlowField", "FluidProps", "SolverConfig",
           "boundary_flux", "dirichlet_data", "field_to_snapshots", "snapshots_to_field", "solve_flow"]
