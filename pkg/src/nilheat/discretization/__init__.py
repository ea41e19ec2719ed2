from nilheat.discretization.grid import STENCILS, Grid, check_divisibility

__all__ = ["STENCILS", "Grid", "check_divisibility"]
