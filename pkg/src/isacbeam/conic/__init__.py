from .model import ConicProblem, Solution, extract_dual, herm_entry_im, herm_entry_re
from .solver import RawSolution, SolveOptions, StandardConic, Status, solve_standard

__all__ = [
    "ConicProblem",
    "Solution",
    "extract_dual",
    "herm_entry_re",
    "herm_entry_im",
    "SolveOptions",
    "StandardConic",
    "RawSolution",
    "Status",
    "solve_standard",
]
