from .frank_wolfe import relative_gap, solve_prue_diagonalization, solve_prue_fw, solve_so
from .kkt import KKTCertificate, kkt_certificate, reduced_costs
from .report import EquilibriumReport, LambdaField
from .shortest import all_or_nothing, od_shortest_path, shortest_costs, shortest_paths, trace_path
from .uepe import solve_prue, solve_uepe

__all__ = [
    "EquilibriumReport",
    "KKTCertificate",
    "LambdaField",
    "all_or_nothing",
    "kkt_certificate",
    "od_shortest_path",
    "reduced_costs",
    "relative_gap",
    "shortest_costs",
    "shortest_paths",
    "solve_prue",
    "solve_prue_diagonalization",
    "solve_prue_fw",
    "solve_so",
    "solve_uepe",
    "trace_path",
]
