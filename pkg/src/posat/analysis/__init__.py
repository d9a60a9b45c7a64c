from .bounds import (
    check_condition_21,
    check_condition_23,
    deviation_ratio_bound,
    simple_posat_bound,
    zeta_bound,
    zeta_threshold,
)
from .verify import check_necessary_condition, verify_asatue, verify_msatue
from .search import PoSatResult, SearchSettings, curve_to_csv, posat_curve, search_worst_posat
