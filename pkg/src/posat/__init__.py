"""Price-of-satisficing analysis for static traffic equilibrium."""

from .network import (
    CostTerm,
    DemandTable,
    Instance,
    Network,
    PathFlow,
    PolynomialCost,
    aggregate_to_arcflow,
    decompose_to_paths,
    load_instance,
    paths_to_classflow,
    save_instance,
    scale_demands,
)

__version__ = "0.1.0"
