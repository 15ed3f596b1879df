"""Single-anchor downlink positioning for mmWave MISO OFDM links.

Modules
-------
model        system configuration, channel and observation synthesis
estimators   ML 2D, unstructured ML and method-of-moments TOF/AOD estimators
bounds       Fisher information, CRLBs and the position error bound
experiments  Monte Carlo cells, sweeps and the runtime benchmark
scenario     YAML/JSON scenario files
cli          ``misopos`` command line
"""

__version__ = "0.1.0"

from .errors import (ConfigError, DegenerateInputError, DomainError, InapplicableEstimatorError,
                     MisoposError, RankDeficiencyError, SingularFIMError)
from .model import (ChannelRealization, ObservationSet, PathParams, PilotBook, SystemConfig,
                    generate_pilots, steering_vector, synthesize)
from .estimators import EstimateRecord, Method, SearchGrid, estimate, ml2d, mm, uml
from .bounds import BoundRecord, ChannelParamVector, compute_bounds
from .scenario import Scenario, load_scenario

__all__ = [
    "__version__", "MisoposError", "ConfigError", "DomainError", "DegenerateInputError",
    "RankDeficiencyError", "InapplicableEstimatorError", "SingularFIMError",
    "SystemConfig", "PilotBook", "PathParams", "ChannelRealization", "ObservationSet",
    "generate_pilots", "steering_vector", "synthesize",
    "Method", "SearchGrid", "EstimateRecord", "estimate", "ml2d", "uml", "mm",
    "ChannelParamVector", "BoundRecord", "compute_bounds", "Scenario", "load_scenario",
]
