"""Parameter extraction for vibronic monomers and dimers from absorption spectra.

A vibronic exciton simulator is wrapped by a Gaussian-process surrogate
optimizer that maps the whole cost landscape, not only its minimum.
"""

__version__ = "0.1.0"

from .model import (
    BasisSpec,
    DimerParams,
    HamiltonianMatrix,
    MonomerParams,
    TDI_DIMERS,
    TDI_MONOMER,
    build_dimer_hamiltonian,
    build_monomer_hamiltonian,
)
from .spectra import (
    CorrelationSeries,
    Spectrum,
    TimeGrid,
    combine_dimer_correlation,
    correlation_to_spectrum,
    default_frequency_grid,
    dimer_correlation_components,
    monomer_correlation,
    simulate_dimer,
    simulate_monomer,
)
from .cost import (
    COST_CONSISTENT,
    COST_INDISTINGUISHABLE,
    ExperimentalSpectrum,
    ingest_spectrum,
    spectral_cost,
    to_common_grid,
)
from .gpr import (
    GprModel,
    KernelHyperparams,
    ParameterSpace,
    TrainingSet,
    fit,
    optimize,
    predict,
    propose,
)
from .landscape import (
    GridSpec,
    Landscape,
    consistency_region,
    error_metric,
    exact_grid,
    surrogate_grid,
    uncertainty_metric,
)
from .pipeline import DimerEvaluator, MonomerEvaluator, SimulationSettings
from .config import RunConfig, load_config
