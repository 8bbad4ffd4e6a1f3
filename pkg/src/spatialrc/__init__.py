"""Position-domain repetitive control with a Gaussian-process memory loop."""

__version__ = "0.1.0"

from .lti import (
    ContinuousTf,
    DiscreteStateSpace,
    FrequencyResponse,
    SimulationDivergence,
    connect_feedback,
    freq_response,
    spectral_radius,
    zoh_discretize,
)

__all__ = [
    "ContinuousTf",
    "DiscreteStateSpace",
    "FrequencyResponse",
    "SimulationDivergence",
    "connect_feedback",
    "freq_response",
    "spectral_radius",
    "zoh_discretize",
    "__version__",
]
