"""Transport-induced motional excitation of shuttling primitives in a surface trap."""
import logging

__version__ = "0.1.0"

from .trap_model import BE9, DomainError, LayoutError, PhysicalConstants, TrapLayout, default_layout  # noqa: E402
from .profiles import CascadedProfile, FrequencyTrajectory, TanhProfile  # noqa: E402
from .oscillator_core import ModeExcitation, OscillatorSpec, excite, husimi_q  # noqa: E402
from .merge_split import MergeSpec, simulate_idealized  # noqa: E402
from .voltage_solver import InfeasibleError, IonLossError, Waveform, merge_waveform  # noqa: E402
from .swap import SwapSpec, simulate_swap  # noqa: E402
from .cascade import CascadeState, ModeState, PrimitiveCharacterization, compose  # noqa: E402
from .noise_model import NoiseSpectrum  # noqa: E402
from .compiler import CostPolicy, IonConfiguration, PrimitiveLibrary, search  # noqa: E402

logging.getLogger(__name__).addHandler(logging.NullHandler())
