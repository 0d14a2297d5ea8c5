"""Thermal (kTC) noise analysis of switched-capacitor filters.

The analytic path computes per-phase port noise variances from three
capacitor-only equivalent circuits plus the OTA feedback gain, accumulates
them through the clock-period recursion, and reports sampled, direct, and
total output noise. A Monte-Carlo transient-noise simulator cross-validates
every number.
"""

__version__ = "0.1.0"

from .netlist import (  # noqa: F401
    Circuit,
    Capacitor,
    Switch,
    Ota,
    Source,
    NetlistError,
    parse,
    serialize,
    phase_view,
    builtin_examples,
    builtin_circuit,
)
from .capnet import (  # noqa: F401
    INFINITE,
    ExtCap,
    CapNetError,
    build,
    equivalent_capacitance,
    transfer_gain,
    redistribute,
)
from .bode import (  # noqa: F401
    K_BOLTZMANN,
    BodeCaps,
    Variance,
    UNBOUNDED,
    ExtractionError,
    extract,
    variance,
    direct_noise,
)
from .noiseplan import (  # noqa: F401
    Injection,
    Recursion,
    NoisePlan,
    NoiseReport,
    PlanError,
    build_plan,
    period_injection,
    evolve,
    report,
    frequency_meta,
)
from .mcsim import (  # noqa: F401
    McConfig,
    PhaseSystem,
    TraceEnsemble,
    SimulationError,
    SettlingWarning,
    compile_phase,
    step,
    run,
    compare,
)
