"""Desk-scale dynamic PET simulation, reconstruction, and parametric mapping.

The package simulates 2D time-framed emission data from a compartmental
phantom and reconstructs activity images and kinetic parameter maps with
frame-independent EM, spatially penalized EM, a kinetic-prior penalized
method whose weight bridges indirect and direct behavior, and a
deterministic direct baseline.
"""

__version__ = "0.1.0"

from .core import (  # noqa: F401
    DynamicImage,
    FrameSchedule,
    ParametricMaps,
    SinogramSeries,
    frame_mid_times,
    total_scan_time,
)
from .kinetics import (  # noqa: F401
    InputFunction,
    KineticModel,
    KineticParams,
    input_value,
    ki,
    model_frame_values,
    model_jacobian,
    tissue_curve,
)
from .projector import (  # noqa: F401
    Geometry2D,
    SystemMatrix,
    back_project,
    build_system_matrix,
    forward_project,
)
