"""Delay-dependent state-feedback AQM design for the TCP fluid model."""

from tdaqm.controllers import AqmConfig, AqmKind, AqmState
from tdaqm.delay_lmi import (
    LkParams, StabilityCertificate, Verdict, analysis_feasible, max_stable_delay, rightmost_root,
)
from tdaqm.model import (
    NetworkParams, OperatingPoint, TdsSystem, augment, disturbance_transfer, linearize,
    operating_point, reference_network,
)
from tdaqm.sim import Scenario, Segment, Trace, periodic_stats, simulate, simulate_linear
from tdaqm.synthesis import REF_K_SF, REF_K_SFI, Gains, synthesize_gain, verify_closed_loop

__version__ = "0.1.0"
