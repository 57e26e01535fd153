"""Model-free PI-Lead tuning for type-one motion systems."""

__version__ = "0.1.0"

from .errors import PiLeadError, TransportError, TunerError  # noqa: E402
from .lti import (TransferFunction, format_tf, make_lead, make_pi, make_zn_pid,  # noqa: E402
                  margins, series, unity_feedback)
from .simulation import (PlantSpec, ScenarioSpec, Trace, catalog, make_session,  # noqa: E402
                         simulate_closed_loop)
from .tuner import TuneConfig, assign_lead, tune_pi_lead, zn_pid  # noqa: E402

__all__ = [
    "PiLeadError", "TransportError", "TunerError",
    "TransferFunction", "format_tf", "make_lead", "make_pi", "make_zn_pid", "margins",
    "series", "unity_feedback",
    "PlantSpec", "ScenarioSpec", "Trace", "catalog", "make_session", "simulate_closed_loop",
    "TuneConfig", "assign_lead", "tune_pi_lead", "zn_pid",
]
