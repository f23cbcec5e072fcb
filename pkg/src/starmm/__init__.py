"""Max-min finite-blocklength rate optimization for STAR-RIS assisted RSMA downlinks."""
from .channel_model import (NetworkInstance, RisConfig, ScenarioConfig, effective_channels,
                            generate_network)
from .fbl_rates import LN2, RS, TIN, BeamformerSet, FblParams, fbl_rate, q_inv, rate_report
from .ao_optimizer import SCHEMES, AOOptions, SchemeSpec, get_scheme, optimize

__version__ = "0.1.0"

__all__ = ["NetworkInstance", "RisConfig", "ScenarioConfig", "effective_channels",
           "generate_network", "LN2", "RS", "TIN", "BeamformerSet", "FblParams", "fbl_rate",
           "q_inv", "rate_report", "SCHEMES", "AOOptions", "SchemeSpec", "get_scheme", "optimize"]
