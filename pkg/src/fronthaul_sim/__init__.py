"""Rates of uplink network MIMO over capacity-limited backhaul links."""

from .model import EstimationMode, PowerSplit, SystemConfig
from .montecarlo import McConfig

__all__ = ["EstimationMode", "McConfig", "PowerSplit", "SystemConfig"]
__version__ = "0.1.0"
