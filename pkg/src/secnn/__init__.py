"""Two-party secure CNN inference over additive secret sharing.

Layers: ring fixed-point arithmetic -> secret sharing -> dealer-assisted
Beaver protocols -> OT-based comparison -> secure layer operators ->
graph engine, plus an analytical latency model of the whole stack.
"""

from .costmodel import HardwareProfile, LayerGeometry, build_lut, export_lut, import_lut, model_operator
from .engine import run_loopback, run_plain_reference, run_server
from .graph import GraphSpec, LayerSpec, load_weights, save_weights
from .ring import ContractError, FixedPointConfig, RangeError, RingTensor
from .sharing import Party, ShareTensor, rec, shr
from .transport import ProtocolAbort, SimParams

__version__ = "0.1.0"

__all__ = [
    "ContractError",
    "FixedPointConfig",
    "GraphSpec",
    "HardwareProfile",
    "LayerGeometry",
    "LayerSpec",
    "Party",
    "ProtocolAbort",
    "RangeError",
    "RingTensor",
    "ShareTensor",
    "SimParams",
    "build_lut",
    "export_lut",
    "import_lut",
    "load_weights",
    "model_operator",
    "rec",
    "run_loopback",
    "run_plain_reference",
    "run_server",
    "save_weights",
    "shr",
]
