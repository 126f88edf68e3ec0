"""Deterministic WebAssembly MVP engine with tiered execution."""

from .engine import Engine, EngineConfig, ModuleHandle
from .errors import (ApiMisuseError, HostFailure, InstantiationError,
                     InstantiationErrorKind, ResourceLimitError, TrapCode,
                     TrapError, ValidationCode, ValidationError)
from .host import HostFunction, HostRegistry, default_registry
from .instance import Instance, InstanceConfig
from .validator import DwasmLimits, validate_dwasm

__all__ = [
    "ApiMisuseError", "DwasmLimits", "Engine", "EngineConfig", "HostFailure",
    "HostFunction", "HostRegistry", "Instance", "InstanceConfig",
    "InstantiationError", "InstantiationErrorKind", "ModuleHandle",
    "ResourceLimitError", "TrapCode", "TrapError", "ValidationCode",
    "ValidationError", "default_registry", "validate_dwasm",
]

__version__ = "0.1.0"
