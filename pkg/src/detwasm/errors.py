"""Error taxonomy: validation errors, traps, instantiation and API errors."""

import enum


class ValidationCode(enum.Enum):
    MalformedModule = "MalformedModule"
    UnsupportedFeature = "UnsupportedFeature"
    ParamCountExceeded = "ParamCountExceeded"
    LocalCountExceeded = "LocalCountExceeded"
    FrameWeightExceeded = "FrameWeightExceeded"
    InstructionCountExceeded = "InstructionCountExceeded"
    NestingDepthExceeded = "NestingDepthExceeded"
    TypeMismatch = "TypeMismatch"
    InvalidUtf8Identifier = "InvalidUtf8Identifier"
    HookSignatureMismatch = "HookSignatureMismatch"


class ValidationError(Exception):
    """Deterministic rejection: same module bytes always yield the same
    (code, byte_offset) pair."""

    def __init__(self, code: ValidationCode, byte_offset: int, detail: str = ""):
        self.code = code
        self.byte_offset = byte_offset
        self.detail = detail
        super().__init__(f"{code.value} offset={byte_offset}" + (f": {detail}" if detail else ""))

    def serialize(self) -> str:
        # stable one-line form used by the CLI and golden tests
        return f"EVALID {self.code.value} offset={self.byte_offset}"


class TrapCode(enum.Enum):
    Unreachable = "Unreachable"
    MemoryAccessOutOfBounds = "MemoryAccessOutOfBounds"
    IntegerDivideByZero = "IntegerDivideByZero"
    IntegerOverflow = "IntegerOverflow"
    InvalidConversionToInteger = "InvalidConversionToInteger"
    IndirectCallTypeMismatch = "IndirectCallTypeMismatch"
    UndefinedTableElement = "UndefinedTableElement"
    WasmCallStackExceed = "WasmCallStackExceed"
    GasExhausted = "GasExhausted"
    CheckedArithmeticOverflow = "CheckedArithmeticOverflow"
    HostError = "HostError"


class TrapError(Exception):
    """Raised by executing code when a trap fires.  detail never reaches the
    deterministic trace; it exists for diagnostics and tests."""

    def __init__(self, code: TrapCode, detail=None):
        self.code = code
        self.detail = detail
        super().__init__(code.value if detail is None else f"{code.value}: {detail}")


class InstantiationErrorKind(enum.Enum):
    UnresolvedImport = "UnresolvedImport"
    SignatureMismatch = "SignatureMismatch"
    SegmentOutOfBounds = "SegmentOutOfBounds"
    StartTrap = "StartTrap"


class InstantiationError(Exception):
    def __init__(self, kind: InstantiationErrorKind, detail="", trap: TrapError | None = None):
        self.kind = kind
        self.detail = detail
        self.trap = trap
        msg = kind.value + (f": {detail}" if detail else "")
        if trap is not None:
            msg += f" ({trap.code.value})"
        super().__init__(msg)


class ApiMisuseError(Exception):
    """Caller-side misuse: unknown export, wrong arity or argument types,
    re-entrant invocation of a busy instance."""


class ResourceLimitError(Exception):
    """A compiled artifact exceeded the configured size cap."""


class HostFailure(Exception):
    """Raised by host functions to signal deliberate failure; surfaces to the
    guest as Trap{HostError}."""
