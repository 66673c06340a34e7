"""Exception types shared across the package."""


class EncLoopError(Exception):
    """Base class for all library errors."""


class ParameterError(EncLoopError):
    """Invalid or inconsistent scheme/controller parameters."""


class StructuralError(EncLoopError):
    """Operands do not fit together (modulus, degree, shape, part count)."""


class CapacityError(EncLoopError):
    """Data does not fit the available plaintext slots."""


class KeyMaterialError(EncLoopError):
    """A required key (rlk, galois key, ...) is missing or malformed."""


class NoiseBudgetError(EncLoopError):
    """Ciphertext noise exceeded the decryption threshold."""


class EncodingRangeError(EncLoopError):
    """Fixed-point encoding would wrap around the plaintext modulus."""


class TransformError(EncLoopError):
    """Controller-to-history-feedback transformation failed."""


class StabilityError(EncLoopError):
    """A computation that requires a stable closed loop got an unstable one."""
