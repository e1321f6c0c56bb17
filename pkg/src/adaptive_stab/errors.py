"""Exception taxonomy shared across the library.

The CLI maps these onto distinct exit codes so that automation can tell
"the method says no" apart from "the tool is broken".
"""


class ContractViolation(ValueError):
    """An argument breaks a documented precondition (shape, sign, range)."""


class CertificationError(RuntimeError):
    """A numeric certification step failed or could not be established."""


class ConfigError(ValueError):
    """An experiment configuration is malformed or inconsistent."""


class MissingPrerequisite(RuntimeError):
    """An operation needs a certificate or schedule that was not supplied."""
