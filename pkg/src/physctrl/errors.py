"""Exception hierarchy shared by every subsystem.

The CLI maps these onto exit codes, so raise the narrowest one that fits.
"""


class PhysCtrlError(Exception):
    exit_code = 1


class DomainError(PhysCtrlError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ContractError(PhysCtrlError, ValueError):
    """Shapes or structures passed between components do not agree."""


class ConfigError(PhysCtrlError, ValueError):
    """A configuration value is missing, degenerate, or inconsistent."""


class NumericalError(PhysCtrlError, ArithmeticError):
    exit_code = 3


class TrainingError(NumericalError):
    def __init__(self, message: str, step: int):
        super().__init__(f"step {step}: {message}")
        self.step = step


class ArtifactIOError(PhysCtrlError, OSError):
    exit_code = 2

    def __init__(self, message: str, path=None):
        text = f"{message}: {path}" if path is not None else message
        super().__init__(text)
        self.path = path
