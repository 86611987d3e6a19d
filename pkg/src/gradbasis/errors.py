"""Exception hierarchy shared by every module."""

from __future__ import annotations


class GradBasisError(Exception):
    """Base class for all package errors."""


class InvalidInput(GradBasisError, ValueError):
    """Malformed or inconsistent input (shapes, non-finite values, bad options)."""


class Unsupported(GradBasisError):
    """Operation is not defined for the given model variant."""


class PreconditionFailed(GradBasisError):
    """A documented precondition (stationarity, rank hypothesis, ...) does not hold."""


class Diverged(GradBasisError):
    """An optimizer produced a non-finite objective value."""


class StructureNotCertified(GradBasisError):
    """The locally induced linear structure could not be certified at theta."""


class NondifferentiablePoint(GradBasisError):
    """A ReLU preactivation sits exactly on its kink.

    Attributes
    ----------
    sample, layer, unit : int
        Location of the offending preactivation (``layer`` is 1-based, and
        ``block`` names the sub-network when the model has several).
    """

    def __init__(self, sample: int, layer: int, unit: int, block: str = "", detail: str = ""):
        self.sample = sample
        self.layer = layer
        self.unit = unit
        self.block = block
        where = f"{block}:" if block else ""
        msg = f"preactivation at kink (sample={sample}, layer={where}{layer}, unit={unit})"
        if detail:
            msg = f"{msg}; {detail}"
        super().__init__(msg)
