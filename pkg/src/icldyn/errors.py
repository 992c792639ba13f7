"""Exception hierarchy.

Every error carries an ``exit_code`` so the CLI can map it without a lookup table:
1 for configuration problems, 2 for I/O, 3 for numerical failures.
"""


class IcldynError(Exception):
    exit_code = 1


class ConfigInvalid(IcldynError, ValueError):
    exit_code = 1


class IoFailure(IcldynError, OSError):
    exit_code = 2


class DigestMismatch(IoFailure):
    pass


class SchemaMismatch(IoFailure):
    pass


class StatsMissing(IoFailure):
    pass


class NumericalFailure(IcldynError, ArithmeticError):
    exit_code = 3


class NumericalDivergence(NumericalFailure):
    pass


class NonFiniteLoss(NumericalFailure):
    pass


class ShapeMismatch(IcldynError, ValueError):
    pass


class MaskShapeMismatch(ShapeMismatch):
    pass


class LengthNotDivisible(ShapeMismatch):
    pass


class BadSplit(IcldynError, ValueError):
    pass


class BadT(IcldynError, ValueError):
    pass


class BadK(IcldynError, ValueError):
    pass


class NotScalar(IcldynError, ValueError):
    pass


class DetachedLoss(IcldynError, ValueError):
    pass
