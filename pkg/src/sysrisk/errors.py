"""Exception hierarchy shared by every module."""


class SysRiskError(Exception):
    """Base class for toolkit errors."""


class ConfigurationError(SysRiskError, ValueError):
    """Invalid problem data or solver options.

    When the violation concerns one of the standing model assumptions the
    message names it (``A_s1`` for the bank-type / moment bound, ``A_Theta``
    for the policy set).
    """


class DimensionError(SysRiskError, ValueError):
    pass


class AdmissibilityError(SysRiskError, ValueError):
    """A control took a value outside the policy interval."""


class NumericalError(SysRiskError, ArithmeticError):
    pass
