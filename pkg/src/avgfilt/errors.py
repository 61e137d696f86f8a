"""Exception types shared by the library and the CLI."""


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class NumericalError(ArithmeticError):
    """A linear system failed the conditioning guard or a covariance lost positivity."""
