"""Exception types shared across the toolkit."""


class ConfigError(ValueError):
    """Invalid configuration: bad parameter values, unresolvable bandwidth,
    CFL violations, unknown or missing config keys."""


class DivergenceError(ArithmeticError):
    """A divergence is undefined for the given pair (e.g. the reference
    density vanishes where the argument carries mass)."""


class SolverAbort(RuntimeError):
    """A solver hit a diagnostic guard (positivity floor, non-finite state)
    and cannot continue."""
