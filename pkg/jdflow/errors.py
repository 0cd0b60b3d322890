__all__ = (
    "JDFlowError",
    "ConfigurationError",
    "ArgumentError",
    "IntegrationError",
    "ProbeError",
    "InvariantError",
)


class JDFlowError(Exception):
    pass


class ConfigurationError(JDFlowError, ValueError):
    pass


class ArgumentError(JDFlowError, ValueError):
    pass


class IntegrationError(JDFlowError, RuntimeError):
    pass


class ProbeError(JDFlowError, RuntimeError):
    pass


class InvariantError(JDFlowError, RuntimeError):
    pass
