"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain an operation is defined on."""


class UnderflowError(ArithmeticError):
    """Every hidden state assigns zero probability to an observation."""

    def __init__(self, t: int):
        super().__init__(f"all emission probabilities are zero at t={t}")
        self.t = t


class ClusterError(ValueError):
    """Not enough distinct delays to seed the requested number of clusters."""


class TraceFormatError(ValueError):
    def __init__(self, path, lineno: int, line: str):
        super().__init__(f"{path}:{lineno}: cannot parse {line!r}")
        self.lineno = lineno


class TopologyError(ValueError):
    pass


class LinkError(KeyError):
    pass


class SynthesisError(RuntimeError):
    """Riccati iteration failed to reach a fixed point."""

    def __init__(self, message: str, trace=()):
        super().__init__(message)
        self.trace = list(trace)


class CertificationError(RuntimeError):
    """A synthesized gain failed one of the numerical stability checks."""


class DivergenceError(RuntimeError):
    def __init__(self, step: int, agent: int):
        super().__init__(f"state of agent {agent} became non-finite at step {step}")
        self.step = step
        self.agent = agent


class ConfigError(ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
