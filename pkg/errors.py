# errors.py
# Exceptions shared by the simulator modules.


class SimulationError(Exception):
    """Base class for every error the simulator raises on purpose."""


class GraphParseError(SimulationError):
    def __init__(self, path, line_no, line):
        self.path = path
        self.line_no = line_no
        self.line = line
        super().__init__(f"{path}:{line_no}: expected two integer node ids, got {line!r}")


class InvalidInputError(SimulationError, ValueError):
    pass


class GenerationError(SimulationError):
    pass


class DomainError(SimulationError, ValueError):
    pass


class ConstructionError(SimulationError):
    pass


class JoinError(SimulationError):
    pass


class RootDepartureError(SimulationError):
    """A tree root left; the listed trees have to be rebuilt from scratch."""

    def __init__(self, node, trees):
        self.node = node
        self.trees = tuple(trees)
        super().__init__(f"node {node} is the root of tree(s) {list(self.trees)}")


class UnsupportedOperationError(SimulationError):
    pass


class AddressStateError(SimulationError):
    pass


class ValidationError(SimulationError, ValueError):
    pass


class ConfigError(SimulationError):
    pass
