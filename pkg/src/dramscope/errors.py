class DramscopeError(Exception):
    pass


class ConfigError(DramscopeError):
    """Invalid experiment, DRAM spec or energy parameter configuration."""


class TraceError(DramscopeError):
    pass


class TraceParseError(TraceError):
    def __init__(self, message, line_no=None, token=None):
        self.line_no = line_no
        self.token = token
        where = f"line {line_no}: " if line_no is not None else ""
        if token is not None:
            message = f"{message} (offending token {token!r})"
        super().__init__(where + message)


class TraceIOError(TraceError):
    """The trace source could not be read."""


class OutOfPhysicalMemory(DramscopeError):
    pass


class SimulationError(DramscopeError):
    pass
