class AmlGraphError(Exception):
    pass


class ShapeError(AmlGraphError, ValueError):
    pass


class ParseError(AmlGraphError, ValueError):
    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class IntegrityError(AmlGraphError, ValueError):
    pass


class ConfigError(AmlGraphError, ValueError):
    pass


class NumericError(AmlGraphError, FloatingPointError):
    pass


class CapacityError(AmlGraphError, ValueError):
    pass


class FitError(AmlGraphError, RuntimeError):
    pass


class ReportError(AmlGraphError, ValueError):
    pass
