"""Exception hierarchy; every error carries the name of the module that raised it."""


class SfcError(Exception):
    module = "sfcmig"


class ModelError(SfcError, ValueError):
    module = "model"


class ParseError(ModelError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(where + message)


class ValidationError(ModelError):
    pass


class StateError(SfcError, ValueError):
    module = "state"


class InfeasibleError(StateError):
    pass


class AgentError(SfcError, ValueError):
    module = "agent"


class MsdfError(SfcError, RuntimeError):
    module = "msdf"


class StaleStrategyError(MsdfError):
    pass


class BaselineError(SfcError, ValueError):
    module = "baselines"


class HarnessError(SfcError, ValueError):
    module = "harness"
