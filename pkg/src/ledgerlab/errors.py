"""Exception hierarchy shared by every ledgerlab module."""


class LedgerLabError(Exception):
    pass


class MalformedPayload(LedgerLabError, ValueError):
    pass


class IndexGap(LedgerLabError, ValueError):
    pass


class ConfigError(LedgerLabError, ValueError):
    pass


class MissingOracle(LedgerLabError):
    pass


class OracleRefused(LedgerLabError):
    pass


class UnexpectedOracle(LedgerLabError, TypeError):
    """An oracle was handed to an internal predicate."""


class UnknownTrigger(LedgerLabError, KeyError):
    pass


class SpecError(LedgerLabError, ValueError):
    pass


class LogMismatch(LedgerLabError, ValueError):
    pass


class InapplicableAttack(LedgerLabError):
    pass


class ScenarioParseError(LedgerLabError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
