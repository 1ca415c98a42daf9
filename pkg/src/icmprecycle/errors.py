"""Exception hierarchy shared by all modules."""


class IcmpRecycleError(Exception):
    pass


class TruncatedMessage(IcmpRecycleError):
    pass


class FileUnreadable(IcmpRecycleError):
    pass


class MalformedCaptureHeader(IcmpRecycleError):
    pass


class EmptyTable(IcmpRecycleError):
    pass


class NotARedirect(IcmpRecycleError):
    pass


class NotSourceQuench(IcmpRecycleError):
    pass


class CycleBudgetExceeded(IcmpRecycleError):
    pass


class TransportFailure(IcmpRecycleError):
    pass


class SchemaError(IcmpRecycleError):
    """Invalid topology or registry file; ``where`` names the offending line or field."""

    def __init__(self, message, where=None):
        self.where = where
        super().__init__(f"{where}: {message}" if where else message)


class DanglingNextHop(SchemaError):
    pass
