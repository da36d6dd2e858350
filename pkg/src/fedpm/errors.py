"""Exception hierarchy shared by every fedpm module."""


class FedPMError(Exception):
    """Base class for all errors raised by fedpm."""


class ArchitectureError(FedPMError, ValueError):
    pass


class ShapeError(FedPMError, ValueError):
    pass


class DataError(FedPMError, ValueError):
    pass


class ClientError(FedPMError, RuntimeError):
    pass


class DivergedError(ClientError):
    def __init__(self, message, round_index=None, client=None):
        context = []
        if round_index is not None:
            context.append(f"round={round_index}")
        if client is not None:
            context.append(f"client={client}")
        if context:
            message = f"{message} ({', '.join(context)})"
        super().__init__(message)
        self.round_index = round_index
        self.client = client


class AggregationError(FedPMError, ValueError):
    pass


class ProtocolError(FedPMError, ValueError):
    pass


class DecodeError(FedPMError, ValueError):
    pass


class FormatError(FedPMError, ValueError):
    pass


class ConfigError(FedPMError, ValueError):
    pass


class PartitionError(FedPMError, ValueError):
    pass


class PrivacyError(FedPMError, ValueError):
    pass


class UsageError(FedPMError, RuntimeError):
    pass
