"""Stable machine-readable error codes shared by all servers and the CLI."""

# Briefcase store / server
NOT_FOUND = "NOT_FOUND"
UNAUTHORIZED = "UNAUTHORIZED"
LOCKED = "LOCKED"
CORRUPT = "CORRUPT"
BRIEFCASE_ID_MISMATCH = "BRIEFCASE_ID_MISMATCH"
TIMEOUT = "TIMEOUT"
STORAGE_FULL = "STORAGE_FULL"

# Service runtime
PRIVILEGE_DENIED = "PRIVILEGE_DENIED"
UNKNOWN_CODE_REF = "UNKNOWN_CODE_REF"
ILLEGAL_TRANSITION = "ILLEGAL_TRANSITION"
UNKNOWN_COMPONENT = "UNKNOWN_COMPONENT"
NOT_SUSPENDED = "NOT_SUSPENDED"
QUEUE_FULL = "QUEUE_FULL"
DESTINATION_UNREACHABLE = "DESTINATION_UNREACHABLE"

# Exchange / trade server
DUPLICATE_ORDER_ID = "DUPLICATE_ORDER_ID"
UNKNOWN_INSTRUMENT = "UNKNOWN_INSTRUMENT"
UNKNOWN_VENUE = "UNKNOWN_VENUE"
UNKNOWN_AGENT = "UNKNOWN_AGENT"
REJECTED = "REJECTED"

# Agents
MISSING_PRICE = "MISSING_PRICE"

# Roaming
INVALID_VALUE = "INVALID_VALUE"
NO_FRESH_RECORDS = "NO_FRESH_RECORDS"
UNKNOWN_SESSION = "UNKNOWN_SESSION"

# Generic
BAD_REQUEST = "BAD_REQUEST"
UNREACHABLE = "UNREACHABLE"


class ServiceError(Exception):
    """Error with a stable code, transportable over the wire and the CLI."""

    def __init__(self, code: str, message: str = ""):
        super().__init__(message or code)
        self.code = code
        self.message = message or code

    def to_payload(self) -> dict:
        return {"code": self.code, "message": self.message}
