"""Mobile service-briefcase platform and agent trade server."""

__version__ = "0.1.0"
