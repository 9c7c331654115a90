"""Digital-twin dependability toolkit for physician-device-patient triads."""

__version__ = "0.1.0"
