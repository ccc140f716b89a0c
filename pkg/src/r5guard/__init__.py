"""RV32 zone simulator with shadow-stack CFI and performance-counter detection."""

__version__ = "0.1.0"
