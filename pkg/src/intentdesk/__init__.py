"""Multi-tenant intent detection: one generic model plus per-client
relevant-intents lists used as an input feature and an output filter."""

__version__ = "0.1.0"
