"""Player velocity completion from event-time positional snapshots, evaluated through pitch control."""

__version__ = "0.1.0"
