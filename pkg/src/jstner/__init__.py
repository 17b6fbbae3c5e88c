"""Joint speech-translation + named-entity-recognition workbench."""

__version__ = "0.1.0"
