"""Generative LARP engine.

Turns free-form story text into a structured world spec, runs LLM-driven
character agents with explicit memory/affect/belief/trust state, and hosts
interactive, branchable, rewindable narrative sessions behind a CLI and an
HTTP service.
"""

__version__ = "0.1.0"
