"""Agentic inference plugin for long-horizon lab manipulation, at desk scale.

Atomic-task policies are rolled out under a fixed step budget; between tasks a
transition agent retrieves the next task's start configuration from the
demonstration store and emits a validated transition program that bridges
the state gap.
"""

__version__ = "0.1.0"
