"""modbot: middleware for modular robots on a deterministic simulated world.

Per-module service nodes talk over slow, lossy point-to-point links with a
stop-and-wait reliable protocol. On top of that they offer app messaging,
state queries, versioned code diffusion with unique id assignment, file
transfer, remote command execution, and a role-based control engine.
"""

__version__ = "0.1.0"
