"""HTTP service wrapping the simulator and training stack.

``create_app`` builds a FastAPI application with two kinds of endpoints:
job submission for long-running experiments (train / eval / noise sweep /
smoke), and stateless compute helpers (reward, rendering, event synthesis)
that answer immediately.
"""

from .app import create_app
from .jobs import JobStore

__all__ = ["JobStore", "create_app"]
