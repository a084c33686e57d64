"""Reference server for the token-embedding wire protocol.

Serves POST /embed_tokens and GET /healthz around a pluggable contextual
encoder so retrieval engines speaking the protocol can run on real
embeddings.
"""

__version__ = "0.1.0"

from .config import ServerConfig
from .app import build_app

__all__ = ["ServerConfig", "build_app", "__version__"]
