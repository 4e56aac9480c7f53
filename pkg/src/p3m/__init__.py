"""Privacy-preserving portrait matting toolkit."""

from . import anonymize, core, datapipe, metrics, p3mcp, p3mnet, trainer

__all__ = ["anonymize", "core", "datapipe", "metrics", "p3mcp", "p3mnet", "trainer"]
__version__ = "0.1.0"
