"""Reference VQA inference sidecar for the contextd wire protocol.

Implements protocol v1.0 as documented in the orchestrator repository's
PROTOCOL.md, with two modes: a deterministic stub answering from a
ground-truth sidecar file (for integration tests and latency emulation),
and a model mode wrapping a pretrained visual-question-answering pipeline.

The runtime depends only on the standard library (model mode lazily pulls
in transformers); the orchestrator is a wire peer, not an import.
"""

from .server import SidecarConfig, SidecarServer

__version__ = "0.1.0"

__all__ = ["SidecarConfig", "SidecarServer", "__version__"]
