"""Search-augmented generation without a pre-built index.

Requests are parsed into keyword lists, answered by live web search, reranked
at two granularities, cut into tagged segments and filtered by an extractor
model before the generator sees them.
"""

from .pipeline import Answer, Backends, GenerationError, PipelineConfig, answer
from .request_parser import InferenceRequest, ParseOutcome
from .segmenter import TaggedDocument, segment

__version__ = "0.1.0"

__all__ = [
    "Answer",
    "Backends",
    "GenerationError",
    "InferenceRequest",
    "ParseOutcome",
    "PipelineConfig",
    "TaggedDocument",
    "answer",
    "segment",
]
