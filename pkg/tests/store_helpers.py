"""In-memory SessionStore construction shared across test modules."""

from pathlib import Path

import numpy as np

from trafficlens.corpus import HashingEmbedder, SessionStore, make_chunk

EMBEDDER = HashingEmbedder()


def make_store(texts, session_id="test-session", modality="FlowSummary", level="Flow"):
    chunks = [make_chunk(t, modality, level, seq=i) for i, t in enumerate(texts)]
    if chunks:
        matrix = np.stack([EMBEDDER.embed(c.text) for c in chunks])
    else:
        matrix = np.zeros((0, EMBEDDER.dims), dtype=np.float32)
    return SessionStore(session_id=session_id, created_at=0.0, input_hashes=frozenset(),
                        directory=Path("."), chunks=chunks, matrix=matrix, dims=EMBEDDER.dims)
