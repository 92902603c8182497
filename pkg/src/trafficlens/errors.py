"""Exception types shared across the package."""


class TrafficLensError(Exception):
    """Base class for all package-specific errors."""


# --- capture parsing ---

class NotAPcap(TrafficLensError):
    """File is not a classic pcap; carries the detected format when known."""

    def __init__(self, detected: str = "unknown"):
        super().__init__(f"not a classic pcap file (detected: {detected})")
        self.detected = detected


class TruncatedCapture(TrafficLensError):
    """Global header shorter than the 24 bytes a pcap must carry."""


class MalformedMac(TrafficLensError):
    """MAC address is not six colon-separated octets."""


# --- pluggable clients ---

class ModelUnavailable(TrafficLensError):
    """Remote classifier endpoint unreachable or returned garbage."""


class EmbedderUnavailable(TrafficLensError):
    """Remote embedder endpoint unreachable or returned garbage."""


class RerankerUnavailable(TrafficLensError):
    """Remote cross-encoder endpoint unreachable or returned garbage."""


class ChatUnavailable(TrafficLensError):
    """Chat completion endpoint unreachable or returned garbage."""


class SearchUnavailable(TrafficLensError):
    """Web search provider unreachable, or no fixture for the query."""


class EmptyText(TrafficLensError):
    """Text to embed contains no tokens."""


# --- enrichment ---

class NoFixtureForIp(TrafficLensError):
    """Fixture mode has no recorded answer for the requested IP."""


class AllProvidersFailed(TrafficLensError):
    """Live mode could not get an answer from any configured provider."""


# --- corpus / retrieval ---

class SessionNotFound(TrafficLensError):
    """Session id is absent from the session index."""


class EmptyIndex(TrafficLensError):
    """Search was issued against a store with no chunks."""


# --- metrics ---

class EmptyReference(TrafficLensError):
    """Metric called with an empty reference text."""
