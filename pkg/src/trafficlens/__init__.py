"""trafficlens: IoT packet captures to an indexed, queryable evidence corpus."""

__version__ = "0.1.0"
