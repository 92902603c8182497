import socket

import pytest


@pytest.fixture(autouse=True, scope="session")
def socket_recorder():
    """Record every AF_INET/AF_INET6 connect; the suite must stay on loopback."""
    recorded = []
    real_connect = socket.socket.connect

    def spy(self, address, *args, **kwargs):
        if self.family in (socket.AF_INET, socket.AF_INET6):
            host = str(address[0]) if isinstance(address, tuple) else str(address)
            if host not in ("localhost", "::1") and not host.startswith("127."):
                recorded.append(address)
        return real_connect(self, address, *args, **kwargs)

    socket.socket.connect = spy
    yield recorded
    socket.socket.connect = real_connect
    assert recorded == [], f"non-loopback connections observed: {recorded}"
