from __future__ import annotations

import ipaddress
import socket
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


class NetworkGuard:
    """Records and blocks outbound socket activity.

    With ``allow_loopback`` the local fake servers used by adapter tests
    still work; everything else raises.
    """

    def __init__(self, allow_loopback: bool) -> None:
        self.allow_loopback = allow_loopback
        self.attempts: list[object] = []

    def _check(self, address: object) -> None:
        host = address[0] if isinstance(address, tuple) else address
        if self.allow_loopback and isinstance(host, str):
            try:
                if host == "localhost" or ipaddress.ip_address(host).is_loopback:
                    return
            except ValueError:
                pass
        self.attempts.append(address)
        raise OSError(f"network access blocked in tests: {address!r}")

    def install(self, monkeypatch: pytest.MonkeyPatch) -> "NetworkGuard":
        real_connect, real_connect_ex = socket.socket.connect, socket.socket.connect_ex
        real_getaddrinfo = socket.getaddrinfo
        guard = self

        def connect(sock, address):
            if sock.family in (socket.AF_INET, socket.AF_INET6):
                guard._check(address)
            return real_connect(sock, address)

        def connect_ex(sock, address):
            if sock.family in (socket.AF_INET, socket.AF_INET6):
                guard._check(address)
            return real_connect_ex(sock, address)

        def getaddrinfo(host, *args, **kwargs):
            guard._check((host,))
            return real_getaddrinfo(host, *args, **kwargs)

        monkeypatch.setattr(socket.socket, "connect", connect)
        monkeypatch.setattr(socket.socket, "connect_ex", connect_ex)
        monkeypatch.setattr(socket, "getaddrinfo", getaddrinfo)
        return self


@pytest.fixture(autouse=True)
def _no_external_network(monkeypatch: pytest.MonkeyPatch) -> NetworkGuard:
    return NetworkGuard(allow_loopback=True).install(monkeypatch)


@pytest.fixture
def strict_network_guard(monkeypatch: pytest.MonkeyPatch) -> NetworkGuard:
    """Blocks every socket connection, loopback included."""
    return NetworkGuard(allow_loopback=False).install(monkeypatch)


# -- acceptance report ----------------------------------------------------------

_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request: pytest.FixtureRequest):
    """``check(number, title, ok, detail)`` records one criterion line and
    fails the test when ``ok`` is false."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def check(number: int, title: str, ok: bool, detail: str = "") -> None:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}" + (f"  ({detail})" if detail else "")
        lines.append(line)
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter, exitstatus, config) -> None:
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
