"""Real-network probe transport. Only used when live probing is explicitly enabled.

Probes are UDP datagrams to port 33434 with the source port derived from
the flow id, so every probe of one traceroute hashes to the same ECMP
member. Replies are read from a raw ICMP socket, which needs CAP_NET_RAW.
"""

from __future__ import annotations

import select
import socket
import time
from ipaddress import IPv4Address, IPv4Network
from pathlib import Path

from .errors import FileUnreadable, TransportFailure
from .netsim import ProbeReply, ReplyKind
from .wire import decode_ipv4

PROBE_DST_PORT = 33434


def load_allowlist(path) -> tuple[IPv4Network, ...]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise FileUnreadable(f"cannot read allowlist {path}: {exc}") from exc
    nets = []
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            nets.append(IPv4Network(line, strict=False))
        except ValueError:
            raise FileUnreadable(f"{path}:{lineno}: not a prefix: {line!r}") from None
    if not nets:
        raise FileUnreadable(f"allowlist {path} is empty")
    return tuple(nets)


def check_allowed(target, allowlist) -> IPv4Address:
    target = IPv4Address(target)
    if not any(target in net for net in allowlist):
        raise TransportFailure(f"{target} is not on the allowlist")
    return target


class LiveTransport:
    def __init__(self, allowlist, timeout: float = 1.0):
        self.allowlist = tuple(allowlist)
        self.timeout = timeout
        self._t0 = time.monotonic()
        try:
            self._icmp = socket.socket(socket.AF_INET, socket.SOCK_RAW, socket.IPPROTO_ICMP)
        except OSError as exc:
            raise TransportFailure(f"cannot open probe sockets: {exc}") from exc

    def now(self) -> float:
        return time.monotonic() - self._t0

    def wait_until(self, t: float) -> None:
        delay = t - self.now()
        if delay > 0:
            time.sleep(delay)

    def send_probe(self, target, ttl: int, flow_id: int, at: float) -> ProbeReply:
        target = check_allowed(target, self.allowlist)
        sport = 33435 + flow_id % 28000
        try:
            udp = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            udp.setsockopt(socket.IPPROTO_IP, socket.IP_TTL, ttl)
            udp.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            udp.bind(("", sport))
            udp.sendto(b"\x00" * 12, (str(target), PROBE_DST_PORT))
            udp.close()
        except OSError as exc:
            raise TransportFailure(f"sending probe to {target} failed: {exc}") from exc
        sent = self.now()
        deadline = sent + self.timeout
        while (left := deadline - self.now()) > 0:
            ready, _, _ = select.select([self._icmp], [], [], left)
            if not ready:
                break
            packet, (src, _) = self._icmp.recvfrom(2048)
            ihl = (packet[0] & 0x0F) * 4
            icmp_type, icmp_code = packet[ihl], packet[ihl + 1]
            quoted = decode_ipv4(packet[ihl + 8:])
            if quoted is None or quoted.dst != target or quoted.src_port != sport:
                continue
            at_reply = at + (self.now() - sent)
            if icmp_type == 3 and icmp_code == 3 or IPv4Address(src) == target:
                return ProbeReply(ReplyKind.TargetReached, IPv4Address(src), at_reply)
            if icmp_type == 11:
                return ProbeReply(ReplyKind.Responder, IPv4Address(src), at_reply)
        return ProbeReply(ReplyKind.Timeout, None, None)

