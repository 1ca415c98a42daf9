"""Host-unreachability churn between two scan epochs."""

from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass
from ipaddress import IPv4Address
from pathlib import Path

from .errors import FileUnreadable

REACHABILITY_CAVEAT = (
    "'reachable' means no host-unreachable ICMP message was received for the host in that "
    "epoch; it does not mean the scan actually reached the host"
)
UNMAPPED = "unmapped"


@dataclass(frozen=True)
class EpochSet:
    epoch_id: str
    unreachable: frozenset[IPv4Address]


@dataclass(frozen=True)
class AsConcentration:
    """Smallest set of ASes covering at least ``target_share`` of flipping hosts."""

    target_share: float
    as_count: int
    covered_fraction: float
    ases: tuple


@dataclass(frozen=True)
class ChurnReport:
    epoch_a: str
    epoch_b: str
    stayed_unreachable: int
    became_reachable: int
    became_unreachable: int
    flip_as_concentration: AsConcentration

    def to_json(self):
        conc = self.flip_as_concentration
        return {
            "epoch_a": self.epoch_a,
            "epoch_b": self.epoch_b,
            "stayed_unreachable": self.stayed_unreachable,
            "became_reachable": self.became_reachable,
            "became_unreachable": self.became_unreachable,
            "flip_as_concentration": {
                "target_share": conc.target_share,
                "as_count": conc.as_count,
                "covered_fraction": round(conc.covered_fraction, 9),
                "ases": list(conc.ases),
            },
            "caveat": REACHABILITY_CAVEAT,
        }

    def flow_csv(self) -> str:
        """Source/target/value rows for a Sankey diagram."""
        a, b = self.epoch_a, self.epoch_b
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["source", "target", "value"])
        w.writerow([f"{a}:unreachable", f"{b}:unreachable", self.stayed_unreachable])
        w.writerow([f"{a}:unreachable", f"{b}:reachable", self.became_reachable])
        w.writerow([f"{a}:reachable", f"{b}:unreachable", self.became_unreachable])
        return buf.getvalue()


def as_concentration(hosts, as_lookup, target_share=0.8) -> AsConcentration:
    if not hosts:
        return AsConcentration(target_share, 0, 0.0, ())
    per_as = Counter()
    for h in hosts:
        asn = as_lookup.lookup(h) if as_lookup is not None else None
        per_as[UNMAPPED if asn is None else asn] += 1
    ranked = sorted(per_as.items(), key=lambda kv: (-kv[1], str(kv[0])))
    covered = 0
    chosen = []
    for asn, n in ranked:
        chosen.append(asn)
        covered += n
        if covered >= target_share * len(hosts):
            break
    return AsConcentration(target_share, len(chosen), covered / len(hosts), tuple(chosen))


def compare_epochs(a: EpochSet, b: EpochSet, as_lookup=None, target_share=0.8) -> ChurnReport:
    stayed = a.unreachable & b.unreachable
    recovered = a.unreachable - b.unreachable
    lost = b.unreachable - a.unreachable
    return ChurnReport(
        a.epoch_id,
        b.epoch_id,
        len(stayed),
        len(recovered),
        len(lost),
        as_concentration(recovered | lost, as_lookup, target_share),
    )


def load_epoch(path, epoch_id: str | None = None) -> EpochSet:
    """Read one dotted-quad per line; blank lines and ``#`` comments are ignored."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise FileUnreadable(f"cannot read epoch file {path}: {exc}") from exc
    hosts = set()
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            hosts.add(IPv4Address(line))
        except ValueError:
            raise FileUnreadable(f"{path}:{lineno}: not an IPv4 address: {line!r}") from None
    return EpochSet(epoch_id or path.stem, frozenset(hosts))
