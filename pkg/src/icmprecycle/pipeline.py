"""Single-pass analysis of a message stream into every report the CLI writes."""

from __future__ import annotations

import os
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime
from ipaddress import IPv4Address
from itertools import islice
from typing import Iterable

from .anomaly import (
    NatLeak,
    TtlHistogram,
    UnreachabilityRollup,
    audit_source_quench,
    detect_echo_anomalies,
    validate_redirect,
)
from .attribution import UNATTRIBUTED, CampaignHistogram, Registry, attribute
from .ingest import DatasetStats
from .wire import Family, IcmpMessage, classify, decode_quotation, is_reserved

CHUNK_SIZE = 20_000


@dataclass
class AnalysisContext:
    registry: Registry
    as_table: object = None
    sent_echo_requests: frozenset = frozenset()


@dataclass
class Analysis:
    stats: DatasetStats = field(default_factory=DatasetStats)
    histogram: CampaignHistogram = field(default_factory=lambda: CampaignHistogram({}))
    rollup: UnreachabilityRollup = field(default_factory=UnreachabilityRollup)
    ttls: TtlHistogram = field(default_factory=TtlHistogram)
    findings: list = field(default_factory=list)
    seeds: list[tuple[datetime, IPv4Address]] = field(default_factory=list)

    def add(self, msg: IcmpMessage, ctx: AnalysisContext):
        cls = classify(msg.icmp_type, msg.icmp_code)
        quotation = decode_quotation(msg)
        self.stats.add(msg, ctx.as_table, cls, quotation)

        result = attribute(msg, quotation, ctx.registry.campaigns)
        cid = result.campaign_id or UNATTRIBUTED
        self.histogram.counts.setdefault(cid, Counter())[cls.key] += 1
        self.rollup.add(msg, cls, quotation)
        self.ttls.add(msg, quotation)

        if quotation is not None:
            if cls.family is Family.Redirect:
                self.findings.append(validate_redirect(msg, quotation, ctx.registry.local_prefixes))
            elif cls.family is Family.SourceQuench:
                self.findings.append(audit_source_quench(msg, quotation, ctx.as_table))
            if is_reserved(quotation.dst):
                self.findings.append(NatLeak(msg.outer_src, quotation.dst))
            if (msg.icmp_type, msg.icmp_code) == (11, 0):
                self.seeds.append((msg.capture_time, quotation.dst))
        self.findings.extend(detect_echo_anomalies(
            [msg], ctx.sent_echo_requests, ctx.registry.measurement_prefixes))

    def merge(self, other: Analysis) -> Analysis:
        self.stats.merge(other.stats)
        self.histogram.merge(other.histogram)
        self.rollup.merge(other.rollup)
        self.ttls.merge(other.ttls)
        self.findings.extend(other.findings)
        self.seeds.extend(other.seeds)
        return self


_worker_ctx: AnalysisContext | None = None


def _init_worker(ctx):
    global _worker_ctx
    _worker_ctx = ctx


def _analyze_chunk(messages):
    analysis = Analysis()
    for msg in messages:
        analysis.add(msg, _worker_ctx)
    return analysis


def _chunks(messages, size):
    it = iter(messages)
    while chunk := list(islice(it, size)):
        yield chunk


def analyze_messages(messages: Iterable[IcmpMessage], ctx: AnalysisContext,
                     parallelism: int | None = None, chunk_size: int = CHUNK_SIZE) -> Analysis:
    """Analyze a stream, optionally fanning chunks out to worker processes.

    Partial results are merged in chunk order, so the output does not
    depend on the degree of parallelism.
    """
    parallelism = parallelism or os.cpu_count() or 1
    result = Analysis()
    if parallelism == 1:
        for msg in messages:
            result.add(msg, ctx)
        return result
    with ProcessPoolExecutor(parallelism, initializer=_init_worker, initargs=(ctx,)) as pool:
        for partial in pool.map(_analyze_chunk, _chunks(messages, chunk_size)):
            result.merge(partial)
    return result
