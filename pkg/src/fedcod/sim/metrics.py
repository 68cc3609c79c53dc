"""Per-round timing, traffic and counter bookkeeping."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from ..coding import Offer
from ..protocol.variants import SERVER


@dataclass
class ClientTiming:
    t_download: float
    t_train: float
    t_upload: float
    t_wait: float

    @property
    def total(self) -> float:
        return self.t_download + self.t_train + self.t_upload


@dataclass
class RoundMetrics:
    round: int
    variant: str
    r: int
    r_lb: int
    t_start: float
    t_end: float
    clients: dict                    # client id -> ClientTiming
    ingress: dict                    # node id -> bytes
    egress: dict
    link_egress: dict                # (src, dst) -> bytes sent by src
    link_ingress: dict               # (src, dst) -> bytes received by dst
    counters: dict = field(default_factory=dict)
    agr_counts: list = field(default_factory=list)

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    @property
    def communication_time(self) -> float:
        """Largest download plus upload time over clients (training excluded)."""
        return max(c.t_download + c.t_upload for c in self.clients.values())

    @property
    def round_time(self) -> float:
        return max(c.total for c in self.clients.values())

    @property
    def inter_client_bytes(self) -> int:
        return sum(b for (s, d), b in self.link_egress.items() if s != SERVER and d != SERVER)

    def mean(self, attr: str) -> float:
        values = [getattr(c, attr) for c in self.clients.values()]
        return sum(values) / len(values)


class RoundRecorder:
    """Receives node callbacks during a round; ``finish`` freezes a RoundMetrics."""

    def __init__(self, round_index: int, variant: str, clients, t0: float, clock):
        self.round = round_index
        self.variant = variant
        self.clients = list(clients)
        self.t0 = t0
        self._clock = clock
        self.downloaded: dict = {}
        self.trained: dict = {}
        self.train_time: dict = {}
        self.received: dict = {}
        self.ingress: Counter = Counter()
        self.egress: Counter = Counter()
        self.link_egress: Counter = Counter()
        self.link_ingress: Counter = Counter()
        self.counters: Counter = Counter()
        self.agr_counts: list = []
        self.done = False
        self.aggregate = None

    @property
    def now(self) -> float:
        return self._clock()

    # -- node callbacks ---------------------------------------------------
    def count(self, name: str, amount: int = 1):
        self.counters[name] += amount

    def offer(self, outcome: Offer, forwarded: bool = False):
        self.counters[outcome.name.lower()] += 1
        if forwarded:
            self.counters["forwarded_" + outcome.name.lower()] += 1

    def download_done(self, client):
        self.downloaded.setdefault(client, self.now)

    def train_done(self, client, train_time):
        self.trained.setdefault(client, self.now)
        self.train_time[client] = train_time

    def model_received(self, client):
        self.received.setdefault(client, self.now)

    def agr_received(self, agr_count):
        self.agr_counts.append(agr_count)

    def other_queue_departure(self, client, own_pending: bool):
        self.counters["other_queue_departures"] += 1
        if own_pending:
            self.counters["priority_violations"] += 1

    def round_done(self, aggregate):
        self.done = True
        self.aggregate = aggregate

    # -- transport callbacks ----------------------------------------------
    def sent(self, src, dst, nbytes: int):
        self.egress[src] += nbytes
        self.link_egress[(src, dst)] += nbytes

    def arrived(self, src, dst, nbytes: int):
        self.ingress[dst] += nbytes
        self.link_ingress[(src, dst)] += nbytes

    def pending_clients(self):
        return [c for c in self.clients if c not in self.received]

    def finish(self, r: int, r_lb: int) -> RoundMetrics:
        t_end = self.now
        timings = {}
        totals = {}
        for c in self.clients:
            t_dl = self.downloaded[c] - self.t0
            t_tr = self.train_time[c]
            t_up = self.received[c] - self.trained[c]
            totals[c] = (t_dl, t_tr, t_up)
        longest = max(sum(v) for v in totals.values())
        for c, (t_dl, t_tr, t_up) in totals.items():
            timings[c] = ClientTiming(t_dl, t_tr, t_up, longest - (t_dl + t_tr + t_up))
        nodes = [SERVER, *self.clients]
        return RoundMetrics(
            round=self.round, variant=self.variant, r=r, r_lb=r_lb, t_start=self.t0, t_end=t_end,
            clients=timings,
            ingress={n: self.ingress[n] for n in nodes},
            egress={n: self.egress[n] for n in nodes},
            link_egress=dict(sorted(self.link_egress.items())),
            link_ingress=dict(sorted(self.link_ingress.items())),
            counters=dict(sorted(self.counters.items())),
            agr_counts=list(self.agr_counts),
        )
