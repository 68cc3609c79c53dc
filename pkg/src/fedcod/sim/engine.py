"""Single-threaded event loop binding protocol nodes to the fluid network.

Events are ``(time, seq, callback)`` tuples in a heap; ties run in
scheduling order. Between events the network advances analytically, so a
transfer's end time is exact for the piecewise-constant bandwidth.
"""
from __future__ import annotations

import heapq
import math

from ..errors import StalledRound
from ..protocol.nodes import CTL, DATA
from ..protocol.variants import SERVER
from .network import FluidNetwork

LANES = (CTL, DATA)


class RoundContext:
    """The ``ctx`` object handed to nodes: clock, timers, CPU, transport, metrics."""

    def __init__(self, network: FluidNetwork, latencies: dict, metrics):
        self.net = network
        self.latencies = latencies
        self.metrics = metrics
        self.nodes: dict = {}
        self._heap: list = []
        self._seq = 0
        self._cpu_free: dict = {}
        self._pending_wakes: set = set()
        self._in_flight_arrivals: dict = {}
        self.last_time = network.now

    @property
    def now(self) -> float:
        return self.net.now

    # -- scheduling -------------------------------------------------------
    def _push(self, t: float, fn):
        self._seq += 1
        heapq.heappush(self._heap, (t, self._seq, fn))

    def timer(self, delay: float, fn):
        self._push(self.now + max(delay, 0.0), fn)

    def compute(self, node, cost: float, fn):
        """Run ``fn`` once ``node``'s CPU has spent ``cost`` seconds on it."""
        start = max(self.now, self._cpu_free.get(node, self.now))
        end = start + max(cost, 0.0)
        self._cpu_free[node] = end
        self._push(end, fn)

    # -- transport --------------------------------------------------------
    def wake(self, src, dst):
        """Ask the network to pull from ``src``'s queues toward ``dst`` (deferred)."""
        key = (src, dst)
        if key in self._pending_wakes:
            return
        self._pending_wakes.add(key)
        self._push(self.now, lambda: self._pull(src, dst))

    def _pull(self, src, dst):
        self._pending_wakes.discard((src, dst))
        node = self.nodes.get(src)
        if node is None:
            return
        for lane in LANES:
            if self.net.busy(src, dst, lane):
                continue
            frame = node.next_frame(dst, lane)
            if frame is not None:
                self.net.start(src, dst, lane, frame, frame.size)

    def abort(self, src, dst, predicate):
        """Cancel in-flight frames on ``src -> dst`` matching ``predicate``."""
        hit = False
        for lane in LANES:
            tr = self.net.lanes.get((src, dst, lane))
            if tr is not None and predicate(tr.frame):
                self.net.remove(tr)
                sent = tr.bytes_sent
                self.metrics.sent(src, dst, sent)
                self.metrics.arrived(src, dst, sent)
                self.metrics.count("aborted_frames")
                hit = True
        if hit:
            self.wake(src, dst)

    def _completed(self, tr):
        self.metrics.sent(tr.src, tr.dst, tr.size)
        latency = self.latencies.get((tr.src, tr.dst), 0.0)
        if latency > 0:
            token = object()
            self._in_flight_arrivals[token] = tr
            self._push(self.now + latency, lambda: self._arrive(token))
        else:
            self._deliver(tr)
        self.wake(tr.src, tr.dst)

    def _arrive(self, token):
        tr = self._in_flight_arrivals.pop(token, None)
        if tr is not None:
            self._deliver(tr)

    def _deliver(self, tr):
        self.metrics.arrived(tr.src, tr.dst, tr.size)
        node = self.nodes.get(tr.dst)
        if node is not None:
            node.deliver(tr.src, tr.frame)

    # -- main loop --------------------------------------------------------
    def run(self, deadline: float, on_stall):
        """Process events until the round completes; ``on_stall(reason)`` must raise."""
        net = self.net
        while not self.metrics.done:
            t_ev = self._heap[0][0] if self._heap else math.inf
            t_net = min(net.next_completion(), net.next_rate_change())
            t = min(t_ev, t_net)
            if math.isinf(t):
                on_stall("no pending events")
            if t > deadline:
                net.advance(deadline)
                on_stall("simulated time cap reached")
            if t < self.last_time:
                raise RuntimeError("event time went backwards")
            self.last_time = t
            for tr in net.advance(t):
                self._completed(tr)
            while self._heap and self._heap[0][0] <= t and not self.metrics.done:
                _, _, fn = heapq.heappop(self._heap)
                fn()

    def teardown(self):
        """Abort everything still moving; partial bytes are charged to both ends."""
        for tr in list(self.net.active):
            self.net.remove(tr)
            sent = tr.bytes_sent
            self.metrics.sent(tr.src, tr.dst, sent)
            self.metrics.arrived(tr.src, tr.dst, sent)
        for tr in self._in_flight_arrivals.values():
            self.metrics.arrived(tr.src, tr.dst, tr.size)
        self._in_flight_arrivals.clear()
        self._heap.clear()
        self._pending_wakes.clear()


def blocking_link(recorder, network, clients):
    """Best guess at which client and link held a stalled round up."""
    pending = recorder.pending_clients() or list(clients)
    slowest = None
    for tr in network.active:
        if tr.src in pending or tr.dst in pending:
            if slowest is None or tr.rate < slowest.rate:
                slowest = tr
    if slowest is not None:
        client = slowest.src if slowest.src in pending else slowest.dst
        return client, (slowest.src, slowest.dst)
    client = pending[0]
    if client not in recorder.downloaded:
        return client, (SERVER, client)
    return client, (client, SERVER)


def stall_error(message, round_index, recorder, network, clients, names=None):
    client, link = blocking_link(recorder, network, clients)
    label = (lambda x: names.get(x, x)) if names else (lambda x: x)
    text = (f"round {round_index} stalled ({message}) waiting on client {label(client)} "
            f"over link {label(link[0])}->{label(link[1])}")
    return StalledRound(text, round_index=round_index, client=client, link=link)
