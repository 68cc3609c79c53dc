"""Event-driven server and client state machines for one round.

Nodes never touch the network directly. They hand frames to the transport
when it pulls (``next_frame``), react to deliveries (``on_frame``), and use
the context for timers, CPU time, aborts and metrics. One instance lives
for exactly one round.

Download blocks keep ``origin == SERVER`` all the way to the client; the
server-origin flag is cleared when a client forwards one. Upload blocks
carry the owning client (or, once aggregated, the relay) as origin.
"""
from __future__ import annotations

from collections import deque

import numpy as np

from ..coding import Decoder, EncodedBlock, Offer, OriginKind, aggregate_blocks, encode, \
    random_coefficients, recode, split
from ..errors import ProtocolViolation
from ..wire import FLAG_AGGREGATED, FLAG_SERVER_ORIGIN, Frame, MsgType, block_to_frame, control, \
    frame_to_block
from .plans import agr_relay, cluster_members, upload_plan
from .variants import SERVER, Download, RoundSpec, Upload

CTL = "ctl"
DATA = "data"


def whole_model_frame(round_, origin, model, flags=0, agr_count=1) -> Frame:
    return Frame(MsgType.BLOCK, round=round_, origin=origin, block_index=0, k=1, flags=flags,
                 agr_count=agr_count, coefficients=np.ones(1),
                 payload=np.asarray(model, dtype=np.float32))


class Endpoint:
    def __init__(self, node_id: int, spec: RoundSpec, ctx):
        self.id = node_id
        self.spec = spec
        self.ctx = ctx
        self._ctl: dict[int, deque] = {}

    def send_control(self, dst: int, msg_type: MsgType, origin=None, k=0, block_index=0):
        frame = control(msg_type, self.spec.round, self.id if origin is None else origin, k=k,
                        block_index=block_index)
        self._ctl.setdefault(dst, deque()).append(frame)
        self.ctx.wake(self.id, dst)

    def next_frame(self, dst: int, lane: str):
        if lane == CTL:
            q = self._ctl.get(dst)
            return q.popleft() if q else None
        return self.next_data(dst)

    def next_data(self, dst: int):
        return None

    def deliver(self, src: int, frame: Frame):
        if frame.round != self.spec.round:
            self.ctx.metrics.count("stale_dropped")
            return
        self.on_frame(src, frame)

    def on_frame(self, src: int, frame: Frame):
        raise NotImplementedError

    def _cost(self, elements: int) -> float:
        return self.spec.coding_cost * elements


class Server(Endpoint):
    def __init__(self, spec: RoundSpec, ctx, model: np.ndarray, rng: np.random.Generator,
                 clients=None):
        super().__init__(SERVER, spec, ctx)
        self.model = np.asarray(model, dtype=np.float32)
        self.rng = rng
        self.clients = list(range(spec.n)) if clients is None else list(clients)
        self.partitions = split(self.model, spec.k) if spec.download in (
            Download.FORWARD, Download.RECODE) else None
        self.acked: set[int] = set()
        self.sent_whole: set[int] = set()
        self.prepared: dict[int, Frame] = {}
        self.preparing: set[int] = set()
        self.served = {c: 0 for c in self.clients}
        self.next_index = 0
        # upload side
        self.received: dict[int, np.ndarray] = {}
        self.decoders: dict[int, Decoder] = {}
        self.decoding: set[int] = set()
        self.partials: dict[int, EncodedBlock] = {}
        self.cluster_sums: dict[int, np.ndarray] = {}
        self.aggregate = None
        self.done = False
        if spec.download == Download.TREE:
            self.download_targets = list(spec.routes[SERVER].children)
        else:
            self.download_targets = list(self.clients)

    # -- download -------------------------------------------------------
    def start(self):
        for c in self.clients:
            self.send_control(c, MsgType.ROUND_START, k=self.spec.k, block_index=self.spec.r)
        coded = self.spec.download in (Download.FORWARD, Download.RECODE)
        for c in self.download_targets:
            if coded:
                self._prepare(c)
            self.ctx.wake(self.id, c)

    def _prepare(self, dst: int):
        if dst in self.acked or dst in self.prepared or dst in self.preparing:
            return
        self.preparing.add(dst)
        index = self.next_index
        self.next_index += 1
        coeffs = random_coefficients(self.spec.k, self.rng)

        def ready():
            self.preparing.discard(dst)
            if dst in self.acked or self.done:
                return
            block = EncodedBlock(self.spec.round, SERVER, index, coeffs,
                                 encode(self.partitions, coeffs), OriginKind.SERVER)
            self.prepared[dst] = block_to_frame(block)
            self.ctx.wake(self.id, dst)

        # one encoder per outgoing connection; decoding uses the node's main worker
        self.ctx.compute((self.id, dst), self._cost(self.spec.part_len), ready)

    def server_download_step(self, dst: int):
        """Next download frame for ``dst``, or None when nothing is ready or it is done."""
        if dst in self.acked or self.done:
            return None
        if self.spec.download in (Download.DIRECT, Download.TREE):
            if dst in self.sent_whole or dst not in self.download_targets:
                return None
            self.sent_whole.add(dst)
            self.served[dst] += 1
            return whole_model_frame(self.spec.round, SERVER, self.model, flags=FLAG_SERVER_ORIGIN)
        frame = self.prepared.pop(dst, None)
        if frame is not None:
            self.served[dst] += 1
            self._prepare(dst)
        return frame

    def next_data(self, dst):
        return self.server_download_step(dst)

    # -- receive ----------------------------------------------------------
    def on_frame(self, src, frame):
        if frame.msg_type == MsgType.DECODE_ACK:
            self.acked.add(src)
            self.prepared.pop(src, None)
            self.ctx.abort(self.id, src, lambda f: f.is_block)
        elif frame.msg_type == MsgType.BLOCK and not self.done:
            try:
                self.server_upload_receive(frame)
            except ProtocolViolation:
                self.ctx.metrics.count("protocol_violations")

    def server_upload_receive(self, frame: Frame):
        mode = self.spec.upload
        if mode == Upload.DIRECT:
            owner = frame.origin
            if owner in self.received or owner not in self.clients:
                self.ctx.metrics.count("late_blocks")
                return
            self._model_in(owner, np.asarray(frame.payload, np.float32) / frame.coefficients[0])
        elif mode == Upload.TREE:
            center = frame.origin
            members = cluster_members(self.spec.routes, center)
            if frame.agr_count != len(members):
                raise ProtocolViolation(f"cluster {center} sent agr_count {frame.agr_count}")
            self.cluster_sums[center] = np.asarray(frame.payload, np.float64)
            for m in members:
                self.received[m] = None
                self.ctx.metrics.model_received(m)
            if len(self.cluster_sums) == len(self.spec.routes[SERVER].children):
                total = sum(self.cluster_sums[c] for c in sorted(self.cluster_sums))
                self._finish(total)
        elif mode == Upload.RELAY:
            self._relay_block(frame)
        else:
            self._agr_block(frame)

    def _relay_block(self, frame):
        owner = frame.origin
        if owner in self.received or owner in self.decoding:
            self.ctx.metrics.count("late_blocks")
            return
        dec = self.decoders.setdefault(owner, Decoder(self.spec.k))
        outcome = dec.offer(frame_to_block(frame))
        self.ctx.metrics.offer(outcome)
        if outcome == Offer.COMPLETE:
            self.decoding.add(owner)
            cost = self._cost(self.spec.k * self.spec.part_len)
            self.ctx.compute(self.id, cost, lambda: self._decoded_client(owner))

    def _decoded_client(self, owner):
        self.decoding.discard(owner)
        model = self.decoders[owner].finish(self.spec.model_length)
        for c in self.clients:
            self.send_control(c, MsgType.UPLOAD_COMPLETE, origin=owner)
        self._model_in(owner, model)

    def _model_in(self, owner, model):
        self.received[owner] = model
        self.ctx.metrics.model_received(owner)
        if len(self.received) == len(self.clients):
            w = self.spec.weights
            total = np.zeros(self.spec.model_length, dtype=np.float64)
            for i, c in enumerate(self.clients):
                total += w[i] * self.received[c].astype(np.float64)
            self._finish(total)

    def _agr_block(self, frame):
        n = self.spec.n
        j = frame.block_index
        if frame.agr_count > n:
            raise ProtocolViolation(f"agr_count {frame.agr_count} > n={n} for index {j}")
        if not np.array_equal(frame.coefficients, self.spec.row(j)):
            raise ProtocolViolation(f"index {j} carries a foreign coefficient row")
        if self.decoders.get(0) is not None and self.decoders[0].complete:
            self.ctx.metrics.count("late_blocks")
            return
        block = frame_to_block(frame)
        held = self.partials.get(j)
        if held is not None:
            if held.agr_count >= n:
                self.ctx.metrics.count("late_blocks")
                return
            block = aggregate_blocks(held, block)
            if block.agr_count > n:
                raise ProtocolViolation(f"index {j} folded past n contributions")
        self.partials[j] = block
        self.ctx.metrics.agr_received(frame.agr_count)
        if block.agr_count < n:
            return
        dec = self.decoders.setdefault(0, Decoder(self.spec.k))
        outcome = dec.offer(block)
        self.ctx.metrics.offer(outcome)
        if outcome == Offer.COMPLETE:
            cost = self._cost(self.spec.k * self.spec.part_len)
            self.ctx.compute(self.id, cost, self._decoded_aggregate)

    def _decoded_aggregate(self):
        total = self.decoders[0].finish(self.spec.model_length).astype(np.float64)
        for c in self.clients:
            self.received[c] = None
            self.ctx.metrics.model_received(c)
        self._finish(total)

    def _finish(self, total):
        self.done = True
        self.aggregate = total
        self.ctx.metrics.round_done(total)


class Client(Endpoint):
    def __init__(self, index: int, spec: RoundSpec, ctx, train_time: float, update: np.ndarray,
                 rng: np.random.Generator, neighbours=None):
        super().__init__(index, spec, ctx)
        self.train_time = train_time
        self.update = update
        self.rng = rng
        self.neighbours = [c for c in range(spec.n) if c != index] if neighbours is None \
            else list(neighbours)
        self.route = spec.routes.get(index) if spec.routes else None
        self.r = None
        self.decoder = None
        self.downloaded = None
        self.local_model = None
        self.neighbour_done: set[int] = set()
        self.peer_queues: dict[int, deque] = {}
        self.download_frames: dict[int, Frame] = {}
        self.own_queue: deque = deque()
        self.other_queue: deque = deque()
        self.agr_buffer: dict[int, tuple[EncodedBlock, set]] = {}
        self.agr_released: dict[int, int] = {}
        self.cluster_models: dict[int, np.ndarray] = {}
        self.finished_owners: set[int] = set()
        self.upload_stopped = False
        self.uploading = False

    # -- transport ------------------------------------------------------
    def next_data(self, dst):
        if dst == SERVER:
            if self.own_queue:
                return self.own_queue.popleft()
            if self.other_queue:
                frame = self.other_queue.popleft()
                self.ctx.metrics.other_queue_departure(self.id, bool(self.own_queue))
                return frame
            return None
        q = self.peer_queues.get(dst)
        while q:
            frame = q.popleft()
            if id(frame) in self.download_frames and dst in self.neighbour_done:
                continue
            return frame
        return None

    def _to_peer(self, dst, frame, download=False):
        if download:
            if dst in self.neighbour_done:
                return
            self.download_frames[id(frame)] = frame
        self.peer_queues.setdefault(dst, deque()).append(frame)
        self.ctx.wake(self.id, dst)

    def _to_server(self, frame, own: bool):
        (self.own_queue if own else self.other_queue).append(frame)
        self.ctx.wake(self.id, SERVER)

    # -- receive ----------------------------------------------------------
    def on_frame(self, src, frame):
        t = frame.msg_type
        if t == MsgType.ROUND_START:
            self.r = frame.block_index
        elif t == MsgType.DECODE_ACK:
            self._neighbour_finished(src)
        elif t == MsgType.UPLOAD_COMPLETE:
            self._upload_complete(frame.origin)
        elif t == MsgType.BLOCK:
            if frame.origin == SERVER:
                self.client_download_receive(src, frame)
            else:
                self.client_upload_receive(src, frame)

    # -- download -------------------------------------------------------
    def client_download_receive(self, src, frame):
        if self.downloaded is not None or (self.decoder is not None and self.decoder.complete):
            self.ctx.metrics.count("late_blocks")
            return
        if self.decoder is None:
            self.decoder = Decoder(frame.k)
        block = frame_to_block(frame)
        outcome = self.decoder.offer(block)
        self.ctx.metrics.offer(outcome, forwarded=src != SERVER)
        mode = self.spec.download
        if mode == Download.FORWARD and block.origin_kind == OriginKind.SERVER:
            fwd = block_to_frame(block.relabel(origin_kind=OriginKind.CLIENT))
            for peer in self.neighbours:
                if peer != src:
                    self._to_peer(peer, fwd, download=True)
        elif mode == Download.RECODE and outcome in (Offer.ACCEPTED, Offer.COMPLETE):
            self._recode_to_peers(src)
        if outcome == Offer.COMPLETE:
            # rank k is known before the solve, so senders can stop right away
            self._acknowledge()
            coded = mode in (Download.FORWARD, Download.RECODE)
            cost = self._cost(self.decoder.k * self.spec.part_len) if coded else 0.0
            self.ctx.compute(self.id, cost, self._download_decoded)

    def _recode_to_peers(self, src):
        rows = list(self.decoder.rows)
        payloads = list(self.decoder.payloads)
        for peer in self.neighbours:
            if peer == src or peer in self.neighbour_done:
                continue

            def emit(peer=peer):
                coeffs, payload = recode(rows, payloads, self.rng)
                self._to_peer(peer, Frame(MsgType.BLOCK, round=self.spec.round, origin=SERVER,
                                          k=len(coeffs), coefficients=coeffs, payload=payload),
                              download=True)

            self.ctx.compute(self.id, self._cost(self.spec.part_len), emit)

    def _acknowledge(self):
        mode = self.spec.download
        if mode == Download.TREE:
            self.send_control(self.route.parent, MsgType.DECODE_ACK)
            return
        self.send_control(SERVER, MsgType.DECODE_ACK)
        if mode in (Download.FORWARD, Download.RECODE):
            for peer in self.neighbours:
                self.send_control(peer, MsgType.DECODE_ACK)

    def _download_decoded(self):
        self.downloaded = self.decoder.finish(self.spec.model_length)
        self.ctx.metrics.download_done(self.id)
        if self.spec.download == Download.TREE:
            for child in self.route.children:
                self._to_peer(child, whole_model_frame(self.spec.round, SERVER, self.downloaded))
        self.ctx.timer(self.train_time, self._trained)

    def _neighbour_finished(self, peer):
        self.neighbour_done.add(peer)
        q = self.peer_queues.get(peer)
        if q:
            self.peer_queues[peer] = deque(f for f in q if id(f) not in self.download_frames)
        frames = self.download_frames
        self.ctx.abort(self.id, peer, lambda f: id(f) in frames)

    # -- upload ---------------------------------------------------------
    def _trained(self):
        self.local_model = (self.downloaded.astype(np.float64) + self.update).astype(np.float32)
        self.ctx.metrics.train_done(self.id, self.train_time)
        self.uploading = True
        if self.upload_stopped:
            return
        mode = self.spec.upload
        if mode == Upload.DIRECT:
            self._to_server(whole_model_frame(self.spec.round, self.id, self.local_model), own=True)
        elif mode == Upload.TREE:
            if self.route.parent == SERVER:
                self._cluster_model(self.id, self.local_model)
            else:
                self._to_peer(self.route.parent,
                              whole_model_frame(self.spec.round, self.id, self.local_model))
        else:
            self._encode_upload(mode)

    def upload_blocks(self, r: int):
        """Plan and encode this client's ``k + r`` blocks; yields ``(dest, block)``."""
        spec = self.spec
        source = self.local_model.astype(np.float64)
        if spec.upload in (Upload.AGR_WAIT, Upload.AGR_NOWAIT):
            source = source * spec.weights[self.id]
        parts = split(source.astype(np.float32), spec.k)
        for dest, j in upload_plan(self.id, spec.n, spec.k, r, spec.variant):
            coeffs = spec.row(j)
            yield dest, EncodedBlock(spec.round, self.id, j, coeffs, encode(parts, coeffs),
                                     OriginKind.CLIENT)

    def _encode_upload(self, mode):
        r = self.spec.r if self.r is None else self.r
        for dest, block in self.upload_blocks(r):
            def ship(dest=dest, block=block):
                if self.upload_stopped:
                    return
                if dest == self.id:
                    self._agr_fold(self.id, block)
                elif dest == SERVER:
                    self._to_server(block_to_frame(block), own=True)
                else:
                    self._to_peer(dest, block_to_frame(block))

            self.ctx.compute(self.id, self._cost(self.spec.part_len), ship)

    def client_upload_receive(self, src, frame):
        if self.upload_stopped or frame.origin in self.finished_owners:
            self.ctx.metrics.count("late_blocks")
            return
        mode = self.spec.upload
        if mode == Upload.TREE:
            self._cluster_model(frame.origin, np.asarray(frame.payload, np.float32))
        elif mode == Upload.RELAY:
            self._to_server(frame, own=False)
        elif mode in (Upload.AGR_WAIT, Upload.AGR_NOWAIT):
            if agr_relay(frame.block_index, self.spec.n) != self.id or \
                    not np.array_equal(frame.coefficients, self.spec.row(frame.block_index)):
                self.ctx.metrics.count("protocol_violations")
                return
            self._agr_fold(frame.origin, frame_to_block(frame))
        else:
            self.ctx.metrics.count("late_blocks")

    def _agr_fold(self, contributor, block):
        j = block.block_index
        held = self.agr_buffer.get(j)
        if held is None:
            self.agr_buffer[j] = (block, {contributor})
            if self.spec.upload == Upload.AGR_NOWAIT and self.spec.agr_window > 0:
                self.ctx.timer(self.spec.agr_window, lambda: self._release(j))
        else:
            total, who = held
            self.agr_buffer[j] = (aggregate_blocks(total, block), who | {contributor})
        _, who = self.agr_buffer[j]
        if self.spec.upload == Upload.AGR_WAIT:
            if len(who) == self.spec.n:
                self._release(j)
        elif self.spec.agr_window <= 0:
            self._release(j)

    def _release(self, j):
        held = self.agr_buffer.pop(j, None)
        if held is None or self.upload_stopped:
            return
        total, who = held
        self.agr_released[j] = self.agr_released.get(j, 0) + len(who)
        out = total.relabel(origin=self.id, origin_kind=OriginKind.AGGREGATED, agr_count=len(who))
        frame = block_to_frame(out)
        frame.flags = FLAG_AGGREGATED
        self._to_server(frame, own=False)

    def _cluster_model(self, member, model):
        self.cluster_models[member] = model
        members = cluster_members(self.spec.routes, self.id)
        if len(self.cluster_models) == len(members):
            w = self.spec.weights
            partial = np.zeros(self.spec.model_length, dtype=np.float64)
            for m in sorted(members):
                partial += w[m] * self.cluster_models[m].astype(np.float64)
            self._to_server(whole_model_frame(self.spec.round, self.id, partial,
                                              flags=FLAG_AGGREGATED, agr_count=len(members)),
                            own=True)

    def _upload_complete(self, owner):
        if owner == SERVER or owner == self.id and self.spec.upload != Upload.RELAY:
            self._stop_upload()
            return
        self.finished_owners.add(owner)
        self.other_queue = deque(f for f in self.other_queue if f.origin != owner)
        if owner == self.id:
            self.own_queue.clear()
            for peer in list(self.peer_queues):
                self.peer_queues[peer] = deque(f for f in self.peer_queues[peer]
                                               if f.origin != owner)
                self.ctx.abort(self.id, peer, lambda f: f.is_block and f.origin == owner)
        self.ctx.abort(self.id, SERVER, lambda f: f.is_block and f.origin == owner)

    def _stop_upload(self):
        self.upload_stopped = True
        self.own_queue.clear()
        self.other_queue.clear()
        for peer in self.peer_queues:
            self.peer_queues[peer] = deque(f for f in self.peer_queues[peer]
                                           if id(f) in self.download_frames)
        self.ctx.abort(self.id, SERVER, lambda f: f.is_block)
