"""Run rounds and experiments on a configured topology.

Every random quantity comes from its own seeded stream keyed by purpose,
round and node, so two variants run on the same seed see the same
bandwidth draws, training times and model updates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..config import ExperimentConfig, VariantConfig
from ..errors import InvalidConfig, ProtocolViolation
from ..protocol.nodes import Client, Server
from ..protocol.plans import aggregation_weights, hierfl_route
from ..protocol.variants import SERVER, RoundSpec, Variant, parse_variant, uses_redundancy
from ..redundancy import controller_init, controller_update
from ..wire import HEADER_SIZE
from .engine import RoundContext, stall_error
from .metrics import RoundRecorder
from .network import BandwidthProcess, FluidNetwork, LinkModel

AGGREGATE_TOL = 1e-4

_TRAIN, _SERVER_COEFFS, _RECODE, _MODEL, _UPDATE = range(1, 6)


def _rng(seed: int, *key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def relative_error(got, want) -> float:
    got = np.asarray(got, np.float64)
    want = np.asarray(want, np.float64)
    scale = max(1.0, float(np.max(np.abs(want))) if want.size else 1.0)
    return float(np.max(np.abs(got - want))) / scale if want.size else 0.0


@dataclass
class Trajectory:
    round: int
    r: int
    r_lb: int
    t_cur: float


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    seed: int
    rounds: dict = field(default_factory=dict)        # variant name -> [RoundMetrics]
    trajectories: dict = field(default_factory=dict)  # variant name -> [Trajectory]


class Simulation:
    """Static view of one topology: ids, link models, weights, routes."""

    def __init__(self, cfg: ExperimentConfig, seed=None):
        self.cfg = cfg
        self.seed = cfg.seed if seed is None else int(seed)
        topo = cfg.topology
        clients = topo.clients
        self.n = len(clients)
        self.ids = {topo.server.name: SERVER}
        self.ids.update({c.name: i for i, c in enumerate(clients)})
        self.names = {v: k for k, v in self.ids.items()}
        self.client_cfg = {i: c for i, c in enumerate(clients)}
        self.weights = aggregation_weights([c.weight for c in clients])
        self.links = {}
        self.round_faults = {}
        for lk in topo.links:
            s, d = self.ids[lk.src], self.ids[lk.dst]
            timed = [(f.start, f.end) for f in lk.faults if f.from_round is None]
            self.links[(s, d)] = LinkModel(s, d, lk.mean, lk.var, topo.resample_interval, timed,
                                           topo.fault_floor, lk.latency)
            rounds = [f for f in lk.faults if f.from_round is not None]
            if rounds:
                self.round_faults[(s, d)] = rounds
        self.latencies = {key: lm.latency for key, lm in self.links.items() if lm.latency > 0}
        self.caps = {self.ids[nd.name]: (nd.nic_cap, nd.nic_cap) for nd in topo.nodes}
        self.routes = None
        if any(c.cluster for c in clients):
            clusters = {}
            for i, c in enumerate(clients):
                center, members = clusters.get(c.cluster, (None, []))
                members.append(i)
                clusters[c.cluster] = (i if c.center else center, members)
            self.routes = hierfl_route(range(self.n), clusters)

    # -- random streams -----------------------------------------------------
    def train_time(self, round_index, client) -> float:
        c = self.client_cfg[client]
        if c.train_fixed is not None:
            return c.train_fixed
        return float(_rng(self.seed, _TRAIN, round_index, client).lognormal(c.train_mu,
                                                                              c.train_sigma))

    def expected_train_time(self, client) -> float:
        c = self.client_cfg[client]
        if c.train_fixed is not None:
            return c.train_fixed
        return math.exp(c.train_mu + c.train_sigma ** 2 / 2)

    def update(self, round_index, client) -> np.ndarray:
        return _rng(self.seed, _UPDATE, round_index, client).normal(0.0, 0.01,
                                                                     self.cfg.model_length)

    def initial_model(self) -> np.ndarray:
        return _rng(self.seed, _MODEL).normal(0.0, 0.1, self.cfg.model_length).astype(np.float32)

    # -- network ------------------------------------------------------------
    def network(self) -> FluidNetwork:
        processes = {key: BandwidthProcess(lm, self.seed) for key, lm in self.links.items()}
        return FluidNetwork(processes, self.caps)

    def baseline_expectation(self) -> float:
        """Expected round time of a plain whole-model round on mean bandwidths."""
        bits = 8.0 * (HEADER_SIZE + 8 + 4 * self.cfg.model_length)

        def rate(src, dst):
            return min(self.links[(src, dst)].mean_bw, self.caps[src][0], self.caps[dst][1]) * 1e6

        worst = 0.0
        for c in range(self.n):
            down = bits / rate(SERVER, c)
            up = bits / rate(c, SERVER)
            worst = max(worst, down + self.expected_train_time(c) + up)
        return worst

    def spec(self, variant: VariantConfig, round_index: int, r: int) -> RoundSpec:
        if variant.name == Variant.HIERFL and self.routes is None:
            raise InvalidConfig("hierfl needs cluster assignments on every client")
        return RoundSpec(round=round_index, variant=variant.name, n=self.n, k=self.cfg.k, r=r,
                         model_length=self.cfg.model_length, weights=self.weights,
                         coefficients=variant.coefficients, agr_window=variant.agr_window,
                         coding_cost=self.cfg.topology.coding_cost_per_element,
                         routes=self.routes)

    # -- one round ----------------------------------------------------------
    def run_round(self, variant, round_index: int, model, r: int, net: FluidNetwork,
                  r_lb=None):
        """Play one round starting at ``net.now``; returns (RoundMetrics, new global model)."""
        if isinstance(variant, (str, Variant)):
            variant = VariantConfig(parse_variant(variant))
        spec = self.spec(variant, round_index, r)
        for key, proc in net.processes.items():
            proc.forced_fault = any(f.covers_round(round_index)
                                    for f in self.round_faults.get(key, ()))
        net.recompute()
        t0 = net.now
        recorder = RoundRecorder(round_index, variant.name.value, range(self.n), t0,
                                 lambda: net.now)
        ctx = RoundContext(net, self.latencies, recorder)
        server = Server(spec, ctx, model, _rng(self.seed, _SERVER_COEFFS, round_index))
        clients = [Client(i, spec, ctx, self.train_time(round_index, i),
                          self.update(round_index, i), _rng(self.seed, _RECODE, round_index, i))
                   for i in range(self.n)]
        ctx.nodes = {SERVER: server, **{c.id: c for c in clients}}
        deadline = t0 + self.cfg.topology.stall_factor * self.baseline_expectation()

        def on_stall(reason):
            err = stall_error(reason, round_index, recorder, net, range(self.n), self.names)
            ctx.teardown()
            raise err

        server.start()
        ctx.run(deadline, on_stall)
        ctx.teardown()
        self._verify(spec, server, clients)
        return recorder.finish(r, r_lb), server.aggregate.astype(np.float32)

    def _verify(self, spec, server, clients):
        """Inline losslessness check: every download and the aggregate match their oracle."""
        for c in clients:
            err = relative_error(c.downloaded, server.model)
            if err > AGGREGATE_TOL:
                raise ProtocolViolation(f"client {c.id} decoded the model with error {err:.3g}")
        want = np.zeros(spec.model_length, dtype=np.float64)
        for i, c in enumerate(clients):
            want += spec.weights[i] * c.local_model.astype(np.float64)
        err = relative_error(server.aggregate, want)
        if err > AGGREGATE_TOL:
            raise ProtocolViolation(f"aggregate deviates from the weighted average by {err:.3g}")

    # -- many rounds --------------------------------------------------------
    def run_variant(self, variant: VariantConfig, rounds=None):
        rounds = self.cfg.rounds if rounds is None else rounds
        net = self.network()
        model = self.initial_model()
        adaptive = variant.name == Variant.FEDCOD_ADAPTIVE
        state = None
        if adaptive:
            ad = self.cfg.redundancy.adaptive
            state = controller_init(self.cfg.k, ad.r_init, ad.r_lb, ad.lam, ad.r_max, ad.window)
        static_r = self.cfg.static_r if uses_redundancy(variant.name) else 0
        history, trajectory = [], []
        for rnd in range(rounds):
            r = state.r if adaptive else static_r
            r_lb = state.r_lb if adaptive else None
            metrics, model = self.run_round(variant, rnd, model, r, net, r_lb)
            history.append(metrics)
            t_cur = metrics.communication_time
            trajectory.append(Trajectory(rnd, r, r_lb, t_cur))
            if adaptive:
                state = controller_update(state, t_cur)
        return history, trajectory


def run_round(cfg: ExperimentConfig, variant=None, round_index: int = 0, seed=None, r=None):
    """One round from a fresh network at t=0 with the seed's initial model."""
    sim = Simulation(cfg, seed)
    variant = cfg.variants[0] if variant is None else variant
    if isinstance(variant, (str, Variant)):
        variant = next((v for v in cfg.variants if v.name == parse_variant(variant)),
                       VariantConfig(parse_variant(variant)))
    if r is None:
        r = cfg.static_r if uses_redundancy(variant.name) else 0
    metrics, _ = sim.run_round(variant, round_index, sim.initial_model(), r, sim.network())
    return metrics


def run_experiment(cfg: ExperimentConfig, seed=None, variants=None) -> ExperimentResult:
    """All configured variants (or the named subset), each over ``cfg.rounds`` rounds."""
    sim = Simulation(cfg, seed)
    chosen = cfg.variants
    if variants is not None:
        wanted = [parse_variant(v) for v in variants]
        chosen = tuple(v for v in cfg.variants if v.name in wanted)
    result = ExperimentResult(cfg, sim.seed)
    for v in chosen:
        history, trajectory = sim.run_variant(v)
        result.rounds[v.name.value] = history
        result.trajectories[v.name.value] = trajectory
    return result
