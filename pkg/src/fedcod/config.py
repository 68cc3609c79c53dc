"""Strict JSON experiment configuration.

``load_config`` parses and validates; ``serialize`` writes the normal form
(every default filled in, links expanded to directed pairs) so that
``serialize(parse(x)) == normalize(x)`` for any accepted document.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .coding import COEFFICIENT_SCHEMES
from .errors import ConfigError, InvalidParameter
from .protocol.variants import Variant, parse_variant

TOP_KEYS = ("topology", "variants", "rounds", "model_length", "k", "redundancy", "seed", "output")
DEFAULT_NIC_CAP = 10_000.0


@dataclass(frozen=True)
class Fault:
    """Either a time window ``[start, end)`` in seconds or a round range (inclusive)."""

    start: Optional[float] = None
    end: Optional[float] = None
    from_round: Optional[int] = None
    to_round: Optional[int] = None

    def covers_round(self, r: int) -> bool:
        return self.from_round is not None and self.from_round <= r <= self.to_round


@dataclass(frozen=True)
class NodeConfig:
    name: str
    role: str = "client"
    nic_cap: float = DEFAULT_NIC_CAP
    train_mu: float = -2.0
    train_sigma: float = 0.0
    train_fixed: Optional[float] = None
    cluster: Optional[str] = None
    center: bool = False
    weight: float = 1.0


@dataclass(frozen=True)
class LinkConfig:
    src: str
    dst: str
    mean: float
    var: float = 0.0
    latency: float = 0.0
    faults: tuple = ()


@dataclass(frozen=True)
class Topology:
    nodes: tuple
    links: tuple                   # directed, one per ordered pair
    resample_interval: float = 10.0
    fault_floor: float = 0.1
    coding_cost_per_element: float = 0.0
    stall_factor: float = 10.0

    @property
    def server(self) -> NodeConfig:
        return next(n for n in self.nodes if n.role == "server")

    @property
    def clients(self) -> list:
        return [n for n in self.nodes if n.role == "client"]


@dataclass(frozen=True)
class VariantConfig:
    name: Variant
    agr_window: float = 0.0
    coefficients: str = "agreed"


@dataclass(frozen=True)
class AdaptiveConfig:
    r_init: Optional[int] = None
    r_lb: Optional[int] = None
    lam: float = 1.1
    r_max: Optional[int] = None
    window: int = 5


@dataclass(frozen=True)
class RedundancyConfig:
    ratio: float = 1.0
    adaptive: AdaptiveConfig = field(default_factory=AdaptiveConfig)


@dataclass(frozen=True)
class ExperimentConfig:
    topology: Topology
    variants: tuple
    rounds: int
    model_length: int
    k: int
    redundancy: RedundancyConfig
    seed: int
    output: Optional[str] = None

    @property
    def n(self) -> int:
        return len(self.topology.clients)

    @property
    def static_r(self) -> int:
        return int(round(self.redundancy.ratio * self.k))

    def fingerprint(self) -> str:
        """Hash of everything except seed, variants and output (what ``compare`` must share)."""
        doc = serialize(self)
        for key in ("seed", "variants", "output"):
            doc.pop(key)
        blob = json.dumps(doc, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# -- parsing helpers ---------------------------------------------------------

def _obj(value, path, allowed, required=()):
    if not isinstance(value, dict):
        raise ConfigError(path, f"expected an object, got {type(value).__name__}")
    for key in value:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}" if path else key, "unknown key")
    for key in required:
        if key not in value:
            raise ConfigError(f"{path}.{key}" if path else key, "missing required key")
    return value


def _num(value, path, lo=None, hi=None, strict_lo=False, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    if integer and not (isinstance(value, int) or float(value).is_integer()):
        raise ConfigError(path, f"expected an integer, got {value!r}")
    if not math.isfinite(value):
        raise ConfigError(path, "must be finite")
    if lo is not None and (value <= lo if strict_lo else value < lo):
        raise ConfigError(path, f"must be {'>' if strict_lo else '>='} {lo}, got {value}")
    if hi is not None and value > hi:
        raise ConfigError(path, f"must be <= {hi}, got {value}")
    return int(value) if integer else float(value)


def _str(value, path):
    if not isinstance(value, str) or not value:
        raise ConfigError(path, f"expected a non-empty string, got {value!r}")
    return value


def _parse_fault(raw, path):
    _obj(raw, path, ("start", "end", "from_round", "to_round"))
    timed = "start" in raw or "end" in raw
    by_round = "from_round" in raw or "to_round" in raw
    if timed == by_round:
        raise ConfigError(path, "give either start/end seconds or from_round/to_round")
    if timed:
        _obj(raw, path, ("start", "end"), required=("start", "end"))
        start = _num(raw["start"], f"{path}.start", lo=0)
        end = _num(raw["end"], f"{path}.end", lo=start)
        return Fault(start=start, end=end)
    a = _num(raw.get("from_round", 0), f"{path}.from_round", lo=0, integer=True)
    b = _num(raw.get("to_round", 1 << 30), f"{path}.to_round", lo=a, integer=True)
    return Fault(from_round=a, to_round=b)


def _parse_node(raw, path):
    _obj(raw, path, ("name", "role", "nic_cap", "train_time", "cluster", "center", "weight"),
         required=("name",))
    name = _str(raw["name"], f"{path}.name")
    role = raw.get("role", "client")
    if role not in ("server", "client"):
        raise ConfigError(f"{path}.role", f"must be 'server' or 'client', got {role!r}")
    nic_cap = _num(raw.get("nic_cap", DEFAULT_NIC_CAP), f"{path}.nic_cap", lo=0, strict_lo=True)
    tt = raw.get("train_time", {})
    _obj(tt, f"{path}.train_time", ("mu", "sigma", "fixed"))
    fixed = None
    mu, sigma = -2.0, 0.0
    if "fixed" in tt:
        if "mu" in tt or "sigma" in tt:
            raise ConfigError(f"{path}.train_time", "use either fixed or mu/sigma")
        fixed = _num(tt["fixed"], f"{path}.train_time.fixed", lo=0)
    else:
        mu = _num(tt.get("mu", mu), f"{path}.train_time.mu")
        sigma = _num(tt.get("sigma", sigma), f"{path}.train_time.sigma", lo=0)
    cluster = raw.get("cluster")
    if cluster is not None:
        cluster = _str(cluster, f"{path}.cluster")
    center = raw.get("center", False)
    if not isinstance(center, bool):
        raise ConfigError(f"{path}.center", "expected true or false")
    weight = _num(raw.get("weight", 1.0), f"{path}.weight", lo=0)
    return NodeConfig(name, role, nic_cap, mu, sigma, fixed, cluster, center, weight)


def _parse_topology(raw, path="topology"):
    _obj(raw, path, ("nodes", "links", "resample_interval", "fault_floor",
                     "coding_cost_per_element", "stall_factor"), required=("nodes", "links"))
    if not isinstance(raw["nodes"], list) or not raw["nodes"]:
        raise ConfigError(f"{path}.nodes", "expected a non-empty list")
    nodes = tuple(_parse_node(n, f"{path}.nodes[{i}]") for i, n in enumerate(raw["nodes"]))
    names = [n.name for n in nodes]
    for i, name in enumerate(names):
        if names.index(name) != i:
            raise ConfigError(f"{path}.nodes[{i}].name", f"duplicate node name {name!r}")
    servers = [n for n in nodes if n.role == "server"]
    if len(servers) != 1:
        raise ConfigError(f"{path}.nodes", f"exactly one server required, found {len(servers)}")
    if not any(n.role == "client" for n in nodes):
        raise ConfigError(f"{path}.nodes", "at least one client required")
    if servers[0].cluster is not None or servers[0].center:
        raise ConfigError(f"{path}.nodes", "the server cannot join a cluster")

    if not isinstance(raw["links"], list):
        raise ConfigError(f"{path}.links", "expected a list")
    links = {}
    for i, lk in enumerate(raw["links"]):
        p = f"{path}.links[{i}]"
        _obj(lk, p, ("src", "dst", "mean", "var", "latency", "faults", "symmetric"),
             required=("src", "dst", "mean"))
        src, dst = _str(lk["src"], f"{p}.src"), _str(lk["dst"], f"{p}.dst")
        for end, key in ((src, "src"), (dst, "dst")):
            if end not in names:
                raise ConfigError(f"{p}.{key}", f"unknown node {end!r}")
        if src == dst:
            raise ConfigError(p, "self-links are not allowed")
        mean = _num(lk["mean"], f"{p}.mean", lo=0, strict_lo=True)
        var = _num(lk.get("var", 0.0), f"{p}.var", lo=0)
        latency = _num(lk.get("latency", 0.0), f"{p}.latency", lo=0)
        faults_raw = lk.get("faults", [])
        if not isinstance(faults_raw, list):
            raise ConfigError(f"{p}.faults", "expected a list")
        faults = tuple(_parse_fault(f, f"{p}.faults[{j}]") for j, f in enumerate(faults_raw))
        symmetric = lk.get("symmetric", True)
        if not isinstance(symmetric, bool):
            raise ConfigError(f"{p}.symmetric", "expected true or false")
        pairs = [(src, dst)] + ([(dst, src)] if symmetric else [])
        for pair in pairs:
            if pair in links and links[pair][0] == "explicit":
                raise ConfigError(p, f"link {pair[0]}->{pair[1]} defined twice")
        entry = LinkConfig(src, dst, mean, var, latency, faults)
        links[(src, dst)] = ("explicit", entry)
        if symmetric and (dst, src) not in links:
            links[(dst, src)] = ("mirror", LinkConfig(dst, src, mean, var, latency, faults))
    for a in names:
        for b in names:
            if a != b and (a, b) not in links:
                raise ConfigError(f"{path}.links", f"missing link {a}->{b}")
    ordered = tuple(links[(a, b)][1] for a in names for b in names if a != b)

    resample = _num(raw.get("resample_interval", 10.0), f"{path}.resample_interval", lo=0,
                    strict_lo=True)
    floor = _num(raw.get("fault_floor", 0.1), f"{path}.fault_floor", lo=0, strict_lo=True)
    cost = _num(raw.get("coding_cost_per_element", 0.0), f"{path}.coding_cost_per_element", lo=0)
    stall = _num(raw.get("stall_factor", 10.0), f"{path}.stall_factor", lo=1)
    _check_clusters(nodes, path)
    return Topology(nodes, ordered, resample, floor, cost, stall)


def _check_clusters(nodes, path):
    clients = [n for n in nodes if n.role == "client"]
    if not any(n.cluster for n in clients):
        return
    centers = {}
    for i, n in enumerate(clients):
        if n.cluster is None:
            raise ConfigError(f"{path}.nodes", f"client {n.name!r} belongs to no cluster")
        if n.center:
            if n.cluster in centers:
                raise ConfigError(f"{path}.nodes", f"cluster {n.cluster!r} has two centers")
            centers[n.cluster] = n.name
    for n in clients:
        if n.cluster not in centers:
            raise ConfigError(f"{path}.nodes", f"cluster {n.cluster!r} has no center")


def _parse_variant(raw, path):
    if isinstance(raw, str):
        raw = {"name": raw}
    _obj(raw, path, ("name", "agr_window", "coefficients"), required=("name",))
    try:
        name = parse_variant(_str(raw["name"], f"{path}.name"))
    except InvalidParameter as exc:
        raise ConfigError(f"{path}.name", str(exc)) from None
    window = _num(raw.get("agr_window", 0.0), f"{path}.agr_window", lo=0)
    coeffs = raw.get("coefficients", "agreed")
    if coeffs not in COEFFICIENT_SCHEMES:
        raise ConfigError(f"{path}.coefficients",
                          f"unknown scheme {coeffs!r} (known: {', '.join(COEFFICIENT_SCHEMES)})")
    return VariantConfig(name, window, coeffs)


def _parse_redundancy(raw, path="redundancy"):
    _obj(raw, path, ("ratio", "adaptive"))
    ratio = _num(raw.get("ratio", 1.0), f"{path}.ratio", lo=0)
    ad = raw.get("adaptive", {})
    p = f"{path}.adaptive"
    _obj(ad, p, ("r_init", "r_lb", "lambda", "r_max", "window"))

    def opt_int(key):
        v = ad.get(key)
        return None if v is None else _num(v, f"{p}.{key}", lo=0, integer=True)

    adaptive = AdaptiveConfig(
        r_init=opt_int("r_init"), r_lb=opt_int("r_lb"),
        lam=_num(ad.get("lambda", 1.1), f"{p}.lambda", lo=1, strict_lo=True),
        r_max=opt_int("r_max"),
        window=_num(ad.get("window", 5), f"{p}.window", lo=1, integer=True))
    return RedundancyConfig(ratio, adaptive)


def parse_config(doc: dict) -> ExperimentConfig:
    _obj(doc, "", TOP_KEYS, required=TOP_KEYS)
    topology = _parse_topology(doc["topology"])
    variants_raw = doc["variants"]
    if not isinstance(variants_raw, list) or not variants_raw:
        raise ConfigError("variants", "expected a non-empty list")
    variants = tuple(_parse_variant(v, f"variants[{i}]") for i, v in enumerate(variants_raw))
    seen = [v.name for v in variants]
    for i, v in enumerate(seen):
        if seen.index(v) != i:
            raise ConfigError(f"variants[{i}]", f"variant {v.value!r} listed twice")
    rounds = _num(doc["rounds"], "rounds", lo=1, integer=True)
    length = _num(doc["model_length"], "model_length", lo=1, integer=True)
    n = len(topology.clients)
    k = n if doc["k"] is None else _num(doc["k"], "k", lo=1, hi=0xFFFF, integer=True)
    redundancy = _parse_redundancy(doc["redundancy"])
    seed = _num(doc["seed"], "seed", lo=0, integer=True)
    output = doc["output"]
    if output is not None:
        output = _str(output, "output")
    cfg = ExperimentConfig(topology, variants, rounds, length, k, redundancy, seed, output)
    ad = redundancy.adaptive
    r_init = k if ad.r_init is None else ad.r_init
    r_max = 2 * k if ad.r_max is None else ad.r_max
    r_lb = math.ceil(k / 4) if ad.r_lb is None else ad.r_lb
    if not r_lb <= r_init <= r_max:
        raise ConfigError("redundancy.adaptive", f"need r_lb ({r_lb}) <= r_init ({r_init}) "
                                                 f"<= r_max ({r_max})")
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("", f"cannot read {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"{path} is not valid JSON: {exc}") from None
    return parse_config(doc)


# -- normal form ---------------------------------------------------------------

def _fault_doc(f: Fault) -> dict:
    if f.from_round is not None:
        return {"from_round": f.from_round, "to_round": f.to_round}
    return {"start": f.start, "end": f.end}


def _node_doc(n: NodeConfig) -> dict:
    tt = {"fixed": n.train_fixed} if n.train_fixed is not None else \
        {"mu": n.train_mu, "sigma": n.train_sigma}
    return {"name": n.name, "role": n.role, "nic_cap": n.nic_cap, "train_time": tt,
            "cluster": n.cluster, "center": n.center, "weight": n.weight}


def serialize(cfg: ExperimentConfig) -> dict:
    t = cfg.topology
    ad = cfg.redundancy.adaptive
    return {
        "topology": {
            "nodes": [_node_doc(n) for n in t.nodes],
            "links": [{"src": lk.src, "dst": lk.dst, "mean": lk.mean, "var": lk.var,
                       "latency": lk.latency, "faults": [_fault_doc(f) for f in lk.faults],
                       "symmetric": False} for lk in t.links],
            "resample_interval": t.resample_interval,
            "fault_floor": t.fault_floor,
            "coding_cost_per_element": t.coding_cost_per_element,
            "stall_factor": t.stall_factor,
        },
        "variants": [{"name": v.name.value, "agr_window": v.agr_window,
                      "coefficients": v.coefficients} for v in cfg.variants],
        "rounds": cfg.rounds,
        "model_length": cfg.model_length,
        "k": cfg.k,
        "redundancy": {"ratio": cfg.redundancy.ratio,
                       "adaptive": {"r_init": ad.r_init, "r_lb": ad.r_lb, "lambda": ad.lam,
                                    "r_max": ad.r_max, "window": ad.window}},
        "seed": cfg.seed,
        "output": cfg.output,
    }


def normalize(doc: dict) -> dict:
    """Normal form of a raw document, built by filling defaults in place.

    Independent of ``serialize``; the two agree on every valid document.
    """
    parse_config(doc)
    topo = doc["topology"]
    nodes = []
    for n in topo["nodes"]:
        tt = dict(n.get("train_time", {}))
        if "fixed" in tt:
            tt = {"fixed": float(tt["fixed"])}
        else:
            tt = {"mu": float(tt.get("mu", -2.0)), "sigma": float(tt.get("sigma", 0.0))}
        nodes.append({"name": n["name"], "role": n.get("role", "client"),
                      "nic_cap": float(n.get("nic_cap", DEFAULT_NIC_CAP)), "train_time": tt,
                      "cluster": n.get("cluster"), "center": n.get("center", False),
                      "weight": float(n.get("weight", 1.0))})
    directed = {}
    for lk in topo["links"]:
        faults = []
        for f in lk.get("faults", []):
            if "start" in f:
                faults.append({"start": float(f["start"]), "end": float(f["end"])})
            else:
                faults.append({"from_round": int(f.get("from_round", 0)),
                               "to_round": int(f.get("to_round", 1 << 30))})
        body = {"mean": float(lk["mean"]), "var": float(lk.get("var", 0.0)),
                "latency": float(lk.get("latency", 0.0)), "faults": faults,
                "symmetric": False}
        directed[(lk["src"], lk["dst"])] = ("explicit", body)
        if lk.get("symmetric", True) and directed.get((lk["dst"], lk["src"]), ("",))[0] \
                != "explicit":
            directed[(lk["dst"], lk["src"])] = ("mirror", body)
    names = [n["name"] for n in nodes]
    links = [{"src": a, "dst": b, **directed[(a, b)][1]}
             for a in names for b in names if a != b]
    red = doc["redundancy"]
    ad = red.get("adaptive", {})
    n_clients = sum(1 for n in nodes if n["role"] == "client")
    return {
        "topology": {
            "nodes": nodes,
            "links": links,
            "resample_interval": float(topo.get("resample_interval", 10.0)),
            "fault_floor": float(topo.get("fault_floor", 0.1)),
            "coding_cost_per_element": float(topo.get("coding_cost_per_element", 0.0)),
            "stall_factor": float(topo.get("stall_factor", 10.0)),
        },
        "variants": [{"name": (v if isinstance(v, str) else v["name"]).strip().lower(),
                      "agr_window": 0.0 if isinstance(v, str) else float(v.get("agr_window", 0.0)),
                      "coefficients": "agreed" if isinstance(v, str)
                      else v.get("coefficients", "agreed")}
                     for v in doc["variants"]],
        "rounds": int(doc["rounds"]),
        "model_length": int(doc["model_length"]),
        "k": n_clients if doc["k"] is None else int(doc["k"]),
        "redundancy": {"ratio": float(red.get("ratio", 1.0)),
                       "adaptive": {"r_init": ad.get("r_init"), "r_lb": ad.get("r_lb"),
                                    "lambda": float(ad.get("lambda", 1.1)),
                                    "r_max": ad.get("r_max"), "window": int(ad.get("window", 5))}},
        "seed": int(doc["seed"]),
        "output": doc["output"],
    }


def fixture_path(name: str = "global_topology.json") -> Path:
    """Path of a config shipped inside the package."""
    from importlib.resources import files
    return Path(str(files("fedcod") / "data" / name))
