import json
from dataclasses import replace

import pytest

from fedcod.config import fixture_path, load_config, parse_config
from fedcod.protocol.variants import RoundSpec, Variant
from fedcod.sim.metrics import RoundRecorder

ACCEPTANCE_TITLES = {
    1: "coding roundtrip",
    2: "coded aggregation correctness",
    3: "waiting relay never finishes later",
    4: "download acceleration",
    5: "traffic ratios",
    6: "adaptive redundancy",
    7: "k-sweep shape",
    8: "fault tolerance",
    9: "determinism and conservation",
    10: "wire codec",
}
_acceptance: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    if rep.when == "setup" and rep.passed:
        return
    entry = _acceptance.setdefault(mark.args[0], {"ok": True, "details": []})
    entry["ok"] = entry["ok"] and rep.passed
    entry["details"].extend(v for k, v in item.user_properties if k == "detail")
    if not rep.passed:
        entry["details"].append(f"{item.name} {rep.outcome}")


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_acceptance):
        entry = _acceptance[n]
        status = "PASS" if entry["ok"] else "FAIL"
        detail = "; ".join(entry["details"])
        terminalreporter.write_line(f"criterion {n:2d} {status}  {ACCEPTANCE_TITLES[n]}"
                                    + (f"  [{detail}]" if detail else ""))


# -- configs -------------------------------------------------------------------

def mesh_doc(n=3, mean=100.0, var=0.0, variants=("baseline",), model_length=4096, k=None,
             rounds=1, seed=1, train=None, **topo):
    """Config document for a server plus ``n`` clients on identical links."""
    names = ["srv"] + [f"c{i}" for i in range(n)]
    train = {"fixed": 0.05} if train is None else train
    nodes = [{"name": "srv", "role": "server"}]
    nodes += [{"name": nm, "train_time": dict(train)} for nm in names[1:]]
    links = [{"src": a, "dst": b, "mean": mean, "var": var}
             for i, a in enumerate(names) for b in names[i + 1:]]
    return {
        "topology": {"nodes": nodes, "links": links, **topo},
        "variants": list(variants),
        "rounds": rounds,
        "model_length": model_length,
        "k": k,
        "redundancy": {},
        "seed": seed,
        "output": None,
    }


def mesh_config(**kw):
    return parse_config(mesh_doc(**kw))


def fixture_doc():
    return json.loads(fixture_path().read_text())


@pytest.fixture(scope="session")
def global_cfg():
    return load_config(fixture_path())


def stable(cfg, **topo):
    """Same topology with constant bandwidth and fixed training times."""
    t = cfg.topology
    nodes = tuple(replace(nd, train_sigma=0.0) for nd in t.nodes)
    links = tuple(replace(lk, var=0.0) for lk in t.links)
    return replace(cfg, topology=replace(t, nodes=nodes, links=links, **topo))


# -- a context that runs node callbacks inline ------------------------------------

class FakeCtx:
    def __init__(self, n):
        self.now = 0.0
        self.metrics = RoundRecorder(0, "unit", range(n), 0.0, lambda: self.now)
        self.woken = []
        self.timers = []
        self.aborted = []

    def wake(self, src, dst):
        self.woken.append((src, dst))

    def compute(self, key, cost, fn):
        fn()

    def timer(self, delay, fn):
        self.timers.append((delay, fn))

    def abort(self, src, dst, predicate):
        self.aborted.append((src, dst))


def make_spec(variant, n=3, k=None, r=0, model_length=64, **kw):
    k = n if k is None else k
    return RoundSpec(round=0, variant=Variant(variant), n=n, k=k, r=r,
                     model_length=model_length, weights=tuple([1.0 / n] * n), **kw)
