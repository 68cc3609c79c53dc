"""Watch the redundancy controller trim r on a calm network, then react to a fault.

Bandwidth and training times are held constant so every change in the
communication time comes from r itself or from the injected fault: the
us-east-2 uplink drops to 2 Mbps from round 13 on.
"""
from dataclasses import replace

from fedcod.config import Fault, fixture_path, load_config
from fedcod.sim import run_experiment

cfg = load_config(fixture_path())
topo = cfg.topology
links = []
for lk in topo.links:
    lk = replace(lk, var=0.0)
    if (lk.src, lk.dst) == ("us-east-2", "us-east-1"):
        lk = replace(lk, faults=(Fault(from_round=13, to_round=1 << 30),))
    links.append(lk)
nodes = tuple(replace(nd, train_sigma=0.0) for nd in topo.nodes)
cfg = replace(cfg, rounds=20, topology=replace(topo, nodes=nodes, links=tuple(links),
                                               fault_floor=2.0))

result = run_experiment(cfg, variants=["fedcod", "fedcod-adaptive"])
static = result.rounds["fedcod"]
adaptive = result.rounds["fedcod-adaptive"]

print("round   r  r_lb  comm time  round time  peer MiB (static)")
for t, m, s in zip(result.trajectories["fedcod-adaptive"], adaptive, static):
    mark = "  <- fault" if t.round == 13 else ""
    print(f"{t.round:5d} {t.r:3d} {t.r_lb:5d} {t.t_cur * 1e3:8.1f}ms {m.duration * 1e3:9.1f}ms "
          f"{m.inter_client_bytes / 2**20:6.1f} ({s.inter_client_bytes / 2**20:.1f}){mark}")
saved = 1 - sum(m.inter_client_bytes for m in adaptive) / sum(m.inter_client_bytes for m in static)
print(f"inter-client traffic saved vs static r=k: {saved:.0%}")
