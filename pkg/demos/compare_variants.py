"""Run every protocol variant on the shipped 10-client topology.

Prints mean phase times and server traffic relative to the plain
parameter-server baseline. Takes about half a minute.
"""
import statistics

from fedcod.config import fixture_path, load_config
from fedcod.protocol import SERVER
from fedcod.sim import run_experiment

cfg = load_config(fixture_path())
result = run_experiment(cfg)


def mean_of(history, fn):
    return statistics.fmean(fn(m) for m in history)


rows = {}
for variant, history in result.rounds.items():
    rows[variant] = {
        "download": mean_of(history, lambda m: m.mean("t_download")),
        "upload": mean_of(history, lambda m: m.mean("t_upload")),
        "wait": mean_of(history, lambda m: m.mean("t_wait")),
        "srv_in": mean_of(history, lambda m: m.ingress[SERVER]),
        "srv_out": mean_of(history, lambda m: m.egress[SERVER]),
        "peer": mean_of(history, lambda m: m.inter_client_bytes),
    }

base = rows["baseline"]
print(f"{cfg.n} clients, k={cfg.k}, r={cfg.static_r}, {cfg.rounds} rounds, "
      f"model {4 * cfg.model_length / 2**20:.1f} MiB")
print(f"{'variant':16s} {'download':>9s} {'upload':>9s} {'wait':>9s} "
      f"{'srv in':>8s} {'srv out':>8s} {'peer MiB':>9s}")
for v, row in rows.items():
    print(f"{v:16s} {row['download'] * 1e3:7.1f}ms {row['upload'] * 1e3:7.1f}ms "
          f"{row['wait'] * 1e3:7.1f}ms {row['srv_in'] / base['srv_in']:7.2f}x "
          f"{row['srv_out'] / base['srv_out']:7.2f}x {row['peer'] / 2**20:9.1f}")
