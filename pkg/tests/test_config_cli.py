import json
import time

import pytest

from conftest import fixture_doc, mesh_doc
from fedcod.cli import CSV_COLUMNS, EXIT_CONFIG, EXIT_OK, EXIT_STALL, compare, main
from fedcod.config import fixture_path, load_config, normalize, parse_config, serialize
from fedcod.errors import ComparisonError, ConfigError
from fedcod.protocol import Variant

GOLDEN_HEADER = ("round,variant,client,t_download,t_train,t_upload,t_wait,ingress_bytes,"
                 "egress_bytes,r,r_lb")


def write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return p


# -- config -------------------------------------------------------------------

def test_minimal_two_node_config(tmp_path):
    doc = {
        "topology": {"nodes": [{"name": "s", "role": "server"}, {"name": "a"}],
                     "links": [{"src": "s", "dst": "a", "mean": 50}]},
        "variants": ["baseline"], "rounds": 1, "model_length": 10, "k": None,
        "redundancy": {}, "seed": 0, "output": None,
    }
    cfg = load_config(write(tmp_path, doc))
    assert cfg.n == 1 and cfg.k == 1 and cfg.static_r == 1
    assert [(lk.src, lk.dst) for lk in cfg.topology.links] == [("s", "a"), ("a", "s")]
    assert cfg.topology.stall_factor == 10 and cfg.redundancy.adaptive.lam == 1.1
    assert cfg.variants[0].name is Variant.BASELINE and cfg.variants[0].coefficients == "agreed"


def test_unknown_variant_is_named():
    doc = mesh_doc(variants=["fedcod", "u9-x"])
    with pytest.raises(ConfigError, match="u9-x") as err:
        parse_config(doc)
    assert err.value.path == "variants[1].name"


@pytest.mark.parametrize("mutate, path", [
    (lambda d: d.pop("seed"), "seed"),
    (lambda d: d.update(extra=1), "extra"),
    (lambda d: d.update(rounds="ten"), "rounds"),
    (lambda d: d.update(rounds=0), "rounds"),
    (lambda d: d.update(k=2.5), "k"),
    (lambda d: d["topology"]["links"].pop(), "topology.links"),
    (lambda d: d["topology"]["links"][0].update(mean=-1), "topology.links[0].mean"),
    (lambda d: d["topology"]["nodes"][1].update(speed=3), "topology.nodes[1].speed"),
    (lambda d: d["topology"]["links"][0].update(faults=[{"start": 1}]),
     "topology.links[0].faults[0].end"),
    (lambda d: d["redundancy"].update(adaptive={"r_init": 1, "r_lb": 2}), "redundancy.adaptive"),
    (lambda d: d["variants"].append("baseline"), "variants[1]"),
])
def test_config_errors_carry_the_key_path(mutate, path):
    doc = mesh_doc()
    mutate(doc)
    with pytest.raises(ConfigError) as err:
        parse_config(doc)
    assert err.value.path == path


def test_missing_file_and_bad_json(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.json")
    p = tmp_path / "bad.json"
    p.write_text("{")
    with pytest.raises(ConfigError):
        load_config(p)


def test_fixture_roundtrip():
    doc = fixture_doc()
    cfg = parse_config(doc)
    assert serialize(cfg) == normalize(doc)
    assert parse_config(serialize(cfg)) == cfg
    assert cfg.n == 10 and cfg.k == 10 and len(cfg.topology.links) == 110


def test_normalize_fills_defaults_independently():
    doc = mesh_doc(n=2)
    norm = normalize(doc)
    assert norm["topology"]["stall_factor"] == 10.0
    assert norm["redundancy"]["adaptive"]["lambda"] == 1.1
    assert norm["variants"] == [{"name": "baseline", "agr_window": 0.0, "coefficients": "agreed"}]
    assert len(norm["topology"]["links"]) == 6
    assert serialize(parse_config(doc)) == norm


def test_fingerprint_ignores_seed_and_variants():
    a = parse_config(mesh_doc(seed=1, variants=["baseline"]))
    b = parse_config(mesh_doc(seed=2, variants=["fedcod"]))
    c = parse_config(mesh_doc(seed=1, rounds=2))
    assert a.fingerprint() == b.fingerprint() != c.fingerprint()


# -- cli ----------------------------------------------------------------------

def small_doc(**kw):
    kw.setdefault("variants", ["baseline", "d2-c", "fedcod"])
    return mesh_doc(n=3, var=100.0, rounds=2, model_length=20_000, **kw)


def test_run_writes_csv_and_summary(tmp_path, capsys):
    cfg = write(tmp_path, small_doc())
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_OK
    lines = (tmp_path / "o" / "metrics.csv").read_text().splitlines()
    assert lines[0] == GOLDEN_HEADER == ",".join(CSV_COLUMNS)
    assert len(lines) == 1 + 3 * 2 * 4
    server_rows = [ln for ln in lines if ",srv," in ln]
    assert len(server_rows) == 6 and all(",,,," in ln for ln in server_rows)
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert set(summary["variants"]) == {"baseline", "d2-c", "fedcod"}
    assert summary["rounds"] == 2
    assert "fedcod" in capsys.readouterr().out


def test_rerun_is_byte_identical(tmp_path):
    cfg = write(tmp_path, small_doc())
    for out in ("a", "b"):
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path / out)]) == EXIT_OK
    for name in ("metrics.csv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_override_and_filter(tmp_path):
    cfg = write(tmp_path, small_doc())
    out = tmp_path / "o"
    assert main(["run", "--config", str(cfg), "--out", str(out), "--seed-override", "9",
                 "--variant-filter", "fedcod"]) == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["seed"] == 9 and list(summary["variants"]) == ["fedcod"]
    assert main(["run", "--config", str(cfg), "--variant-filter", "u1-c"]) == EXIT_CONFIG


def test_output_path_from_config(tmp_path):
    doc = small_doc(variants=["baseline"])
    doc["output"] = str(tmp_path / "from-config")
    assert main(["run", "--config", str(write(tmp_path, doc))]) == EXIT_OK
    assert (tmp_path / "from-config" / "metrics.csv").exists()


def test_bad_config_exit_code(tmp_path, capsys):
    cfg = write(tmp_path, small_doc(variants=["u9-x"]))
    assert main(["run", "--config", str(cfg)]) == EXIT_CONFIG
    assert "u9-x" in capsys.readouterr().err


def test_stall_exit_code(tmp_path, capsys):
    doc = small_doc(variants=["baseline"])
    doc["topology"]["links"].append({"src": "c1", "dst": "srv", "mean": 100, "symmetric": False,
                                     "faults": [{"from_round": 0}]})
    doc["topology"]["links"] = [lk for lk in doc["topology"]["links"]
                                if not (lk["src"] == "srv" and lk["dst"] == "c1")] + [
        {"src": "srv", "dst": "c1", "mean": 100, "symmetric": False}]
    assert main(["run", "--config", str(write(tmp_path, doc)),
                 "--out", str(tmp_path / "o")]) == EXIT_STALL
    assert "waiting on client c1 over link c1->srv" in capsys.readouterr().err


def test_compare_identical_is_all_zero(tmp_path, capsys):
    cfg = write(tmp_path, small_doc())
    main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")])
    s = tmp_path / "o" / "summary.json"
    assert main(["compare", str(s), str(s)]) == EXIT_OK
    report = compare(json.loads(s.read_text()), json.loads(s.read_text()))
    assert all(v == 0.0 for deltas in report.values() for v in deltas.values())
    assert "+0.00%" in capsys.readouterr().out


def test_compare_refuses_mismatched_runs(tmp_path):
    a = write(tmp_path, small_doc(), "a.json")
    doc = small_doc()
    doc["model_length"] = 10_000
    b = write(tmp_path, doc, "b.json")
    main(["run", "--config", str(a), "--out", str(tmp_path / "a")])
    main(["run", "--config", str(b), "--out", str(tmp_path / "b")])
    sa, sb = tmp_path / "a" / "summary.json", tmp_path / "b" / "summary.json"
    assert main(["compare", str(sa), str(sb)]) == EXIT_CONFIG
    with pytest.raises(ComparisonError):
        compare(json.loads(sa.read_text()), json.loads(sb.read_text()))
    other = json.loads(sa.read_text())
    other["rounds"] = 5
    with pytest.raises(ComparisonError):
        compare(json.loads(sa.read_text()), other)


@pytest.fixture(scope="module")
def fixture_summary(tmp_path_factory):
    out = tmp_path_factory.mktemp("fixture")
    start = time.perf_counter()
    code = main(["run", "--config", str(fixture_path()), "--out", str(out)])
    elapsed = time.perf_counter() - start
    return code, elapsed, json.loads((out / "summary.json").read_text())


def single(summary, variant):
    return {**summary, "variants": {variant: summary["variants"][variant]}}


def test_fixture_run_budget(fixture_summary):
    code, elapsed, summary = fixture_summary
    assert code == EXIT_OK and len(summary["variants"]) == 9
    assert elapsed < 60


def test_fixture_summary_ingress_ratio(fixture_summary):
    v = fixture_summary[2]["variants"]
    assert v["fedcod"]["server_ingress"] <= 0.2 * v["baseline"]["server_ingress"]


def test_compare_baseline_with_forwarding_download(fixture_summary):
    s = fixture_summary[2]
    report = compare(single(s, "baseline"), single(s, "d2-c"))
    assert report["baseline -> d2-c"]["t_download"] < 0


def test_compare_static_and_adaptive_on_stable_network(tmp_path):
    doc = fixture_doc()
    doc["rounds"] = 20
    for node in doc["topology"]["nodes"]:
        node.get("train_time", {})["sigma"] = 0.0
    for lk in doc["topology"]["links"]:
        lk["var"] = 0.0
    cfg = write(tmp_path, doc)
    for v in ("fedcod", "fedcod-adaptive"):
        assert main(["run", "--config", str(cfg), "--variant-filter", v,
                     "--out", str(tmp_path / v)]) == EXIT_OK
    a = json.loads((tmp_path / "fedcod" / "summary.json").read_text())
    b = json.loads((tmp_path / "fedcod-adaptive" / "summary.json").read_text())
    assert compare(a, b)["fedcod -> fedcod-adaptive"]["inter_client_bytes"] <= 0
