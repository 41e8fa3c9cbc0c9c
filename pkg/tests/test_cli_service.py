import json
import threading

import numpy as np
import pytest
import requests

from cardiosim.cli import RunConfig, load_run_config, main
from cardiosim.pipeline import Bundle, ValidationError, canonical_json, run_ranking, run_simulation
from cardiosim.service import make_server


@pytest.fixture(scope="module")
def artifacts(tmp_path_factory, standard_corpus, reference_model):
    root = tmp_path_factory.mktemp("artifacts")
    codec_path = root / "codec.ckpt"
    wm_path = root / "wm.ckpt"
    registry_path = root / "registry.json"
    standard_corpus.codec.save(str(codec_path))
    reference_model.save(str(wm_path))
    standard_corpus.registry.save(str(registry_path))
    return {"codec": str(codec_path), "wm": str(wm_path),
            "registry": str(registry_path), "root": root}


@pytest.fixture(scope="module")
def bundle(artifacts):
    return Bundle.load(artifacts["codec"], artifacts["wm"], artifacts["registry"])


@pytest.fixture(scope="module")
def server(bundle):
    srv = make_server(bundle, port=0, versions={"cardiosim": "test"})
    thread = threading.Thread(target=srv.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{srv.server_address[1]}"
    srv.shutdown()
    srv.server_close()


# -- pipeline -----------------------------------------------------------------

def test_simulation_response_contract(bundle):
    req = {"baseline": {"preset": "healthy"}, "action_id": "dofetilide",
           "dose": 1.0, "k": 3, "lambda": 0.6, "seed": 11}
    resp = run_simulation(bundle, req)
    assert resp["schema_version"] == 1
    assert resp["k"] == 3 and len(resp["waveforms"]) == 3
    assert len(resp["seeds"]) == 3
    assert all(len(trace) <= 2000 for ch in resp["waveforms"] for trace in ch)
    assert len(resp["risk"]["samples"]) == 3
    assert resp["score"]["lambda"] == 0.6
    assert all(np.isfinite(resp["epk_trace"]).tolist())


def test_simulation_is_seed_deterministic(bundle):
    req = {"baseline": {"preset": "healthy"}, "action_id": "quinidine",
           "dose": 1.0, "k": 2, "lambda": 0.6, "seed": 5}
    a = run_simulation(bundle, req)
    b = run_simulation(bundle, req)
    assert canonical_json(a) == canonical_json(b)


def test_simulation_validation_errors(bundle):
    with pytest.raises(ValidationError) as exc:
        run_simulation(bundle, {"action_id": "dofetilide", "dose": 1.0,
                                "k": 0, "lambda": 0.6, "seed": 1})
    assert "k" in exc.value.fields
    with pytest.raises(ValidationError):
        run_simulation(bundle, {"action_id": "dofetilide", "dose": 1.0,
                                "k": 2, "lambda": 0.6})   # seed missing
    with pytest.raises(ValidationError):
        run_simulation(bundle, {"action_id": "unknown-drug", "dose": 1.0,
                                "k": 2, "lambda": 0.6, "seed": 1})


def test_qt_prolonger_ranks_riskier_than_neutral(bundle):
    req = {"baseline": {"preset": "healthy"}, "k": 3, "lambda": 0.6, "seed": 3,
           "doses": [1.5], "action_ids": ["dofetilide", "placebo"]}
    report = run_ranking(bundle, req)
    by_id = {a["id"]: a for a in report["actions"]}
    assert by_id["dofetilide"]["mu"] > by_id["placebo"]["mu"]
    assert by_id["placebo"]["rank"] < by_id["dofetilide"]["rank"]


def test_explicit_ode_params_baseline(bundle, standard_corpus):
    params = json.loads(standard_corpus.base_params.to_json())
    req = {"baseline": {"ode_params": params}, "action_id": "placebo",
           "dose": 1.0, "k": 2, "lambda": 0.0, "seed": 2}
    resp = run_simulation(bundle, req)
    assert resp["risk"]["mu"] < 0.2


# -- HTTP service -------------------------------------------------------------

def test_health_endpoint(server):
    r = requests.get(f"{server}/api/health", timeout=10)
    assert r.status_code == 200
    body = r.json()
    assert body["status"] == "ok"
    assert "versions" in body and body["schema_version"] == 1


def test_actions_endpoint_lists_feasible_space(server, bundle):
    r = requests.get(f"{server}/api/actions", timeout=10)
    assert r.status_code == 200
    actions = r.json()["actions"]
    assert actions
    ids = [a["id"] for a in actions]
    assert "placebo" in ids
    assert not any("dofetilide+quinidine" == i for i in ids)  # forbidden pair


def test_simulate_endpoint_k_zero_is_400(server):
    r = requests.post(f"{server}/api/simulate",
                      json={"action_id": "placebo", "dose": 1.0, "k": 0,
                            "lambda": 0.6, "seed": 1}, timeout=30)
    assert r.status_code == 400
    assert "k" in r.json()["fields"]


def test_simulate_endpoint_infeasible_is_422(server):
    r = requests.post(f"{server}/api/simulate",
                      json={"action_id": "dofetilide", "dose": 99.0, "k": 2,
                            "lambda": 0.6, "seed": 1}, timeout=30)
    assert r.status_code == 422
    assert r.json()["reason"] == "dose-exceeded"


def test_malformed_body_is_400(server):
    r = requests.post(f"{server}/api/simulate", data=b"{not json",
                      headers={"Content-Type": "application/json"}, timeout=10)
    assert r.status_code == 400


def test_unknown_endpoint_is_404(server):
    assert requests.get(f"{server}/api/nope", timeout=10).status_code == 404


def test_cors_headers_present(server):
    r = requests.options(f"{server}/api/simulate", timeout=10)
    assert r.headers.get("Access-Control-Allow-Origin") == "*"


def test_simulate_endpoint_round_trip(server):
    req = {"baseline": {"preset": "healthy"}, "action_id": "verapamil",
           "dose": 1.0, "k": 2, "lambda": 0.6, "seed": 9}
    r = requests.post(f"{server}/api/simulate", json=req, timeout=60)
    assert r.status_code == 200
    body = r.json()
    assert body["seeds"] and body["risk"]["mu"] >= 0


def test_cli_http_rank_parity(server, bundle, artifacts, capsys):
    """Identical inputs + seeds give byte-identical reports via CLI and HTTP."""
    args = ["rank", "--codec", artifacts["codec"], "--wm", artifacts["wm"],
            "--registry", artifacts["registry"], "--k", "3", "--lambda", "0.6",
            "--seed", "21", "--doses", "1.0",
            "--action-ids", "placebo", "dofetilide", "lidocaine",
            "--out", str(artifacts["root"] / "rank_cli.json")]
    assert main(args) == 0
    cli_bytes = (artifacts["root"] / "rank_cli.json").read_bytes()
    r = requests.post(f"{server}/api/rank",
                      json={"baseline": {"preset": "healthy"}, "k": 3,
                            "lambda": 0.6, "seed": 21, "doses": [1.0],
                            "action_ids": ["placebo", "dofetilide", "lidocaine"]},
                      timeout=120)
    assert r.status_code == 200
    assert r.content == cli_bytes


# -- CLI ----------------------------------------------------------------------

def test_cli_no_arguments_usage_exit_1(capsys):
    assert main([]) == 1


def test_cli_unknown_command_exit_1(capsys):
    assert main(["frobnicate"]) == 1


def test_cli_missing_file_exit_2(capsys):
    code = main(["simulate", "--codec", "/does/not/exist", "--wm", "/nope",
                 "--action-id", "placebo", "--dose", "1", "--seed", "1"])
    assert code == 2


def test_cli_simulate_writes_report(artifacts, capsys):
    out = artifacts["root"] / "sim.json"
    code = main(["simulate", "--codec", artifacts["codec"], "--wm", artifacts["wm"],
                 "--registry", artifacts["registry"], "--action-id", "ranolazine",
                 "--dose", "1.0", "--k", "2", "--seed", "4", "--out", str(out)])
    assert code == 0
    body = json.loads(out.read_text())
    assert body["action"]["id"] == "ranolazine"
    assert body["seeds"]


def test_cli_verify_theory_small_budget(tmp_path, capsys):
    out = tmp_path / "theory.json"
    code = main(["verify-theory", "--gamma", "1", "--m", "2",
                 "--steps", "120000", "--out", str(out)])
    assert code == 0
    report = json.loads(out.read_text())
    assert report["pass"] is True


def test_cli_rollout_report(artifacts, capsys):
    out = artifacts["root"] / "rollout.json"
    code = main(["rollout", "--codec", artifacts["codec"], "--wm", artifacts["wm"],
                 "--registry", artifacts["registry"], "--horizons", "1", "2",
                 "--n", "2", "--seed", "0", "--out", str(out)])
    assert code == 0
    report = json.loads(out.read_text())
    assert set(report["horizons"]) == {"1", "2"}
    for rows in report["horizons"].values():
        assert len(rows) == 2


# -- RunConfig ----------------------------------------------------------------

def test_run_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"k": 3, "lambda_typo": 0.6}))
    with pytest.raises(ValueError, match="unknown config keys"):
        load_run_config(str(path))


def test_run_config_checks_paths(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"codec": "/missing/codec.ckpt"}))
    with pytest.raises(FileNotFoundError):
        load_run_config(str(path))


def test_run_config_round_trip(tmp_path, artifacts):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"codec": artifacts["codec"], "k": 5,
                                "seeds": [0, 1], "lam": 0.9}))
    cfg = load_run_config(str(path))
    assert cfg.k == 5 and cfg.seeds == (0, 1) and cfg.lam == 0.9
    assert cfg.world_model is None


def test_serve_requires_checkpoints(capsys):
    assert main(["serve"]) == 1
