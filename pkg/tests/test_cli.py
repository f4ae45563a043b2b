import csv
import json
import os
import socket
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from fedlearn.api.schemas import load_run_config
from fedlearn.core.crypto import KeyPair, PublicKey, keygen, read_key_file
from fedlearn.main import main
from fedlearn.services import runner
from fedlearn.services.export_service import read_metrics

ROOT = Path(__file__).resolve().parents[1]


def _dataset(tmp_path, n=400, d=6, parties=3, labels="pm1", separation=4.0):
    source = tmp_path / "blobs.csv"
    assert main(["gen-data", "--n", str(n), "--d", str(d), "--separation", str(separation),
                 "--labels", labels, "--out", str(source)]) == 0
    assert main(["split", "--input", str(source), "--parties", str(parties)]) == 0
    return [f"blobs.party{k}.csv" for k in range(1, parties + 1)]


def _config(tmp_path, files, algorithm="kernel", name="run.json", endpoints=None, **sections):
    parties = []
    for k, data_path in enumerate(files, start=1):
        party = {"name": f"party{k}", "data_path": data_path}
        if k == 1:
            party.update(is_active=True, label_path="blobs.labels.csv")
        if endpoints:
            party["endpoint"] = endpoints[k - 1]
        parties.append(party)
    doc = {"algorithm": algorithm, "parties": parties, "output_dir": "out", **sections}
    if endpoints:
        doc["transport"] = "tcp"
    path = tmp_path / name
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


def _read_predictions(path):
    with open(path, encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))


def _free_ports(count):
    sockets = [socket.socket() for _ in range(count)]
    try:
        for s in sockets:
            s.bind(("127.0.0.1", 0))
        return [s.getsockname()[1] for s in sockets]
    finally:
        for s in sockets:
            s.close()


def test_keygen(tmp_path):
    assert main(["keygen", "--bits", "64", "--out-dir", str(tmp_path / "weak")]) == 1
    assert not (tmp_path / "weak" / "secret.key").exists()

    out = tmp_path / "keys"
    assert main(["keygen", "--bits", "64", "--seed", "3", "--allow-insecure", "--out-dir", str(out)]) == 0
    public = read_key_file(out / "public.key")
    pair = read_key_file(out / "secret.key")
    assert isinstance(public, PublicKey)
    assert isinstance(pair, KeyPair)
    assert public.n == pair.public.n == keygen(64, seed=3, allow_insecure=True).public.n


def test_gen_data_and_split(tmp_path):
    files = _dataset(tmp_path, n=20, d=5, parties=2)
    headers = [(tmp_path / f).read_text(encoding="utf-8").splitlines()[0] for f in files]
    assert all(h.startswith("id,") and "label" not in h for h in headers)
    assert sum(h.count(",") for h in headers) == 5
    labels = (tmp_path / "blobs.labels.csv").read_text(encoding="utf-8").splitlines()
    assert labels[0] == "id,label"
    assert len(labels) == 21


def test_simulate_kernel(tmp_path):
    files = _dataset(tmp_path)
    path = _config(tmp_path, files, kernel={"t_max": 30})
    assert main(["simulate", "--config", str(path)]) == 0
    metrics = read_metrics(tmp_path / "out")
    assert metrics["algorithm"] == "kernel"
    assert metrics["iterations"] == metrics["rounds"] <= 30
    assert metrics["capped"] is False
    assert metrics["train_accuracy"] >= 0.95
    assert (tmp_path / "out" / "model.json").exists()
    assert (tmp_path / "out" / "party1" / "kernel_weights.f64").exists()

    first_hash = metrics["transcript_hash"]
    assert main(["simulate", "--config", str(path)]) == 0
    assert read_metrics(tmp_path / "out")["transcript_hash"] == first_hash


def test_predict_reproduces_training_accuracy(tmp_path):
    files = _dataset(tmp_path, n=100, d=4, parties=2)
    path = _config(tmp_path, files, kernel={"D": 32, "t_max": 8})
    assert main(["simulate", "--config", str(path)]) == 0
    metrics = read_metrics(tmp_path / "out")

    out = tmp_path / "pred.csv"
    assert main(["predict", "--config", str(path), "--out", str(out)]) == 0
    rows = _read_predictions(out)
    assert len(rows) == 100
    assert all(row["label"] in ("-1", "1") for row in rows)

    _, accuracy = runner.predict_with_model(load_run_config(path), tmp_path / "out", tmp_path / "again.csv")
    assert accuracy == metrics["train_accuracy"]
    assert (tmp_path / "again.csv").read_bytes() == out.read_bytes()

    ids = tmp_path / "ids.csv"
    ids.write_text("id\n", encoding="utf-8")
    empty = tmp_path / "empty.csv"
    assert main(["predict", "--config", str(path), "--out", str(empty), "--ids", str(ids)]) == 0
    assert empty.read_text(encoding="utf-8") == "id,score,label\n"

    ids.write_text("id\n7\n3\n", encoding="utf-8")
    assert main(["predict", "--config", str(path), "--out", str(empty), "--ids", str(ids)]) == 0
    assert [row["id"] for row in _read_predictions(empty)] == ["7", "3"]


def test_simulate_forest(tmp_path):
    files = _dataset(tmp_path, n=60, d=4, parties=2, labels="zero_one", separation=3.0)
    insecure = {"key_bits": 64, "allow_insecure_keys": True, "crypto_seed": 1}
    stump = _config(tmp_path, files, "forest", "stump.json",
                    forest={"n_trees": 1, "max_depth": 0, **insecure})
    assert main(["simulate", "--config", str(stump)]) == 0
    metrics = read_metrics(tmp_path / "out")
    assert (metrics["trees"], metrics["nodes"]) == (1, 1)

    path = _config(tmp_path, files, "forest", forest={"n_trees": 2, "max_depth": 2, "quantiles": 8, **insecure})
    assert main(["simulate", "--config", str(path)]) == 0
    assert read_metrics(tmp_path / "out")["trees"] == 2
    out = tmp_path / "forest.csv"
    assert main(["predict", "--config", str(path), "--out", str(out)]) == 0
    rows = _read_predictions(out)
    assert len(rows) == 60
    assert all(0.0 <= float(row["score"]) <= 1.0 for row in rows)
    assert {row["label"] for row in rows} <= {"0", "1"}


def test_config_errors_exit_nonzero(tmp_path, capsys):
    assert main(["simulate", "--config", str(tmp_path / "absent.json")]) == 1
    files = ["missing.party1.csv"]
    assert main(["simulate", "--config", str(_config(tmp_path, files))]) == 1
    assert "parties.0.data_path" in capsys.readouterr().err


def test_coordinator_names_the_absent_party(tmp_path, capsys):
    files = _dataset(tmp_path, n=20, d=2, parties=2)
    endpoints = [f"127.0.0.1:{port}" for port in _free_ports(2)]
    path = _config(tmp_path, files, endpoints=endpoints)
    assert main(["coordinator", "--config", str(path), "--wait", "0.5"]) == 1
    err = capsys.readouterr().err
    assert "coordinator failed" in err
    assert "'party1'" in err or "'party2'" in err


@pytest.mark.slow
def test_tcp_run_matches_loopback_transcript(tmp_path):
    files = _dataset(tmp_path, n=120, d=6, parties=3)
    endpoints = [f"127.0.0.1:{port}" for port in _free_ports(3)]
    path = _config(tmp_path, files, endpoints=endpoints, kernel={"D": 32, "t_max": 10})
    env = {**os.environ, "PYTHONPATH": str(ROOT), "FEDLEARN_LOG": "error"}
    command = [sys.executable, "-m", "fedlearn.main"]

    parties = [
        subprocess.Popen(command + ["party", "--config", str(path), "--name", f"party{k}"], cwd=ROOT, env=env)
        for k in range(1, 4)
    ]
    try:
        done = subprocess.run(command + ["coordinator", "--config", str(path), "--wait", "30"],
                              cwd=ROOT, env=env, capture_output=True, text=True, timeout=300)
        assert done.returncode == 0, done.stderr
        for party in parties:
            assert party.wait(timeout=30) == 0
    finally:
        for party in parties:
            if party.poll() is None:
                party.kill()

    tcp_hash = read_metrics(tmp_path / "out")["transcript_hash"]
    loopback = runner.simulate(load_run_config(path))
    assert loopback.metrics["transcript_hash"] == tcp_hash
    assert np.isfinite(loopback.metrics["train_accuracy"])


def test_version(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--version"])
    assert info.value.code == 0
    assert capsys.readouterr().out.strip() == "fedlearn 0.1.0"
