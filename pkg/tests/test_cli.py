import os
import subprocess
import sys
import threading

import numpy as np
import pytest

from quantmpc.cli import main
from quantmpc.golden import load_golden
from quantmpc.model.modelfile import load_model, load_public
from quantmpc.model.runner import party_program
from quantmpc.transport import CommStats, PartyContext
from quantmpc.transport.tcp import TcpEndpoint

from test_transport import free_ports


def cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr().out
    return code, out


def report(text):
    return dict(line.split("=", 1) for line in text.splitlines() if "=" in line)


@pytest.fixture(scope="module")
def toy_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("models")
    assert main(["gen-model", "--seed", "1", "--out", str(d / "toy.qm"), "--shape-out", str(d / "toy.shape")]) == 0
    assert main(["gen-model", "--hidden", "8", "--layers", "1", "--heads", "1", "--seed", "7",
                 "--out", str(d / "tiny.qm"), "--shape-out", str(d / "tiny.shape")]) == 0
    return d


def test_gen_model_round_trip_and_determinism(tmp_path, capsys):
    a, b = tmp_path / "a.qm", tmp_path / "b.qm"
    assert cli(capsys, "gen-model", "--hidden", "16", "--heads", "2", "--seed", "4", "--out", a)[0] == 0
    assert cli(capsys, "gen-model", "--hidden", "16", "--heads", "2", "--seed", "4", "--out", b)[0] == 0
    assert a.read_bytes() == b.read_bytes()
    assert load_model(str(a)).config.hidden == 16


def test_gen_model_invalid_dims_writes_nothing(tmp_path, capsys):
    code, _ = cli(capsys, "gen-model", "--hidden", "0", "--seed", "1", "--out", tmp_path / "bad.qm")
    assert code == 3
    assert not (tmp_path / "bad.qm").exists()


def test_oracle_matches_frozen_golden(toy_files, capsys):
    golden = load_golden()["tiny"]
    code, out = cli(capsys, "oracle", "--model", toy_files / "tiny.qm", "--seq", 4, "--seed", 7, "--stable")
    assert code == 0
    rep = report(out)
    for name, values in golden["oracle_stages"].items():
        assert rep[f"stage.{name}"] == ",".join(str(v) for v in np.ravel(values))


def test_oracle_zero_input_deterministic(toy_files, tmp_path, capsys):
    np.save(tmp_path / "zeros.npy", np.zeros((3, 64)))
    args = ("oracle", "--model", toy_files / "toy.qm", "--seq", 3, "--seed", 0, "--input", tmp_path / "zeros.npy",
            "--stable")
    first, second = cli(capsys, *args), cli(capsys, *args)
    assert first == second and first[0] == 0
    assert report(first[1])["input"] == ",".join(["0"] * 192)


def test_oracle_reports_clip_divergence(toy_files, capsys):
    code, out = cli(capsys, "oracle", "--model", toy_files / "toy.qm", "--seq", 4, "--seed", 1, "--clip", "on",
                    "--stable")
    assert code == 0
    rep = report(out)
    assert rep["clip"] == "on"
    rates = [float(v) for k, v in rep.items() if k.startswith("clip_divergence.")]
    assert len(rates) == 23 and all(0.0 <= r <= 1.0 for r in rates)


def test_run_local_toy_block_passes(toy_files, capsys):
    code, out = cli(capsys, "run-local", "--model", toy_files / "toy.qm", "--seq", 8, "--seed", 1, "--stable")
    assert code == 0
    assert "oracle agreement: PASS (max dev 1)" in out.splitlines()
    rep = report(out)
    assert rep["online.bytes"] == rep["census.online_bytes"]
    assert rep["offline.bytes"] == rep["census.offline_bytes"]
    assert rep["offline.link.1->2"] == rep["offline.link.2->0"] == "0"
    assert rep["online.link.0->2"] == "0"


def test_run_local_report_is_reproducible(toy_files, tmp_path, capsys):
    args = ["run-local", "--model", toy_files / "tiny.qm", "--seq", 4, "--seed", 2, "--stable"]
    a = cli(capsys, *args, "--report", tmp_path / "a.txt")
    b = cli(capsys, *args, "--report", tmp_path / "b.txt")
    assert a == b
    assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()


def test_run_local_split_phases_match_single_run(toy_files, tmp_path, capsys):
    base = ["run-local", "--model", toy_files / "tiny.qm", "--seq", 4, "--seed", 3, "--stable"]
    assert cli(capsys, *base, "--phase", "offline", "--bundle-dir", tmp_path / "b")[0] == 0
    code, online = cli(capsys, *base, "--phase", "online", "--bundle-dir", tmp_path / "b")
    _, both = cli(capsys, *base)
    assert code == 0
    assert report(online)["logits"] == report(both)["logits"]
    assert report(online)["online.bytes"] == report(both)["online.bytes"]


def test_run_local_phase_needs_bundle_dir(toy_files, capsys):
    assert cli(capsys, "run-local", "--model", toy_files / "tiny.qm", "--seq", 2, "--seed", 1,
               "--phase", "offline")[0] == 2


def test_run_local_kept_shares_reveal_nothing(toy_files, capsys):
    code, out = cli(capsys, "run-local", "--model", toy_files / "tiny.qm", "--seq", 2, "--seed", 1,
                    "--reveal", "no", "--stable")
    assert code == 0 and "logits" not in report(out)


def test_bench_matches_census(toy_files, tmp_path, capsys):
    code, out = cli(capsys, "bench", "--model", toy_files / "tiny.qm", "--seq", "2,4", "--seed", 1, "--stable",
                    "--csv", tmp_path / "b.csv")
    assert code == 0
    rep = report(out)
    assert rep["census_equality"] == "PASS" and rep["online_monotone"] == "PASS"
    assert (tmp_path / "b.csv").read_text().count("PASS") == 2


def test_bench_empty_list_is_usage_error(toy_files, capsys):
    assert cli(capsys, "bench", "--model", toy_files / "tiny.qm", "--seq", "", "--seed", 1)[0] == 2


def test_missing_model_is_config_error(tmp_path, capsys):
    assert cli(capsys, "oracle", "--model", tmp_path / "none.qm", "--seq", 2, "--seed", 1)[0] == 3


def test_sequence_above_cap_is_config_error(toy_files, capsys):
    assert cli(capsys, "run-local", "--model", toy_files / "tiny.qm", "--seq", 17, "--seed", 1)[0] == 3


def test_party_needs_two_peers(toy_files, capsys):
    assert cli(capsys, "party", "--party", 1, "--listen", "127.0.0.1:1", "--peers", "127.0.0.1:2",
               "--model", toy_files / "tiny.shape", "--seq", 2, "--seed", 1)[0] == 2


# -- three processes over TCP -----------------------------------------------------------------


def party_cmd(pid, ports, model, seq, seed, out, extra=()):
    peers = ",".join(f"127.0.0.1:{ports[q]}" for q in range(3) if q != pid)
    return [sys.executable, "-m", "quantmpc.cli", "party", "--party", str(pid), "--listen",
            f"127.0.0.1:{ports[pid]}", "--peers", peers, "--model", str(model), "--seq", str(seq), "--seed",
            str(seed), "--stable", "--report", str(out), "--timeout", "20", *extra]


def launch(cmds):
    env = {**os.environ, "PYTHONPATH": os.pathsep.join(sys.path)}
    return [subprocess.Popen(c, stdout=subprocess.DEVNULL, stderr=subprocess.PIPE, env=env) for c in cmds]


@pytest.mark.slow
def test_three_processes_match_in_memory_run(toy_files, tmp_path, capsys):
    ports = free_ports(3)
    models = [toy_files / "toy.qm", toy_files / "toy.shape", toy_files / "toy.shape"]
    procs = launch([party_cmd(p, ports, models[p], 8, 5, tmp_path / f"p{p}.txt") for p in range(3)])
    codes = [p.wait(timeout=120) for p in procs]
    assert codes == [0, 0, 0], [p.stderr.read().decode() for p in procs]
    parts = [CommStats.from_report((tmp_path / f"p{p}.txt").read_text()) for p in range(3)]
    merged = CommStats.merge(parts)
    _, out = cli(capsys, "run-local", "--model", toy_files / "toy.qm", "--seq", 8, "--seed", 5, "--stable",
                 "--report", tmp_path / "local.txt")
    local = CommStats.from_report((tmp_path / "local.txt").read_text())
    assert merged.bytes == local.bytes and merged.rounds == local.rounds
    assert merged.header_bytes == local.header_bytes
    assert report((tmp_path / "p1.txt").read_text())["logits"] == report(out)["logits"]


@pytest.mark.slow
def test_mismatched_seeds_give_integrity_error(toy_files, tmp_path):
    ports = free_ports(3)
    models = [toy_files / "tiny.qm", toy_files / "tiny.shape", toy_files / "tiny.shape"]
    procs = launch([party_cmd(p, ports, models[p], 2, 5 if p < 2 else 6, tmp_path / f"p{p}.txt")
                    for p in range(3)])
    codes = [p.wait(timeout=120) for p in procs]
    errors = [p.stderr.read().decode() for p in procs]
    assert codes == [4, 4, 4]
    assert any("IntegrityError" in e for e in errors)


@pytest.mark.slow
def test_peer_dying_mid_run_fails_cleanly(toy_files, tmp_path):
    ports = free_ports(3)
    addr = {p: ("127.0.0.1", ports[p]) for p in range(3)}
    models = [toy_files / "tiny.qm", toy_files / "tiny.shape"]
    procs = launch([party_cmd(p, ports, models[p], 2, 5, tmp_path / f"p{p}.txt") for p in range(2)])

    def doomed_assistant():
        ep = TcpEndpoint(2, addr[2], {0: addr[0], 1: addr[1]}, timeout=20)
        ctx = PartyContext(2, ep, 5)
        try:
            ep.connect()
            ctx.handshake()
            info = load_public(str(toy_files / "tiny.shape"))
            party_program(ctx, info.shape, 2, None, None, phase="offline")
        finally:
            ctx.close()  # dies before the online phase

    t = threading.Thread(target=doomed_assistant)
    t.start()
    t.join(60)
    codes = [p.wait(timeout=60) for p in procs]
    errors = [p.stderr.read().decode() for p in procs]
    assert codes == [4, 4], errors
    assert all("transport error" in e for e in errors)


@pytest.mark.slow
def test_unreachable_peer_times_out(toy_files, tmp_path):
    ports = free_ports(3)
    cmd = party_cmd(0, ports, toy_files / "tiny.qm", 2, 1, tmp_path / "p0.txt")
    cmd[cmd.index("--timeout") + 1] = "1"
    (proc,) = launch([cmd])
    assert proc.wait(timeout=60) == 4
