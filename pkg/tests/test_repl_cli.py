"""CLI subcommands and the debugging REPL, including surface parity."""

import io

import pytest

from fedtrace.cli import main
from fedtrace.debugger import open_session
from fedtrace.experiments import build_scenario
from fedtrace.kvio import read_kv
from fedtrace.repl import DebugRepl, run_repl
from fedtrace.telemetry import TelemetryStore


@pytest.fixture(scope="module")
def recorded(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    store_dir = root / "telemetry"
    code = main(
        [
            "run",
            "--telemetry-dir",
            str(store_dir),
            "--rounds",
            "3",
            "--clients",
            "6",
            "--faulty-ids",
            "3",
            "--noise-rate",
            "1.0",
            "--seed",
            "12",
            "--epochs",
            "3",
            "--eta",
            "3",
        ]
    )
    assert code == 0
    return store_dir


def test_cli_run_records_store_and_metadata(recorded):
    store = TelemetryStore(recorded)
    assert store.round_ids() == [0, 1, 2]
    sections = store.session_sections()
    # ground truth for the harness lives in session metadata, not in records
    assert sections["faults"]["client_ids"] == "3"
    assert sections["faults"]["noise_rate"] == "1.0"
    assert sections["localization"]["eta"] == "3"
    assert store.verify_integrity().ok


def test_cli_run_rejects_zero_rounds(tmp_path, capsys):
    code = main(["run", "--telemetry-dir", str(tmp_path / "t"), "--rounds", "0"])
    assert code == 1
    assert "num_rounds" in capsys.readouterr().err


def test_cli_missing_required_args_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["run"])  # --telemetry-dir is required
    assert exc.value.code == 2


def test_cli_missing_config_file(tmp_path, capsys):
    code = main(
        ["run", "--telemetry-dir", str(tmp_path / "t"), "--config", str(tmp_path / "nope.ini")]
    )
    assert code == 1


def test_cli_export_config_roundtrip(tmp_path):
    out = tmp_path / "session.ini"
    code = main(["export-config", "--out", str(out), "--clients", "5", "--rounds", "2"])
    assert code == 0
    sections = read_kv(out)
    assert sections["session"]["num_rounds"] == "2"
    assert sections["partition"]["num_clients"] == "5"


def test_cli_experiment_scalability_smoke(capsys):
    code = main(
        ["experiment", "scalability", "--client-counts", "5", "8", "--output", "csv"]
    )
    assert code == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert out[0] == "clients,input_time_s,localization_time_s_per_input"
    assert len(out) == 3


# -- repl ------------------------------------------------------------------------


def test_repl_scripted_session(recorded):
    repl = DebugRepl(TelemetryStore(recorded))
    out = repl.handle("break 1")
    assert out == "breakpoint 1 set at round 1"
    assert repl.handle("break 1") == "breakpoint 1 set at round 1"  # idempotent
    out = repl.handle("run")
    assert out.startswith("hit breakpoint 1 at round 1")
    assert "round 1 granularity=round" in out
    out = repl.handle("stepin")
    assert "granularity=client position=1/6" in out
    out = repl.handle("next")
    assert "position=2/6" in out
    out = repl.handle("back")
    assert "position=1/6" in out
    out = repl.handle("stepout")
    assert "granularity=round" in out
    out = repl.handle("inspect")
    assert "client 3 loss=" in out
    out = repl.handle("localize --eta 3 --seed 5")
    assert "verdict: client" in out
    out = repl.handle("resume")
    assert "session closed" in out


def test_repl_localize_finds_injected_fault(recorded):
    repl = DebugRepl(TelemetryStore(recorded))
    repl.handle("break 2")
    repl.handle("run")
    out = repl.handle("localize --eta 3 --seed 5")
    assert "verdict: client 3" in out


def test_repl_fix_creates_branch(tmp_path):
    sc = build_scenario(
        3, n_clients=4, rounds=2, epochs=2, examples_per_client=40,
        test_examples=0, store_dir=tmp_path / "s",
    )
    repl = DebugRepl(sc.store)
    repl.handle("run")
    faulty = ",".join(str(c) for c in sorted(sc.faulty))
    out = repl.handle(f"fix {faulty} --from 0 --mode reaggregate")
    assert "branch fix000 created" in out
    assert "session closed" in out
    assert sc.store.head() == "fix000"
    out = repl.handle("inspect")
    assert out.startswith("error: no open session")


def test_repl_unknown_command_preserves_session(recorded):
    repl = DebugRepl(TelemetryStore(recorded))
    repl.handle("run")
    out = repl.handle("frobnicate")
    assert "unknown command: frobnicate" in out
    assert "commands:" in out
    assert "round 0" in repl.handle("inspect")


def test_repl_errors_are_messages_not_crashes(recorded):
    repl = DebugRepl(TelemetryStore(recorded))
    assert repl.handle("next").startswith("error: no open session")
    assert repl.handle("break") == "usage: break <round> [client]"
    repl.handle("run")
    assert repl.handle("fix 1").startswith("usage: fix")


def test_repl_boundary_notice(recorded):
    repl = DebugRepl(TelemetryStore(recorded))
    repl.handle("run")  # opens at round 0 (no breakpoints)
    out = repl.handle("back")
    assert out.startswith("boundary: already at round 0")


def test_run_repl_stream(recorded):
    stdin = io.StringIO("break 0\nrun\ninspect\nquit\n")
    stdout = io.StringIO()
    code = run_repl(TelemetryStore(recorded), stdin=stdin, stdout=stdout)
    assert code == 0
    text = stdout.getvalue()
    assert "hit breakpoint 1 at round 0" in text
    assert "bye" in text


def test_repl_api_debugger_parity(recorded):
    """The same cursor shows identical state through REPL, API, and library."""
    fastapi = pytest.importorskip("fastapi")
    from fastapi.testclient import TestClient
    from fedtrace.server import create_app

    store = TelemetryStore(recorded)
    direct = open_session(store, 1)
    direct.step_in()
    view = direct.state_view()

    app = create_app(store)
    with TestClient(app) as tc:
        sid = tc.post(
            "/sessions", json={"round_id": 1, "granularity": "client", "client_position": 1}
        ).json()
        assert sid["state"] == view.to_dict()

    repl = DebugRepl(store)
    repl.handle("break 1")
    repl.handle("run")
    out = repl.handle("stepin")
    assert f"partial_global digest={view.partial_global.digest()[:16]}" in out
