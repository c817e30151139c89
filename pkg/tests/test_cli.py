"""Exit codes and output shape of the command line driver."""

from pathlib import Path

from modbot.cli import main

from conftest import CORPUS


def _args_run(tmp_path: Path, name: str, until: int = 2000) -> list[str]:
    return [
        "run", str(CORPUS / "car.topo"), str(CORPUS / "car.scen"),
        "--seed", "1", "--until", str(until), "--log", str(tmp_path / name),
    ]


def test_run_writes_log_and_repeats_identically(tmp_path):
    assert main(_args_run(tmp_path, "a.log")) == 0
    assert main(_args_run(tmp_path, "b.log")) == 0
    log_a = (tmp_path / "a.log").read_bytes()
    log_b = (tmp_path / "b.log").read_bytes()
    assert log_a == log_b
    assert b"role Head" in log_a.replace(b"head role Head", b"head role Head")
    assert any(line.endswith(b"TURN_CONTINUOUSLY 150") for line in log_a.splitlines())


def test_run_to_stdout_by_default(capsys):
    code = main(["run", str(CORPUS / "car.topo"), str(CORPUS / "car.scen"),
                 "--seed", "1", "--until", "600"])
    assert code == 0
    out = capsys.readouterr().out
    assert "boot id=0 v=1" in out


def test_run_missing_topology_exits_2(tmp_path, capsys):
    code = main(["run", str(tmp_path / "missing.topo"), str(CORPUS / "car.scen"),
                 "--seed", "1", "--until", "100"])
    assert code == 2
    assert "error:" in capsys.readouterr().err


def test_run_invalid_scenario_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.scen"
    bad.write_text("at 10 explode everything badly\n")
    code = main(["run", str(CORPUS / "car.topo"), str(bad),
                 "--seed", "1", "--until", "100"])
    assert code == 2
    assert "unknown event" in capsys.readouterr().err


def test_measure_reports_sizes(capsys):
    code = main(["measure", str(CORPUS / "evade_proposal.py")])
    assert code == 0
    out = capsys.readouterr().out
    assert "raw=838 bytes" in out
    assert "gzip=" in out
    assert "156" in out and "350" in out  # reference figures for context


def test_measure_empty_and_repetitive_files(tmp_path, capsys):
    empty = tmp_path / "empty.role"
    empty.write_bytes(b"")
    assert main(["measure", str(empty)]) == 0
    assert "raw=0 bytes" in capsys.readouterr().out

    repetitive = tmp_path / "rep.role"
    repetitive.write_bytes(b"a" * 1000)
    assert main(["measure", str(repetitive)]) == 0
    out = capsys.readouterr().out
    gz = int(out.split("gzip=")[1].split()[0])
    assert gz < 100  # far smaller than raw


def test_measure_missing_file_exits_2(tmp_path, capsys):
    assert main(["measure", str(tmp_path / "nope")]) == 2
    assert "error:" in capsys.readouterr().err


def test_check_car_program(capsys):
    assert main(["check", str(CORPUS / "car.role")]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0] == "4 roles, 1 abstract, 0 errors"
    assert "  Wheel extends Module (abstract)" in out
    assert "chain: Wheel -> RightWheel" in out


def test_check_cycle_fixture(tmp_path, capsys):
    fixture = tmp_path / "cycle.role"
    fixture.write_text("role A extends B { }\nrole B extends A { }\n")
    assert main(["check", str(fixture)]) == 1
    assert "inheritance cycle" in capsys.readouterr().out


def test_check_unvalued_abstract_constant(tmp_path, capsys):
    fixture = tmp_path / "abs.role"
    fixture.write_text(
        "abstract role W extends Module { abstract constant turn_dir; }\n"
        "role R extends W { }\n"
    )
    assert main(["check", str(fixture)]) == 1
    assert "turn_dir" in capsys.readouterr().out


def test_check_missing_file_exits_2(tmp_path, capsys):
    assert main(["check", str(tmp_path / "none.role")]) == 2
    assert "error:" in capsys.readouterr().err
