import logging

import numpy as np
import pytest

from stal.grid import GridSpec
from stal.records import (DataFormatError, append_jsonl, emit_curves, ingest_grid_csv, read_checkpoint,
                          read_metrics_csv, write_checkpoint, write_kriging_csv, write_metrics_csv,
                          write_trajectory_csv)
from stal.wave import WaveParams, simulate

SPEC = GridSpec(4, 3)


def write(path, lines):
    path.write_text("\n".join(lines) + "\n")
    return path


def test_trajectory_round_trip_is_bit_identical(tmp_path):
    traj = simulate(WaveParams(SPEC, center=(1.0, 1.3)), 15)
    write_trajectory_csv(traj, tmp_path / "t.csv")
    back = ingest_grid_csv(tmp_path / "t.csv", SPEC)
    np.testing.assert_array_equal(back.values, traj.values)
    assert back.observable.all()


def test_missing_cell_becomes_unobservable(tmp_path):
    lines = ["t,i,j,value"] + [f"{t},{i},{j},0.5" for t in range(3) for i, j in SPEC.cells() if (t, i, j) != (1, 2, 0)]
    traj = ingest_grid_csv(write(tmp_path / "g.csv", lines), SPEC)
    assert not traj.observable[2, 0]
    assert traj.observable.sum() == SPEC.size - 1


@pytest.mark.parametrize("body, match", [
    (["t,i,j,value", "0,0,0,1", "0,0,0,2"], r"g.csv:3: duplicate.*first seen on row 2"),
    (["t,i,j,value", "0,0,0,1", "0,5,0,1"], r"g.csv:3: .*outside"),
    (["t,i,j,value", "0,0,x,1"], r"g.csv:2: non-numeric"),
    (["t,i,j,value", "0,0,0"], r"g.csv:2: expected 4 columns"),
    (["t,i,j,value", "0,0,0,nan"], r"g.csv:2: non-finite"),
    (["time,i,j,value", "0,0,0,1"], r"header"),
    (["t,i,j,value"], r"no data rows"),
])
def test_ingest_errors(tmp_path, body, match):
    with pytest.raises(DataFormatError, match=match):
        ingest_grid_csv(write(tmp_path / "g.csv", body), SPEC)


def metrics_rows(k, base=0.1):
    return [dict(step=s, sampler="kriging", physics="enabled", n=6, train_loss=1.0 / s,
                 eval_mse=base / s, **{"lambda": 9.0 if s > 1 else None}, seconds=None) for s in range(1, k + 1)]


def test_metrics_round_trip(tmp_path):
    rows = metrics_rows(3)
    write_metrics_csv(rows, tmp_path / "m.csv")
    assert read_metrics_csv(tmp_path / "m.csv") == rows
    text = (tmp_path / "m.csv").read_text().splitlines()
    assert text[0] == "step,sampler,physics,n,train_loss,eval_mse,lambda,seconds"
    assert text[1] == "1,kriging,enabled,6,1,0.10000000000000001,,"


def test_checkpoint_round_trip_and_validation(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {"W": rng.normal(size=(3, 2)), "b": rng.normal(size=3), "e": np.zeros((0, 2))}
    write_checkpoint(tensors, tmp_path / "p.txt")
    back = read_checkpoint(tmp_path / "p.txt")
    assert list(back) == list(tensors)
    for k in tensors:
        np.testing.assert_array_equal(back[k], tensors[k])
    (tmp_path / "bad.txt").write_text("hello\n")
    with pytest.raises(DataFormatError):
        read_checkpoint(tmp_path / "bad.txt")
    lines = (tmp_path / "p.txt").read_text().splitlines()
    (tmp_path / "short.txt").write_text("\n".join(lines[:3] + ["b 4", lines[4]]) + "\n")
    with pytest.raises(DataFormatError, match="shape"):
        read_checkpoint(tmp_path / "short.txt")


def test_jsonl_and_kriging_files(tmp_path):
    append_jsonl({"b": 1, "a": 2}, tmp_path / "l.jsonl")
    append_jsonl({"a": 3}, tmp_path / "l.jsonl")
    assert (tmp_path / "l.jsonl").read_text() == '{"a": 2, "b": 1}\n{"a": 3}\n'
    write_kriging_csv(np.array([[0.5, 0.25]]), tmp_path / "k.csv")
    assert (tmp_path / "k.csv").read_text() == "i,j,mse\n0,0,0.5\n0,1,0.25\n"


def test_curves(tmp_path, caplog):
    for name, k in [("a", 3), ("b", 3)]:
        (tmp_path / name).mkdir()
        write_metrics_csv(metrics_rows(k), tmp_path / name / "metrics.csv")
    files = emit_curves([tmp_path / "a" / "metrics.csv", tmp_path / "b" / "metrics.csv"], tmp_path / "out")
    assert [f.name for f in files] == ["a.dat", "b.dat", "combined.dat"]
    assert (tmp_path / "out" / "a.dat").read_text().splitlines()[:2] == ["# step eval_mse", "1 0.10000000000000001"]
    combined = (tmp_path / "out" / "combined.dat").read_text().splitlines()
    assert combined[0] == "# step a b" and len(combined) == 4


def test_curves_differing_lengths_and_empty(tmp_path, caplog):
    for name, k in [("a", 3), ("b", 2)]:
        (tmp_path / name).mkdir()
        write_metrics_csv(metrics_rows(k), tmp_path / name / "metrics.csv")
    with caplog.at_level(logging.WARNING):
        emit_curves([tmp_path / "a" / "metrics.csv", tmp_path / "b" / "metrics.csv"], tmp_path / "out")
    assert "differing step counts" in caplog.text
    last = (tmp_path / "out" / "combined.dat").read_text().splitlines()[-1]
    assert last.split()[0] == "3" and last.split()[2] == "nan"
    caplog.clear()
    with caplog.at_level(logging.WARNING):
        assert emit_curves([], tmp_path / "none") == []
    assert "no metrics files" in caplog.text
    assert not (tmp_path / "none").exists()
