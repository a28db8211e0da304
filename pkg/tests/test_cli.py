import io
import json

import numpy as np
import pytest

from onlineph.cli import STREAM_FIELDS, format_value, main
from onlineph.ingest import IngestError, blocks_to_csv, ingest_blocks
from onlineph.sim import SimConfig, generate_block


def run_cli(argv, stdin_text=None, monkeypatch=None):
    out, err = io.StringIO(), io.StringIO()
    if stdin_text is not None:
        monkeypatch.setattr("sys.stdin", io.StringIO(stdin_text))
    code = main(argv, out, err)
    return code, out.getvalue(), err.getvalue()


def records(text):
    return [json.loads(line) for line in text.splitlines() if line.strip()]


@pytest.fixture(scope="module")
def stream_csv(tmp_path_factory):
    cfg = SimConfig(K=8, n_k=300, seed=5)
    path = tmp_path_factory.mktemp("data") / "stream.csv"
    with open(path, "w") as fh:
        blocks_to_csv((generate_block(cfg, k) for k in range(1, 9)), fh)
    return path


# --- ingest ------------------------------------------------------------------

def test_block_column_splits():
    text = "time,status,x1,block\n1,1,0.5,1\n2,0,0.1,1\n3,1,0.2,2\n"
    blocks = list(ingest_blocks(io.StringIO(text)))
    assert [b.n for b in blocks] == [2, 1]


def test_directory_in_filename_order(tmp_path):
    (tmp_path / "b02.csv").write_text("time,status,x1\n5,1,0.0\n6,1,1.0\n7,0,1.0\n")
    (tmp_path / "b01.csv").write_text("time,status,x1\n1,1,0.0\n2,1,1.0\n")
    (tmp_path / "notes.txt").write_text("ignored")
    blocks = list(ingest_blocks(tmp_path))
    assert [b.n for b in blocks] == [2, 3]
    assert [b.index for b in blocks] == [1, 2]


def test_blank_lines_delimit_stdin_chunks():
    text = "time,status,x1\n1,1,0\n2,1,1\n\n3,1,0\n4,0,1\n5,1,1\n"
    assert [b.n for b in ingest_blocks(io.StringIO(text))] == [2, 3]


def test_block_size_cut():
    text = "time,status,x1\n" + "".join(f"{i},1,{i % 2}\n" for i in range(1, 8))
    assert [b.n for b in ingest_blocks(io.StringIO(text), block_size=3)] == [3, 3, 1]


def test_negative_time_diagnostic():
    (err,) = ingest_blocks(io.StringIO("time,status,x1\n-1,1,0.5\n"))
    assert isinstance(err, IngestError)
    assert "time must be positive, line 2" in err.message


def test_bad_rows_and_zero_event_block():
    text = ("time,status,x1,block\n1,2,0,a\n2,1,nan,a\n3,1,b,a\n4,1,0,a,9\n"
            "1,0,0,b\n2,0,1,b\n3,1,0,c\n")
    items = list(ingest_blocks(io.StringIO(text)))
    assert [type(i).__name__ for i in items] == ["IngestError", "IngestError", "DataBlock"]
    msg = items[0].message
    for fragment in ("status must be 0 or 1, line 2", "non-finite value, line 3",
                     "non-numeric field, line 4", "expected 4 fields, got 5, line 5"):
        assert fragment in msg
    assert "event" in items[1].message


def test_malformed_header():
    (err,) = ingest_blocks(io.StringIO("t,s,x\n1,1,0\n"))
    assert "malformed header" in err.message


def test_csv_roundtrip_is_exact():
    block = generate_block(SimConfig(n_k=50), 1)
    buf = io.StringIO()
    blocks_to_csv([block], buf)
    (again,) = ingest_blocks(io.StringIO(buf.getvalue()))
    np.testing.assert_array_equal(again.time, block.time)
    np.testing.assert_array_equal(again.covariates, block.covariates)


# --- output format --------------------------------------------------------------

def test_format_value():
    assert format_value(0.1) == "0.10000000000000001"
    assert float(format_value(1 / 3)) == 1 / 3
    assert format_value(float("nan")) == "null"
    assert format_value({"a": None, "b": [1, True]}) == '{"a": null, "b": [1, true]}'


# --- commands ---------------------------------------------------------------------

def test_stream_schema_and_exit(stream_csv):
    code, out, _ = run_cli(["stream", str(stream_csv)])
    recs = records(out)
    assert code == 0 and len(recs) == 8
    for rec in recs:
        assert list(rec) == list(STREAM_FIELDS)
    assert [r["k"] for r in recs] == list(range(1, 9))
    assert recs[0]["T_cum"] == pytest.approx(recs[0]["T_win"], abs=1e-8)
    assert recs[0]["flags"] == ["partial_window"]


def test_single_block_record(monkeypatch):
    block = generate_block(SimConfig(n_k=200), 1)
    buf = io.StringIO()
    blocks_to_csv([block], buf)
    code, out, _ = run_cli(["stream", "-"], buf.getvalue(), monkeypatch)
    (rec,) = records(out)
    assert code == 0 and rec["T_cum"] == pytest.approx(rec["T_win"], abs=1e-8)


def test_stream_errors_give_status_two(monkeypatch):
    text = "time,status,x1\n-1,1,0.5\n2,1,0.3\n\n1,1,0\n2,1,1\n3,0,0\n"
    code, out, _ = run_cli(["stream"], text, monkeypatch)
    recs = records(out)
    assert code == 2
    assert recs[0]["error"].endswith("time must be positive, line 2")
    assert recs[0]["T_cum"] is None and "T_cum" in recs[0]
    assert recs[1]["error"] is None and recs[1]["k"] == 1


def test_resume_is_bit_identical(stream_csv, tmp_path):
    _, full, _ = run_cli(["stream", str(stream_csv)])
    lines = stream_csv.read_text().splitlines()
    head = [ln for ln in lines if ln.split(",")[0] in ("block", "1", "2", "3")]
    first = tmp_path / "first.csv"
    first.write_text("\n".join(head) + "\n")
    ckpt = tmp_path / "state.json"
    _, part1, _ = run_cli(["stream", str(first), "--checkpoint", str(ckpt)])
    assert json.loads(ckpt.read_text())["blocks_consumed"] == 3
    _, part2, _ = run_cli(["stream", str(stream_csv), "--checkpoint", str(ckpt), "--resume"])
    assert part1 + part2 == full


def test_resume_refuses_other_options(stream_csv, tmp_path):
    ckpt = tmp_path / "state.json"
    run_cli(["stream", str(stream_csv), "--checkpoint", str(ckpt)])
    code, _, err = run_cli(["stream", str(stream_csv), "--checkpoint", str(ckpt), "--resume",
                            "--transform", "log"])
    assert code == 1 and "different options" in err
    payload = json.loads(ckpt.read_text())
    payload["version"] = 7
    ckpt.write_text(json.dumps(payload))
    code, _, err = run_cli(["stream", str(stream_csv), "--checkpoint", str(ckpt), "--resume"])
    assert code == 1 and "version" in err


def test_missing_input_is_fatal(tmp_path):
    code, _, err = run_cli(["stream", str(tmp_path / "nope.csv")])
    assert code == 1 and "does not exist" in err


def test_fixed_policy_needs_beta(stream_csv):
    code, _, err = run_cli(["stream", str(stream_csv), "--eval-policy", "fixed"])
    assert code == 1
    code, out, _ = run_cli(["stream", str(stream_csv), "--eval-policy", "fixed",
                            "--fixed-beta", "0.67,-0.26,0.36"])
    assert code == 0 and len(records(out)) == 8


def test_csv_output(stream_csv):
    code, out, _ = run_cli(["stream", str(stream_csv), "--out", "csv"])
    lines = out.splitlines()
    assert code == 0 and lines[0].split(",") == list(STREAM_FIELDS) and len(lines) == 9


def test_fit_and_full_test(stream_csv):
    code, out, _ = run_cli(["fit", str(stream_csv)])
    assert code == 0 and all(r["converged"] for r in records(out))
    code, out, _ = run_cli(["test-full", str(stream_csv), "--h-mode", "exact"])
    (rec,) = records(out)
    assert code == 0 and rec["n"] == 2400 and 0 <= rec["p_value"] <= 1


def test_permute_command(stream_csv):
    code, out, _ = run_cli(["permute", str(stream_csv), "--n-perm", "4", "--seed", "3"])
    (rec,) = records(out)
    assert code == 0 and len(rec["permuted"]) == 4


def test_simulate_commands(tmp_path, monkeypatch):
    monkeypatch.setenv("ONLINEPH_OUTPUT_DIR", str(tmp_path))
    code, out, _ = run_cli(["simulate", "size", "--K", "3", "--n-k", "200", "--replicates", "2",
                            "--transform", "identity", "km"])
    recs = records(out)
    assert code == 0 and len(recs) == 2
    assert sorted(p.name for p in tmp_path.iterdir()) == sorted(
        [f"size_null_eps0.9_{t}_{kind}.csv" for t in ("identity", "km") for kind in ("summary", "tidy")])
    code, out, _ = run_cli(["simulate", "stream", "--K", "2", "--n-k", "20"])
    assert code == 0 and out.splitlines()[0] == "block,time,status,x1,x2,x3"
    code, out, _ = run_cli(["simulate", "qq", "--K", "2", "--n-k", "100", "--replicates", "3",
                            "--checkpoints", "1", "2"])
    assert code == 0 and records(out)[0]["checkpoints"] == [1, 2]
