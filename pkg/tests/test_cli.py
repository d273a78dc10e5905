import json
from pathlib import Path

import pytest

from fedrare import config as cfgmod
from fedrare.cli import CSV_HEADER, main
from fedrare.errors import ConfigError

GOLDEN = Path(__file__).parent / "golden"
MINIMAL = (GOLDEN / "minimal.cfg").read_text()


def write(tmp_path, text, name="exp.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


def csvs(out):
    return {p.relative_to(out): p.read_bytes() for p in sorted(out.rglob("rounds.csv"))}


def test_validate_matches_golden(capsys):
    assert main(["validate", str(GOLDEN / "minimal.cfg")]) == 0
    assert capsys.readouterr().out == (GOLDEN / "minimal.validate.txt").read_text()


def test_minimal_run_writes_two_rows(tmp_path):
    cfg = write(tmp_path, MINIMAL)
    before = cfg.read_bytes()
    assert main(["run", str(cfg), "--out", str(tmp_path / "out"), "--quiet"]) == 0
    [run_dir] = [p for p in (tmp_path / "out").iterdir()]
    lines = (run_dir / "rounds.csv").read_text().splitlines()
    assert lines[0] == CSV_HEADER
    assert [l.split(",")[0] for l in lines[1:]] == ["1", "2"]
    assert all(len(l.split(",")[2].split(".")[1]) == 6 for l in lines[1:])
    doc = json.loads((run_dir / "summary.json").read_text())
    assert doc["summary"]["rounds"] == 2 and doc["seed"] == 0
    assert run_dir.name == f"{doc['config_hash']}-seed0"
    assert cfg.read_bytes() == before


def test_runs_byte_identical_across_repeats_and_threads(tmp_path):
    text = MINIMAL + "attack.strategy = rare_embedding\nattack.epsilon = 0.5\nattack.backdoor_steps = 20\n"
    cfg = write(tmp_path, text)
    main(["run", str(cfg), "--out", str(tmp_path / "a"), "--quiet"])
    main(["run", str(cfg), "--out", str(tmp_path / "b"), "--quiet"])
    main(["run", str(cfg), "--out", str(tmp_path / "c"), "--quiet", "--threads", "3"])
    a = csvs(tmp_path / "a")
    assert a and a == csvs(tmp_path / "b") == csvs(tmp_path / "c")


def test_sweep_and_seeds(tmp_path):
    text = (
        "federation.num_clients = 10\nfederation.rounds = 3\ndata.num_examples = 300\n"
        "data.vocab_size = 100\nattack.strategy = rare_embedding\nattack.backdoor_steps = 5\n"
        "run.seeds = 0, 1\nsweep.param = attack.epsilon\nsweep.values = 0.001, 0.003, 0.01\n"
    )
    out = tmp_path / "out"
    assert main(["run", str(write(tmp_path, text)), "--out", str(out), "--quiet"]) == 0
    docs = [json.loads(p.read_text()) for p in out.rglob("summary.json")]
    assert len(docs) == 6
    assert sorted({d["sweep"] for d in docs}) == ["attack.epsilon=0.001", "attack.epsilon=0.003", "attack.epsilon=0.01"]


@pytest.mark.parametrize(
    "text, path, line",
    [
        ("attack.decay = 1.5\n", "attack.decay", 1),
        ("# m above N\nfederation.num_clients = 5\nfederation.clients_per_round = 6\n", "federation.clients_per_round", 3),
        ("federation.rounds = 2\nfederation.wobble = 1\n", "federation.wobble", 2),
        ("federation.rounds = two\n", "federation.rounds", 1),
        ("federation.rounds = 2\nfederation.rounds = 3\n", "federation.rounds", 2),
        ("federation.seed = 4\n", "federation.seed", 1),
        ("attack.strategy = rare_embedding\nattack.epsilon = 0.5\n", "attack.epsilon", 2),
        ("sweep.param = attack.decay\nsweep.values = 0.5, 2.0\n", "sweep.values", 2),
        ("just some words\n", None, 1),
    ],
)
def test_invalid_configs_report_path_and_line(text, path, line):
    with pytest.raises(ConfigError) as info:
        cfgmod.parse(text)
    assert info.value.path == path and info.value.line == line
    assert str(info.value).startswith(f"line {line}:")


def test_invalid_config_exit_code(tmp_path, capsys):
    cfg = write(tmp_path, "attack.decay = 1.5\n")
    assert main(["validate", str(cfg)]) == 1
    assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert "line 1: attack.decay" in err
    assert not (tmp_path / "o").exists()
    assert main(["validate", str(tmp_path / "missing.cfg")]) == 1


def test_numeric_blowup_exit_code(tmp_path, capsys):
    cfg = write(tmp_path, MINIMAL + "federation.client_lr = 1e200\n")
    assert main(["run", str(cfg), "--out", str(tmp_path / "o"), "--quiet"]) == 2
    assert "round 1" in capsys.readouterr().err


def test_resolved_text_round_trips():
    cfg = cfgmod.parse(MINIMAL + "attack.norm_bound = 0.3\ndefense.kind = weak_dp\ndefense.literal_clip = true\n")
    again = cfgmod.parse(cfgmod.resolved_text(cfg))
    assert again == cfg and again.digest() == cfg.digest()
    assert cfg.settings.attack.norm_bound == 0.3


def test_comments_and_blank_lines_ignored():
    a = cfgmod.parse("federation.rounds = 7  # seven\n\n# note\n")
    assert a.settings.federation.rounds == 7


def test_file_corpus_run(tmp_path):
    import numpy as np

    rng = np.random.default_rng(0)
    rows = []
    for i in range(120):
        label = i % 2
        toks = rng.integers(10 * label, 10 * label + 10, size=6)
        rows.append(f"{label}\t{' '.join(map(str, toks))}")
    corpus = tmp_path / "corpus.tsv"
    corpus.write_text("\n".join(rows) + "\n")
    cfg = write(tmp_path, (
        f"data.source = file\ndata.path = {corpus}\ndata.vocab_size = 40\ndata.num_classes = 2\n"
        "federation.num_clients = 4\nfederation.clients_per_round = 2\nfederation.rounds = 5\n"
    ))
    assert main(["run", str(cfg), "--out", str(tmp_path / "o"), "--quiet"]) == 0
    [doc] = [json.loads(p.read_text()) for p in (tmp_path / "o").rglob("summary.json")]
    assert doc["summary"]["final_clean_acc"] >= 0.9
