import csv
import filecmp
import json

import numpy as np
import pytest

from hetfuse.cli import main
from hetfuse.data import DataError, load_dataset, save_avian, save_flujapan
from hetfuse.genetics import pairwise_distances
from hetfuse.graph import build_snapshots
from hetfuse.config import RunConfig
from hetfuse.synth import SynthSpec, generate_synthetic, synthesize


@pytest.fixture(autouse=True)
def isolated_cache(tmp_path, monkeypatch):
    monkeypatch.setenv("HETFUSE_CACHE_DIR", str(tmp_path / "cache"))


def write_three_locations(root):
    root.mkdir(parents=True, exist_ok=True)
    (root / "locations.csv").write_text("location_id,lat,lon\na,40.0,-90.0\nb,40.05,-90.0\nc,40.0,-90.1\n")
    rows = ["location_id,week,population"] + [f"{l},{w},{10 + w}" for l in "abc" for w in (0, 1, 2)]
    (root / "abundance.csv").write_text("\n".join(rows) + "\n")
    (root / "cases.csv").write_text("case_id,week,location_id\nk1,1,a\nk2,1,c\nk3,2,b\n")
    (root / "sequences.tsv").write_text("k1\tACGTACGTAA\nk2\tACGTACGTAG\nk3\tACGAACGTAA\n")


def test_three_location_fixture_loads(tmp_path):
    write_three_locations(tmp_path / "d")
    ds = load_dataset(tmp_path / "d")
    assert ds.n_locations == 3 and ds.weeks == [0, 1, 2]
    assert ds.infected.tolist() == [[0, 0, 0], [1, 0, 1], [0, 1, 0]]
    assert len(ds.sequences) == 3
    snaps = build_snapshots(ds, RunConfig(d_gen=1))
    assert [s.n_locations for s in snaps] == [3, 3, 3]


def test_missing_column_is_named(tmp_path):
    write_three_locations(tmp_path / "d")
    (tmp_path / "d" / "abundance.csv").write_text("location_id,week\na,0\n")
    with pytest.raises(DataError, match="population"):
        load_dataset(tmp_path / "d")


def test_unknown_location_and_bad_values_rejected(tmp_path):
    write_three_locations(tmp_path / "d")
    (tmp_path / "d" / "cases.csv").write_text("case_id,week,location_id\nk1,1,zz\n")
    with pytest.raises(DataError, match="unknown location"):
        load_dataset(tmp_path / "d")
    (tmp_path / "d" / "cases.csv").write_text("case_id,week,location_id\nk1,x,a\n")
    with pytest.raises(DataError, match="'week'"):
        load_dataset(tmp_path / "d")


def test_flujapan_loader_rejects_asymmetric_adjacency(tmp_path):
    (tmp_path / "counts.csv").write_text("location_id,0,1\np0,1,0\np1,0,1\n")
    (tmp_path / "adjacency.csv").write_text("location_id,p0,p1\np0,0,1\np1,0,0\n")
    with pytest.raises(DataError, match="symmetric"):
        load_dataset(tmp_path, "flujapan")


def test_synthetic_files_are_byte_identical_per_seed(tmp_path):
    generate_synthetic(5, 12, 2, 7, tmp_path / "a")
    generate_synthetic(5, 12, 2, 7, tmp_path / "b")
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == ["abundance.csv", "cases.csv", "locations.csv", "sequences.tsv"]
    match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", names, shallow=False)
    assert mismatch == [] and errors == []
    generate_synthetic(5, 12, 2, 8, tmp_path / "c")
    assert not filecmp.cmp(tmp_path / "a" / "cases.csv", tmp_path / "c" / "cases.csv", shallow=False)


def test_strains_give_block_structured_distances():
    spec = SynthSpec(n_locations=8, weeks=20, strains=2, seed=3, drift=0.3)
    ds = synthesize(spec)
    seqs = [ds.sequences[c.case_id] for c in ds.cases]
    d = pairwise_distances(seqs, strict=False).d
    finite = np.isfinite(d)
    # two strains: cluster assignment by 2-means on the distance rows
    labels = (d[0] > np.median(d[0][finite[0]])).astype(int)
    within = d[(labels[:, None] == labels[None]) & finite & ~np.eye(len(d), dtype=bool)]
    between = d[(labels[:, None] != labels[None]) & finite]
    assert within.mean() < between.mean()


def test_single_location_has_empty_spatial_edges():
    ds = synthesize(SynthSpec(n_locations=1, weeks=6, seed=0))
    assert all(len(s.spatial) == 0 for s in build_snapshots(ds, RunConfig(d_gen=2)))


def test_round_trip_preserves_tables(tmp_path):
    ds = synthesize(SynthSpec(n_locations=4, weeks=10, seed=2))
    save_avian(ds, tmp_path / "a")
    back = load_dataset(tmp_path / "a")
    assert back.location_ids == ds.location_ids and back.weeks == ds.weeks
    assert np.array_equal(back.infected, ds.infected)
    assert np.array_equal(back.population, ds.population)
    assert [(c.case_id, c.week, c.location) for c in back.cases] == [(c.case_id, c.week, c.location) for c in ds.cases]
    assert {k: v.bases for k, v in back.sequences.items()} == {k: v.bases for k, v in ds.sequences.items()}
    np.testing.assert_allclose(back.distances, ds.distances, rtol=1e-12)
    save_avian(back, tmp_path / "b")
    for name in ("cases.csv", "abundance.csv", "locations.csv", "sequences.tsv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_flujapan_round_trip(tmp_path):
    (tmp_path / "in").mkdir()
    (tmp_path / "in" / "counts.csv").write_text("location_id,3,4,5\np0,2,0,1\np1,0,3,0\n")
    (tmp_path / "in" / "adjacency.csv").write_text("location_id,p0,p1\np0,0,1\np1,1,0\n")
    ds = load_dataset(tmp_path / "in", "flujapan")
    save_flujapan(ds, tmp_path / "out")
    for name in ("counts.csv", "adjacency.csv"):
        assert (tmp_path / "in" / name).read_text() == (tmp_path / "out" / name).read_text()


# ------------------------------------------------------------------- CLI


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    generate_synthetic(4, 16, 2, 0, root)
    return root


SMALL = ["--T", "2", "--H", "2", "--d", "4", "--d-gen", "2", "--k", "3", "--epochs", "1", "--M-max", "20"]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_exit_codes(tmp_path, synth_dir, capsys):
    assert main([]) == 1
    assert main(["train", "--data", str(synth_dir), "--out", str(tmp_path / "m")]) == 1  # --seed is mandatory
    assert main(["evaluate", "--data", str(synth_dir), "--seed", "0", "--out", str(tmp_path / "r"),
                 "--lambda-o", "0.9", "--lambda-p", "0.9"]) == 1
    assert main(["train", "--data", str(tmp_path / "missing"), "--seed", "0", "--out", str(tmp_path / "m")]) == 2
    assert main(["train", "--data", str(synth_dir), "--seed", "0", "--out", str(tmp_path / "m"), *SMALL,
                 "--lr", "1e300"]) == 3


def test_train_then_predict_shape(tmp_path, synth_dir, capsys):
    model = tmp_path / "model"
    assert main(["train", "--data", str(synth_dir), "--seed", "1", "--out", str(model), *SMALL]) == 0
    assert (model / "history.jsonl").exists() and (model / "params.npz").exists()
    out = tmp_path / "f.csv"
    assert main(["predict", "--data", str(synth_dir), "--model", str(model), "--out", str(out)]) == 0
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["week", "L000", "L001", "L002", "L003"]
    assert len(rows) - 1 == 2 and all(len(r) == 5 for r in rows)
    assert [int(r[0]) for r in rows[1:]] == [16, 17]
    assert main(["predict", "--data", str(synth_dir), "--model", str(model), "--out", str(out), "--start", "99"]) == 1


def test_prepare_reuses_cache(tmp_path, synth_dir, capsys):
    assert main(["prepare", "--data", str(synth_dir), "--d-gen", "2"]) == 0
    first = json.loads(capsys.readouterr().out)
    assert main(["prepare", "--data", str(synth_dir), "--d-gen", "2"]) == 0
    second = json.loads(capsys.readouterr().out)
    assert not first["reused"] and second["reused"] and first["cache"] == second["cache"]
    assert str(tmp_path / "cache") in first["cache"]


def test_config_file_is_honoured(tmp_path, synth_dir, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("T = 2\nH = 2\nd = 4\nd_gen = 2\nk = 3\nepochs = 0\n")
    model = tmp_path / "m"
    assert main(["train", "--data", str(synth_dir), "--seed", "0", "--out", str(model), "--config", str(cfg),
                 "--epochs", "1"]) == 0
    saved = (model / "config.txt").read_text()
    assert "T = 2" in saved and "epochs = 1" in saved and "seed = 0" in saved


def test_bench_lsh_runs(tmp_path, capsys):
    out = tmp_path / "bench.jsonl"
    assert main(["bench-lsh", "--sizes", "200,400", "--repeats", "1", "--out", str(out)]) == 0
    rows = [json.loads(l) for l in out.read_text().splitlines()]
    assert [r["n"] for r in rows] == [200, 400]
    assert all(r["pairs"] <= 1000 for r in rows)
    assert "non-sort growth" in capsys.readouterr().out
