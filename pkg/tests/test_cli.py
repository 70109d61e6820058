import json
import shutil

import numpy as np
import pytest

from splatquery.cli import main
from splatquery.fixture import write_fixture


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("fixture")
    write_fixture(root, seed=0, halo=False)
    return root


def run(fixture, *args):
    return main(["-c", str(fixture / "config.toml"), *args])


@pytest.fixture(scope="module")
def pipeline_dir(fixture_dir):
    """Fixture dir with the full pipeline already run through `query`."""
    assert run(fixture_dir, "ingest") == 0
    assert run(fixture_dir, "group") == 0
    assert run(fixture_dir, "distill") == 0
    assert run(fixture_dir, "query", "red blob", "--render") == 0
    assert run(fixture_dir, "query", "blue blob", "--render") == 0
    return fixture_dir


class TestStages:
    def test_ingest_writes_manifest(self, pipeline_dir):
        doc = json.loads((pipeline_dir / "out" / "tracks.json").read_text())
        assert doc["format"] == "tracks/1"
        tracks = doc["granularities"]["object"]["tracks"]
        assert [t["track_id"] for t in tracks] == [0, 1]

    def test_group_artifact(self, pipeline_dir):
        doc = json.loads((pipeline_dir / "out" / "groups.json").read_text())
        assert doc["format"] == "groups/1"
        assert len(doc["objects"]) == 2
        for obj in doc["objects"]:
            # two well-separated blobs of 150: recover the size within 5%
            assert abs(len(obj["foreground"]) - 150) <= 8

    def test_registry_written(self, pipeline_dir):
        doc = json.loads((pipeline_dir / "out" / "registry.json").read_text())
        assert doc["dim"] == 512
        names = {o["track_id"]: o["names"] for o in doc["objects"]}
        assert "red blob" in names[0]
        assert "blue blob" in names[1]

    def test_query_result_and_masks(self, pipeline_dir):
        qdir = pipeline_dir / "out" / "queries" / "red-blob"
        doc = json.loads((qdir / "result.json").read_text())
        assert doc["matched"][0]["track_id"] == 0
        assert doc["matched"][0]["similarity"] == pytest.approx(1.0)
        assert len(list((qdir / "masks").glob("*.png"))) == 12

    def test_eval_selection(self, pipeline_dir, capsys):
        assert run(pipeline_dir, "eval", "--mode", "selection") == 0
        report = json.loads(
            (pipeline_dir / "out" / "report_selection.json").read_text())
        assert report["miou"] >= 0.9
        assert "mIoU" in capsys.readouterr().out

    def test_segment_and_eval(self, pipeline_dir):
        assert run(pipeline_dir, "segment", "red blob", "blue blob") == 0
        labels = json.loads((pipeline_dir / "out" / "labels.json").read_text())
        assert labels["format"] == "labels/1"
        assert run(pipeline_dir, "eval", "--mode", "segmentation") == 0
        report = json.loads(
            (pipeline_dir / "out" / "report_segmentation.json").read_text())
        assert report["miou"] >= 0.9
        assert report["macc"] >= 0.9

    def test_render_command(self, pipeline_dir):
        assert run(pipeline_dir, "render", "--view", "0") == 0
        assert (pipeline_dir / "out" / "renders" / "0.png").exists()


class TestErrorContracts:
    def test_missing_prior_artifact_names_producer(self, fixture_dir,
                                                   tmp_path, capsys):
        fresh = tmp_path / "fresh"
        shutil.copytree(fixture_dir, fresh,
                        ignore=shutil.ignore_patterns("out"))
        code = main(["-c", str(fresh / "config.toml"), "distill"])
        assert code == 2
        err = capsys.readouterr().err
        assert "group" in err

    def test_corrupt_ply_exits_2_naming_file(self, fixture_dir, tmp_path,
                                             capsys):
        broken = tmp_path / "broken"
        shutil.copytree(fixture_dir, broken,
                        ignore=shutil.ignore_patterns("out"))
        (broken / "scene.ply").write_bytes(b"garbage")
        code = main(["-c", str(broken / "config.toml"), "group"])
        assert code == 2
        assert "scene.ply" in capsys.readouterr().err

    def test_empty_masks_root_zero_groups_exit_0(self, fixture_dir, tmp_path,
                                                 capsys):
        empty = tmp_path / "empty"
        shutil.copytree(fixture_dir, empty,
                        ignore=shutil.ignore_patterns("out"))
        shutil.rmtree(empty / "masks")
        (empty / "masks").mkdir()
        assert main(["-c", str(empty / "config.toml"), "ingest"]) == 0
        assert main(["-c", str(empty / "config.toml"), "group"]) == 0
        assert "0 groups" in capsys.readouterr().out

    def test_unreachable_adapter_exits_3(self, fixture_dir, tmp_path, capsys):
        work = tmp_path / "adapterless"
        shutil.copytree(fixture_dir, work)
        code = main(["-c", str(work / "config.toml"),
                     "--adapter", "tcp://127.0.0.1:1", "distill"])
        assert code == 3

    def test_missing_config_rejected(self, tmp_path, capsys):
        assert main(["-c", str(tmp_path / "nope.toml"), "ingest"]) == 2

    def test_bad_threshold_rejected(self, fixture_dir, tmp_path, capsys):
        work = tmp_path / "badcfg"
        shutil.copytree(fixture_dir, work,
                        ignore=shutil.ignore_patterns("out"))
        config = (work / "config.toml").read_text()
        config += "\n[thresholds]\nentropy = 3.0\n"
        (work / "config.toml").write_text(config)
        assert main(["-c", str(work / "config.toml"), "ingest"]) == 2

    def test_stale_artifact_version_fails_loudly(self, fixture_dir, tmp_path,
                                                 capsys):
        work = tmp_path / "stale"
        shutil.copytree(fixture_dir, work,
                        ignore=shutil.ignore_patterns("out"))
        config = str(work / "config.toml")
        assert main(["-c", config, "ingest"]) == 0
        assert main(["-c", config, "group"]) == 0
        groups = work / "out" / "groups.json"
        groups.write_text(groups.read_text().replace("groups/1", "groups/0"))
        assert main(["-c", config, "distill"]) == 2
        assert "groups/0" in capsys.readouterr().err


class TestPeriodicDetection:
    def test_fresh_disjoint_mask_registers_new_track(self, fixture_dir,
                                                     tmp_path, capsys):
        from splatquery.masks import save_mask
        work = tmp_path / "detect"
        shutil.copytree(fixture_dir, work,
                        ignore=shutil.ignore_patterns("out"))
        corner = np.zeros((64, 64), dtype=bool)
        corner[:6, :6] = True
        save_mask(corner, work / "detect" / "object" / "0" / "0.png")
        config = (work / "config.toml").read_text()
        config = config.replace("[paths]", '[paths]\ndetect = "detect"')
        (work / "config.toml").write_text(config)
        assert main(["-c", str(work / "config.toml"), "ingest"]) == 0
        out = capsys.readouterr().out
        assert "detected 1 new object tracks" in out
        doc = json.loads((work / "out" / "tracks.json").read_text())
        tracks = doc["granularities"]["object"]["tracks"]
        assert [t["track_id"] for t in tracks] == [0, 1, 2]
        # seeded at the detection view only
        assert tracks[2]["views"] == {"0": True}


class TestAdapterEnvOverride:
    def test_env_var_overrides_endpoint(self, fixture_dir, tmp_path,
                                        monkeypatch, capsys):
        work = tmp_path / "env"
        shutil.copytree(fixture_dir, work)
        monkeypatch.setenv("SPLATQUERY_ADAPTER", "tcp://127.0.0.1:1")
        code = main(["-c", str(work / "config.toml"), "distill"])
        assert code == 3  # env endpoint wins over the config's "mock"
