"""Command-line interface tests: pair proposal, file round trips,
subcommand behavior, exit codes, and end-to-end pipeline determinism.
"""

import filecmp
import shutil

import numpy as np
import pytest

from aerotri import cli, geo
from aerotri.cli import main, propose_pairs
from aerotri.features import read_feature_file
from aerotri.geometry import CameraModel
from aerotri.synth import FlightConfig, generate_flight_plan


def rec(image_id, x, y, z=100.0):
    return geo.PosRecord(image_id, geo.ProjectedCoord(x, y, z))


class TestProposePairs:
    def test_radius_includes_near(self):
        pos = [rec("a", 0.0, 0.0), rec("b", 10.0, 0.0)]
        assert propose_pairs(pos, radius=20.0) == [("a", "b")]

    def test_radius_excludes_far(self):
        pos = [rec("a", 0.0, 0.0), rec("b", 10.0, 0.0)]
        assert propose_pairs(pos, radius=5.0) == []

    def test_k_nearest_grid(self):
        plan = generate_flight_plan(FlightConfig(strips=4, images_per_strip=6))
        pos = [rec(im, *plan[im].center) for im in sorted(plan)]
        pairs = set(propose_pairs(pos, k=8))
        # every along-track neighbor pair must be proposed
        for s in range(4):
            for i in range(5):
                a = f"IMG_{s:02d}_{i:02d}"
                b = f"IMG_{s:02d}_{i + 1:02d}"
                assert tuple(sorted((a, b))) in pairs

    def test_pairs_sorted_and_unique(self):
        pos = [rec("c", 0, 0), rec("a", 1, 0), rec("b", 2, 0)]
        pairs = propose_pairs(pos, radius=10.0)
        assert pairs == sorted(set(pairs))
        for a, b in pairs:
            assert a < b

    def test_too_few_images(self):
        with pytest.raises(cli.TooFewImages):
            propose_pairs([rec("a", 0, 0)])


class TestFileRoundTrips:
    def test_camera_json(self, tmp_path):
        cam = CameraModel(1000.0, 1010.0, 500.0, 400.0, k1=-0.1, k2=0.02,
                          width=1000, height=800)
        cli.save_camera(cam, tmp_path / "camera.json")
        loaded = cli.load_camera(tmp_path / "camera.json")
        assert loaded == cam

    def test_matches_csv(self):
        from aerotri.matching import Match
        ms = [Match(0, 3, 0.25), Match(2, 1, 0.5)]
        text = cli._matches_csv(ms)
        assert text.splitlines()[0] == "index_a,index_b,distance"
        assert cli._read_matches_csv(text) == ms

    def test_pair_file_name(self):
        assert cli.pair_file_name("IMG_A", "IMG_B") == "IMG_A__IMG_B.csv"


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    """A small 2x3 synthetic dataset written through the CLI."""
    out = tmp_path_factory.mktemp("ds")
    code = main(["synth", "--out", str(out), "--strips", "2",
                 "--images-per-strip", "3", "--n-points", "250",
                 "--gnss-h-sigma", "0", "--gnss-v-sigma", "0",
                 "--seed", "11"])
    assert code == 0
    return out


class TestSynthCommand:
    def test_artifacts_written(self, dataset_dir):
        for name in ["pos.csv", "camera.json", "truth_points.csv",
                     "truth_obs.csv", "true_poses.csv", "checkpoint.json"]:
            assert (dataset_dir / name).is_file()
        feats = sorted((dataset_dir / "features").glob("*.feat"))
        assert len(feats) == 6
        fs = read_feature_file(feats[0].read_bytes(), image_id=feats[0].stem)
        assert fs.keypoints.shape[0] > 0

    def test_deterministic_output(self, dataset_dir, tmp_path):
        code = main(["synth", "--out", str(tmp_path), "--strips", "2",
                     "--images-per-strip", "3", "--n-points", "250",
                     "--gnss-h-sigma", "0", "--gnss-v-sigma", "0",
                     "--seed", "11"])
        assert code == 0
        for f in sorted(dataset_dir.rglob("*")):
            if f.is_file():
                other = tmp_path / f.relative_to(dataset_dir)
                assert filecmp.cmp(f, other, shallow=False), f.name


class TestConvertPos:
    def test_round_trip(self, tmp_path):
        recs = [geo.PosRecord(f"I{i}", geo.GeodeticCoord(29.5 + 0.001 * i,
                                                         106.5, 100.0 + i))
                for i in range(4)]
        src = tmp_path / "geodetic.csv"
        src.write_text(geo.write_pos_file(recs))
        proj = tmp_path / "projected.csv"
        assert main(["convert-pos", "--pos", str(src), "--out", str(proj),
                     "--central-meridian", "106.5"]) == 0
        back = tmp_path / "back.csv"
        assert main(["convert-pos", "--pos", str(proj), "--out", str(back),
                     "--central-meridian", "106.5", "--inverse"]) == 0
        out = geo.parse_pos_file(back.read_bytes())
        for a, b in zip(recs, out):
            assert a.position.latitude == pytest.approx(b.position.latitude,
                                                        abs=1e-9)
            assert a.position.longitude == pytest.approx(b.position.longitude,
                                                         abs=1e-9)

    def test_missing_pos_exit_2(self, tmp_path, capsys):
        code = main(["convert-pos", "--pos", str(tmp_path / "nope.csv"),
                     "--out", str(tmp_path / "o.csv"),
                     "--central-meridian", "106.5"])
        assert code == 2
        assert "nope.csv" in capsys.readouterr().err


class TestMatchVerify:
    def test_match_writes_pairs(self, dataset_dir, tmp_path):
        out = tmp_path / "matches"
        code = main(["match", "--features", str(dataset_dir / "features"),
                     "--pos", str(dataset_dir / "pos.csv"),
                     "--out", str(out)])
        assert code == 0
        pairs = (out / "pairs.csv").read_text().splitlines()
        assert pairs[0] == "image_a,image_b"
        assert len(pairs) > 1
        a, b = pairs[1].split(",")
        body = (out / cli.pair_file_name(a, b)).read_text()
        assert body.splitlines()[0] == "index_a,index_b,distance"

    def test_verify_filters(self, dataset_dir, tmp_path):
        matches = tmp_path / "matches"
        verified = tmp_path / "verified"
        assert main(["match", "--features", str(dataset_dir / "features"),
                     "--pos", str(dataset_dir / "pos.csv"),
                     "--out", str(matches)]) == 0
        assert main(["verify", "--features", str(dataset_dir / "features"),
                     "--camera", str(dataset_dir / "camera.json"),
                     "--matches", str(matches), "--out", str(verified)]) == 0
        vp = (verified / "pairs.csv").read_text().splitlines()
        assert len(vp) > 1

    def test_dim_mismatch_exit_3(self, dataset_dir, tmp_path, capsys):
        feats = tmp_path / "features"
        shutil.copytree(dataset_dir / "features", feats)
        first = sorted(feats.glob("*.feat"))[0]
        fs = read_feature_file(first.read_bytes(), image_id=first.stem)
        from aerotri.features import FeatureSet, write_feature_file
        bad = FeatureSet(fs.image_id, fs.image_width, fs.image_height,
                         fs.keypoints,
                         np.hstack([fs.descriptors, fs.descriptors]))
        first.write_bytes(write_feature_file(bad))
        code = main(["match", "--features", str(feats),
                     "--out", str(tmp_path / "m")])
        assert code == 3
        # the message must name the offending .feat file
        assert ".feat" in capsys.readouterr().err


class TestSweepRatio:
    def test_sweep_csv(self, dataset_dir, tmp_path):
        out = tmp_path / "sweep.csv"
        code = main(["sweep-ratio",
                     "--features", str(dataset_dir / "features"),
                     "--image-a", "IMG_00_00", "--image-b", "IMG_00_01",
                     "--truth", str(dataset_dir / "truth_obs.csv"),
                     "--out", str(out)])
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "ratio,total,matched,false,match_rate,mismatch_rate"
        assert len(lines) == 1 + 9  # ratios 0.50..0.90 step 0.05


@pytest.fixture(scope="module")
def run_dir(dataset_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code = main(["run", "--features", str(dataset_dir / "features"),
                 "--pos", str(dataset_dir / "pos.csv"),
                 "--camera", str(dataset_dir / "camera.json"),
                 "--out", str(out), "--mode", "priors",
                 "--checkpoint", str(dataset_dir / "checkpoint.json")])
    assert code == 0
    return out


class TestPipeline:

    def test_all_images_registered(self, dataset_dir, run_dir):
        poses = (run_dir / "georecon" / "poses.csv").read_text().splitlines()
        assert len(poses) == 1 + 6

    def test_report_sections(self, run_dir):
        text = (run_dir / "report.csv").read_text()
        for section in ["relative_orientation", "bundle_adjustment",
                        "camera_position", "checkpoint"]:
            assert section in text

    def test_accurate_against_pos(self, dataset_dir, run_dir):
        feats = cli.load_features_dir(dataset_dir / "features")
        cam = cli.load_camera(dataset_dir / "camera.json")
        recon = cli.load_reconstruction(run_dir / "georecon", feats, cam)
        pos = geo.parse_pos_file((dataset_dir / "pos.csv").read_bytes(),
                                 projected=True)
        from aerotri import georef
        err = georef.camera_position_errors(recon, pos)
        assert err.xyz < 0.01  # exact POS, noise-free keypoints

    def test_byte_deterministic(self, dataset_dir, run_dir,
                                tmp_path_factory):
        out2 = tmp_path_factory.mktemp("run2")
        code = main(["run", "--features", str(dataset_dir / "features"),
                     "--pos", str(dataset_dir / "pos.csv"),
                     "--camera", str(dataset_dir / "camera.json"),
                     "--out", str(out2), "--mode", "priors",
                     "--checkpoint", str(dataset_dir / "checkpoint.json")])
        assert code == 0
        for f in sorted(run_dir.rglob("*")):
            if f.is_file():
                other = out2 / f.relative_to(run_dir)
                assert filecmp.cmp(f, other, shallow=False), f.name

    def test_missing_pos_exit_2(self, dataset_dir, tmp_path, capsys):
        missing = tmp_path / "absent.csv"
        code = main(["run", "--features", str(dataset_dir / "features"),
                     "--pos", str(missing),
                     "--camera", str(dataset_dir / "camera.json"),
                     "--out", str(tmp_path / "o")])
        assert code == 2
        assert "absent.csv" in capsys.readouterr().err

    def test_geodetic_requires_meridian(self, dataset_dir, tmp_path, capsys):
        code = main(["run", "--features", str(dataset_dir / "features"),
                     "--pos", str(dataset_dir / "pos.csv"),
                     "--camera", str(dataset_dir / "camera.json"),
                     "--out", str(tmp_path / "o"), "--geodetic"])
        assert code == 2
        assert "central-meridian" in capsys.readouterr().err
