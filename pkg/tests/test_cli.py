import shutil
from pathlib import Path

import numpy as np
import pytest

from cropdet.cli import main
from cropdet.dataio import (
    Annotation,
    ImageBuffer,
    read_annotation,
    read_detections,
    read_image,
    save_annotation,
    write_detections,
    write_image,
)
from cropdet.errors import EXIT_CONFIG, EXIT_INVARIANT, EXIT_OK, EXIT_PARSE
from cropdet.geometry import Box, LabeledBox

from oracles import reference_nms

FIXTURES = Path(__file__).parent / "fixtures"
DATASET = FIXTURES / "dataset"
RAW = FIXTURES / "raw_detections.tsv"


def report_rows(text):
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    header = lines[0].split("\t")
    return {ln.split("\t")[0]: dict(zip(header, ln.split("\t"))) for ln in lines[1:]}


@pytest.fixture
def dataset_copy(tmp_path):
    dst = tmp_path / "ds"
    shutil.copytree(DATASET, dst)
    return dst


class TestValidate:
    def test_clean(self, capsys):
        assert main(["validate", str(DATASET)]) == EXIT_OK

    def test_inverted_box(self, dataset_copy, capsys):
        xml = dataset_copy / "plot_b.xml"
        xml.write_text(xml.read_text().replace("<xmin>8</xmin>", "<xmin>35</xmin>", 1))
        assert main(["validate", str(dataset_copy)]) == EXIT_PARSE
        out = capsys.readouterr().out
        assert "plot_b.xml" in out and "object[1]/bndbox" in out

    def test_unpaired_warns(self, dataset_copy, capsys):
        (dataset_copy / "plot_c.xml").unlink()
        assert main(["validate", str(dataset_copy)]) == EXIT_OK
        assert "plot_c" in capsys.readouterr().out


class TestAnchors:
    @pytest.mark.parametrize("size,total", [("672", 112818), ("64", 1023)])
    def test_totals(self, size, total, capsys):
        assert main(["anchors", "--size", size]) == EXIT_OK
        last = capsys.readouterr().out.strip().splitlines()[-1].split("\t")
        assert last[0] == "total" and int(last[-1]) == total

    def test_bad_size(self, capsys):
        assert main(["anchors", "--size", "100"]) == EXIT_CONFIG

    def test_dump_and_figure(self, tmp_path, capsys):
        dump, fig = tmp_path / "a.tsv", tmp_path / "a.png"
        assert main(["anchors", "--size", "64", "--dump", str(dump), "--figure", str(fig)]) == EXIT_OK
        assert len(dump.read_text().splitlines()) == 1024
        assert fig.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


class TestPostprocess:
    def test_all_below_threshold(self, tmp_path, capsys):
        src = tmp_path / "d.tsv"
        write_detections([("x", LabeledBox(Box(0, 0, 5, 5), 0, 0.69))], src)
        assert main(["postprocess", str(src), "--out", str(tmp_path / "o.tsv")]) == EXIT_OK
        assert read_detections(tmp_path / "o.tsv") == []

    def test_duplicates_collapse(self, tmp_path, capsys):
        src = tmp_path / "d.tsv"
        rows = [("x", LabeledBox(Box(1, 1, 11, 11), 1, s)) for s in (0.8, 0.9, 0.75)]
        write_detections(rows, src)
        assert main(["postprocess", str(src), "--out", str(tmp_path / "o.tsv")]) == EXIT_OK
        out = read_detections(tmp_path / "o.tsv")
        assert len(out) == 1 and out[0][1].score == 0.9

    def test_matches_brute_force(self, tmp_path, capsys):
        rng = np.random.default_rng(11)
        rows = []
        for k in range(500):
            x0, y0 = rng.uniform(0, 200, 2)
            w, h = rng.uniform(5, 60, 2)
            rows.append((f"img{k % 3}", LabeledBox(Box(x0, y0, x0 + w, y0 + h), int(rng.integers(0, 2)),
                                                   float(rng.uniform(0.5, 1.0)))))
        src = tmp_path / "d.tsv"
        write_detections(rows, src)
        assert main(["postprocess", str(src), "--out", str(tmp_path / "o.tsv")]) == EXIT_OK
        got = {(i, d.class_id, d.score, d.box.as_tuple()) for i, d in read_detections(tmp_path / "o.tsv")}
        want = set()
        for image_id in ("img0", "img1", "img2"):
            sel = [d for i, d in rows if i == image_id and d.score > 0.7]
            boxes = np.array([d.box.as_tuple() for d in sel])
            keep = reference_nms(boxes, [d.score for d in sel], [d.class_id for d in sel], 0.3)
            want |= {(image_id, sel[k].class_id, sel[k].score, sel[k].box.as_tuple()) for k in keep}
        assert got == want

    def test_bundled_fixture(self, tmp_path, capsys):
        assert main(["postprocess", str(RAW), "--out", str(tmp_path / "o.tsv")]) == EXIT_OK
        out = read_detections(tmp_path / "o.tsv")
        assert len(out) == 8 and all(d.score > 0.7 for _, d in out)


def tiny_dataset(root):
    root.mkdir()
    write_image(ImageBuffer(np.zeros((10, 10, 3))), root / "t.ppm")
    save_annotation(Annotation("t.ppm", 10, 10, 3, [LabeledBox(Box(0, 0, 5, 10), 0)]), root / "t.xml")
    return root


class TestEval:
    def test_identity(self, tmp_path, capsys):
        gt = []
        for stem in ("plot_a", "plot_b", "plot_c"):
            gt += [(stem, LabeledBox(o.box, o.class_id, 1.0)) for o in read_annotation(DATASET / f"{stem}.xml").objects]
        write_detections(gt, tmp_path / "gt.tsv")
        assert main(["eval", str(DATASET), str(tmp_path / "gt.tsv"), "--out", str(tmp_path / "r.tsv")]) == EXIT_OK
        rows = report_rows((tmp_path / "r.tsv").read_text())
        for name in ("healthy", "stressed", "macro_average"):
            assert rows[name]["dsc"] == "1.000000"
        assert rows["healthy"]["iou"] == "1.000000"

    def test_hand_fixture(self, tmp_path, capsys):
        root = tiny_dataset(tmp_path / "tiny")
        write_detections([("t", LabeledBox(Box(2, 0, 7, 10), 0, 0.9))], tmp_path / "p.tsv")
        assert main(["eval", str(root), str(tmp_path / "p.tsv")]) == EXIT_OK
        rows = report_rows(capsys.readouterr().out)
        assert rows["healthy"]["dsc"] == "0.600000"
        assert (rows["healthy"]["tp"], rows["healthy"]["fp"], rows["healthy"]["fn"]) == ("30", "20", "20")
        assert rows["stressed"]["absent"] == "1"

    def test_unknown_ids(self, tmp_path, capsys):
        root = tiny_dataset(tmp_path / "tiny")
        write_detections([("nope", LabeledBox(Box(2, 0, 7, 10), 0, 0.9))], tmp_path / "p.tsv")
        assert main(["eval", str(root), str(tmp_path / "p.tsv")]) == EXIT_INVARIANT
        assert "nope" in capsys.readouterr().err

    def test_per_image_and_figure(self, tmp_path, capsys):
        args = ["eval", str(DATASET), str(RAW), "--out", str(tmp_path / "r.tsv"),
                "--per-image", str(tmp_path / "pi.tsv"), "--figure", str(tmp_path / "r.png")]
        assert main(args) == EXIT_OK
        assert len((tmp_path / "pi.tsv").read_text().splitlines()) > 3
        assert (tmp_path / "r.png").stat().st_size > 0


class TestForwardCheck:
    def test_small(self, tmp_path, capsys):
        assert main(["forward-check", "--size", "64", "--head-depth", "1"]) == EXIT_OK
        out = capsys.readouterr().out
        rows = dict((ln.split("\t")[0], ln.split("\t")[1:]) for ln in out.splitlines())
        for level, s in zip(("P2", "P3", "P4", "P5", "P6"), (16, 8, 4, 2, 1)):
            assert rows[level] == [str(s), str(s), "256"]
        assert rows["raw_detections"] == ["1023"]
        assert out.strip().endswith("ok")

    def test_fault(self, capsys):
        code = main(["forward-check", "--size", "64", "--head-depth", "0", "--fault", "lateral_c4"])
        assert code == EXIT_INVARIANT
        assert "lateral_c4" in capsys.readouterr().err

    def test_image_and_outputs(self, tmp_path, capsys):
        args = ["forward-check", "--image", str(DATASET / "plot_a.ppm"), "--head-depth", "1",
                "--detections-out", str(tmp_path / "d.tsv"), "--save-weights", str(tmp_path / "w")]
        assert main(args) == EXIT_OK
        assert (tmp_path / "d.tsv").read_text().startswith("image_id\t")
        assert (tmp_path / "w.bin").exists() and (tmp_path / "w.manifest").exists()


class TestOverlay:
    @pytest.fixture
    def grey(self, tmp_path):
        path = tmp_path / "g.ppm"
        write_image(ImageBuffer(np.full((32, 40, 3), 0.5)), path)
        return path

    def test_empty(self, tmp_path, grey, capsys):
        (tmp_path / "none.tsv").write_text("image_id\tclass\tscore\txmin\tymin\txmax\tymax\n")
        assert main(["overlay", str(grey), str(tmp_path / "none.tsv"), "--out", str(tmp_path / "o.ppm")]) == 0
        assert (tmp_path / "o.ppm").read_bytes() == grey.read_bytes()

    def test_one_box(self, tmp_path, grey, capsys):
        write_detections([("g", LabeledBox(Box(10, 5, 30, 15), 0, 0.9))], tmp_path / "d.tsv")
        assert main(["overlay", str(grey), str(tmp_path / "d.tsv"), "--out", str(tmp_path / "o.ppm")]) == 0
        before, after = read_image(grey).data, read_image(tmp_path / "o.ppm").data
        changed = np.any(before != after, axis=2)
        ring = [(r, c) for r in range(5, 15) for c in range(10, 30)
                if min(r - 5, 14 - r, c - 10, 29 - c) < 2]
        assert changed.sum() == len(ring)
        assert all(changed[r, c] for r, c in ring)
        np.testing.assert_array_equal(after[changed], np.tile([0.0, 0.0, 1.0], (len(ring), 1)))
        assert (tmp_path / "o.ppm.scores.tsv").read_text().count("\n") == 2

    def test_out_of_bounds(self, tmp_path, grey, capsys):
        write_detections([("g", LabeledBox(Box(30, 20, 90, 70), 1, 0.9))], tmp_path / "d.tsv")
        assert main(["overlay", str(grey), str(tmp_path / "d.tsv"), "--out", str(tmp_path / "o.ppm")]) == 0


class TestComposeBands:
    def test_order(self, tmp_path, capsys):
        args = ["compose-bands"] + [f"--{b}={FIXTURES / 'bands' / (b.upper() + '.pgm')}" for b in ("g", "r", "re", "nir")]
        assert main(args + ["--out", str(tmp_path / "c.ppm")]) == EXIT_OK
        out = read_image(tmp_path / "c.ppm").data
        for ch, name in enumerate(("R", "G", "NIR")):
            np.testing.assert_array_equal(out[:, :, ch], read_image(FIXTURES / "bands" / f"{name}.pgm").data[:, :, 0])

    def test_duplicate(self, tmp_path, capsys):
        args = ["compose-bands"] + [f"--{b}={FIXTURES / 'bands' / (b.upper() + '.pgm')}" for b in ("g", "r", "re", "nir")]
        assert main(args + ["--bands", "R-R-G", "--out", str(tmp_path / "c.ppm")]) == EXIT_CONFIG


class TestAugmentCommand:
    def test_rerun_bytes(self, tmp_path, capsys):
        for name in ("a", "b"):
            assert main(["augment", str(DATASET), "--out", str(tmp_path / name), "--seed", "3"]) == EXIT_OK
        files = sorted(p.name for p in (tmp_path / "a").iterdir())
        assert len(files) == 31  # 15 images, 15 annotations, manifest
        for f in files:
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_jobs_env(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("CROPDET_JOBS", "2")
        assert main(["augment", str(DATASET), "--out", str(tmp_path / "p")]) == EXIT_OK
        assert main(["augment", str(DATASET), "--out", str(tmp_path / "s"), "--jobs", "1"]) == EXIT_OK
        for p in (tmp_path / "s").glob("*.ppm"):
            assert p.read_bytes() == (tmp_path / "p" / p.name).read_bytes()


class TestConfig:
    def test_defaults_from_file(self, tmp_path, capsys):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("# postprocess settings\nscore_thresh = 0.99\n")
        src = tmp_path / "d.tsv"
        write_detections([("x", LabeledBox(Box(0, 0, 5, 5), 0, 0.95))], src)
        assert main(["--config", str(cfg), "postprocess", str(src), "--out", str(tmp_path / "o.tsv")]) == 0
        assert read_detections(tmp_path / "o.tsv") == []
        # an explicit flag still wins
        args = ["--config", str(cfg), "postprocess", str(src), "--out", str(tmp_path / "o.tsv"), "--score-thresh", "0.5"]
        assert main(args) == 0
        assert len(read_detections(tmp_path / "o.tsv")) == 1

    def test_unknown_key(self, tmp_path, capsys):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("colour=blue\n")
        assert main(["--config", str(cfg), "anchors"]) == EXIT_CONFIG

    def test_missing_file(self, capsys):
        assert main(["overlay", "/nonexistent.ppm", "/nonexistent.tsv", "--out", "/tmp/x.ppm"]) == 4
