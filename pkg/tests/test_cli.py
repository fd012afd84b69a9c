import json

import numpy as np
import pytest

from jpegrdh.cli import main
from jpegrdh.jpeg_codec import parse_jpeg, serialize_jpeg
from jpegrdh.transform import read_pgm

from conftest import cover_bytes


@pytest.fixture
def files(tmp_path):
    (tmp_path / "lena50.jpg").write_bytes(cover_bytes("lena", 50))
    (tmp_path / "lena30.jpg").write_bytes(cover_bytes("lena", 30))
    (tmp_path / "msg.bin").write_bytes(bytes(np.random.default_rng(0).integers(0, 256, 60, dtype=np.uint8)))
    return tmp_path


def run(*argv):
    return main([str(a) for a in argv])


def test_embed_extract_roundtrip(files):
    t = files
    assert run("embed", "--cover", t / "lena50.jpg", "--payload", t / "msg.bin",
               "--output", t / "s.jpg", "--report", t / "r.json") == 0
    assert run("extract", "--stego", t / "s.jpg", "--payload-out", t / "out.bin",
               "--restored", t / "back.jpg") == 0
    assert (t / "out.bin").read_bytes() == (t / "msg.bin").read_bytes()
    canonical = serialize_jpeg(parse_jpeg((t / "lena50.jpg").read_bytes()))
    assert (t / "back.jpg").read_bytes() == canonical
    rep = json.loads((t / "r.json").read_text())
    assert rep["schema"] == 1 and rep["payload_bits"] == 480 and rep["in_band"]
    assert rep["increase_bits"] == rep["scan_bits_stego"] - rep["scan_bits_cover"]


@pytest.mark.parametrize("strategy", ["huang", "hou"])
def test_other_strategies(files, strategy):
    t = files
    assert run("embed", "--cover", t / "lena50.jpg", "--payload", t / "msg.bin",
               "--output", t / "s.jpg", "--strategy", strategy) == 0
    assert run("extract", "--stego", t / "s.jpg", "--payload-out", t / "out.bin") == 0
    assert (t / "out.bin").read_bytes() == (t / "msg.bin").read_bytes()


def test_out_of_band(files):
    t = files
    assert run("embed", "--cover", t / "lena30.jpg", "--payload", t / "msg.bin",
               "--output", t / "s.jpg", "--aux-out", t / "aux.json") == 0
    assert run("extract", "--stego", t / "s.jpg", "--payload-out", t / "out.bin",
               "--aux", t / "aux.json") == 0
    assert (t / "out.bin").read_bytes() == (t / "msg.bin").read_bytes()


def test_dump_pgm_and_original(files):
    t = files
    raster = t / "orig.pgm"
    assert run("embed", "--cover", t / "lena50.jpg", "--payload", t / "msg.bin", "--output", t / "s.jpg",
               "--dump-pgm", t / "dump", "--report", t / "r.json") == 0
    cover_px = read_pgm(t / "dump.cover.pgm")
    assert cover_px.samples.shape == (512, 512)
    assert read_pgm(t / "dump.stego.pgm").samples.shape == (512, 512)
    raster.write_bytes(b"P5\n512 512\n255\n" + cover_px.samples.tobytes())
    assert run("embed", "--cover", t / "lena50.jpg", "--payload", t / "msg.bin", "--output", t / "s.jpg",
               "--original", raster, "--report", t / "r2.json") == 0
    rep = json.loads((t / "r2.json").read_text())
    assert rep["psnr_original_db"] == pytest.approx(rep["psnr_db"])


class TestExitCodes:
    def test_capacity(self, files):
        t = files
        assert run("embed", "--cover", t / "lena30.jpg", "--payload", t / "msg.bin",
                   "--output", t / "s.jpg") == 2
        assert not (t / "s.jpg").exists()

    def test_bad_jpeg(self, files):
        (files / "junk.jpg").write_bytes(b"\xff\xd8not a jpeg")
        assert run("embed", "--cover", files / "junk.jpg", "--payload", files / "msg.bin",
                   "--output", files / "s.jpg") == 3

    def test_cover_is_not_stego(self, files):
        assert run("extract", "--stego", files / "lena50.jpg", "--payload-out", files / "o.bin") == 4

    def test_missing_file(self, files):
        assert run("extract", "--stego", files / "nope.jpg", "--payload-out", files / "o.bin") == 1

    def test_usage(self):
        with pytest.raises(SystemExit) as exc:
            main(["embed", "--cover"])
        assert exc.value.code == 1

    def test_unknown_strategy_list(self, files):
        assert run("analyze", "--cover", files / "lena50.jpg", "--strategies", "nope") == 1


def _analyze(t, *extra):
    out = t / "a.json"
    code = run("analyze", "--cover", t / "lena50.jpg", "--json", out, *extra)
    return code, json.loads(out.read_text())


class TestAnalyze:
    FIELDS = {
        "cover_path", "qf_estimate", "capacity_bits", "payload_bits", "strategy", "alpha", "in_band",
        "psnr_db", "psnr_original_db", "file_bytes_cover", "file_bytes_stego", "scan_bits_cover",
        "scan_bits_stego", "increase_bits", "increase_percent", "selected_count", "aux_bits",
        "e_star_bits", "predicted_d", "predicted_e_bits", "hou_k", "runtime_ms", "error",
    }

    def test_schema(self, files):
        code, doc = _analyze(files, "--payload-bits", 300, 500)
        assert code == 0 and doc["schema"] == 1
        assert len(doc["reports"]) == 6
        for row in doc["reports"]:
            assert set(row) == self.FIELDS
            assert row["qf_estimate"] == 50 and row["error"] is None
        assert [r["strategy"] for r in doc["reports"][:3]] == ["multiobj", "huang", "hou"]

    def test_frequency_table(self, files):
        _, doc = _analyze(files, "--payload-bits", 100, "--strategies", "huang")
        table = doc["frequency_tables"][0]["frequency_costs"]
        assert len(table) == 8 and len(table[0]) == 8
        assert table[0][0] == pytest.approx(4.0)

    def test_deterministic(self, files):
        rows = []
        for _ in range(2):
            _, doc = _analyze(files, "--payload-bits", 400)
            for r in doc["reports"]:
                r.pop("runtime_ms")
            rows.append(doc)
        assert rows[0] == rows[1]

    def test_over_capacity_row(self, files):
        code, doc = _analyze(files, "--payload-bits", 10**6, "--strategies", "huang")
        assert code == 2
        row = doc["reports"][0]
        assert row["error"] and row["psnr_db"] is None and row["capacity_bits"] > 0

    def test_psnr_falls_as_payload_grows(self, files):
        out = files / "sweep.json"
        assert run("analyze", "--cover", files / "lena30.jpg", "--out-of-band", "--json", out,
                   "--strategies", "multiobj", "--payload-bits", 2000, 4000, 6000, 8000, 10000) == 0
        rows = json.loads(out.read_text())["reports"]
        values = [r["psnr_db"] for r in rows]
        assert all(not r["in_band"] for r in rows)
        assert all(a >= b for a, b in zip(values, values[1:]))

    def test_costs_csv(self, files):
        _analyze(files, "--payload-bits", 100, "--strategies", "huang", "--costs-csv", files / "c.csv")
        lines = (files / "c.csv").read_text().splitlines()
        assert lines[0] == "index,r,d,e" and len(lines) == 4097

    def test_jobs(self, files):
        out = files / "j.json"
        assert run("analyze", "--cover", files / "lena50.jpg", files / "lena30.jpg", "--jobs", 2,
                   "--strategies", "huang", "--payload-bits", 40, "--json", out) == 0
        doc = json.loads(out.read_text())
        assert len(doc["reports"]) == 2 and len(doc["frequency_tables"]) == 2


def test_solve(tmp_path):
    (tmp_path / "p.txt").write_text("# toy\n3 3 1.0\n2 1.0 1.0 1\n2 1.1 0.0 1\n1 0.5 0.0 1\n")
    out = tmp_path / "s.json"
    assert run("solve", "--problem", tmp_path / "p.txt", "--json", out) == 0
    doc = json.loads(out.read_text())
    assert doc["V"] == [0, 1, 1] and doc["e_star"] == 0.0
    assert doc["objective_d"] == pytest.approx(1.6)
    assert run("solve", "--problem", tmp_path / "p.txt", "--json", out, "--brute-force") == 0
    assert json.loads(out.read_text())["V"] == [0, 1, 1]
