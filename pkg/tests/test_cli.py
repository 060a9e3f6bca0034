import math
import os
import subprocess
import sys

import numpy as np
import pytest

from pointresample.cli import main, parse_surface
from pointresample.io import read_xyz

SINGLE_THREAD = {"OMP_NUM_THREADS": "1", "OPENBLAS_NUM_THREADS": "1", "MKL_NUM_THREADS": "1"}


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    shapes = d / "shapes"
    shapes.mkdir()
    for i, kind in enumerate(["sphere", "torus"]):
        assert run("gen", "--shape", kind, "--points", 300, "--seed", i, "--out", shapes / f"{kind}.xyz") == 0
    assert run("train", "--shapes-dir", shapes, "--iters", 15, "--patch", 128, "--seed", 1,
               "--ckpt", d / "model.ckpt", "--loss-trace", d / "loss.txt") == 0
    return d


class TestCommands:
    def test_eval_identical(self, workdir, capsys):
        a = workdir / "shapes" / "sphere.xyz"
        assert run("eval", "--pred", a, "--gt", a) == 0
        out = capsys.readouterr().out
        assert "CD(x1e4) 0.000000" in out and "HD(x1e3) 0.000000" in out

    def test_denoise_zero_steps(self, workdir):
        src = workdir / "shapes" / "sphere.xyz"
        out = workdir / "same.xyz"
        assert run("denoise", "--in", src, "--ckpt", workdir / "model.ckpt", "--steps", 0, "--out", out) == 0
        np.testing.assert_array_equal(read_xyz(out).points, read_xyz(src).points)

    def test_full_pipeline(self, workdir, capsys):
        clean = workdir / "shapes" / "sphere.xyz"
        noisy, den = workdir / "noisy.xyz", workdir / "den.xyz"
        assert run("corrupt", "--in", clean, "--noise", "gaussian", "--level", 0.02, "--seed", 3, "--out", noisy) == 0
        assert run("denoise", "--in", noisy, "--ckpt", workdir / "model.ckpt", "--steps", 5, "--reg", "rglr",
                   "--dump-every", 5, "--out", den) == 0
        assert (workdir / "den.t005.xyz").exists()
        assert run("eval", "--pred", den, "--gt", clean, "--surface", "sphere", "--machine") == 0
        lines = capsys.readouterr().out.strip().split("\n")
        assert [line.split("\t")[0] for line in lines] == ["CD(x1e4)", "HD(x1e3)", "P2M(x1e5)"]
        assert all(math.isfinite(float(line.split("\t")[1])) for line in lines)
        assert len((workdir / "loss.txt").read_text().split("\n")) == 16

    def test_upsample(self, workdir):
        out = workdir / "up.xyz"
        assert run("upsample", "--in", workdir / "shapes" / "torus.xyz", "--ckpt", workdir / "model.ckpt",
                   "--ratio", 3, "--steps", 2, "--out", out) == 0
        assert len(read_xyz(out)) == 900

    def test_gen_with_mesh(self, tmp_path):
        assert run("gen", "--shape", "box", "--points", 100, "--param", "half_extents=1/2/3",
                   "--out", tmp_path / "b.ply", "--mesh", tmp_path / "m.ply", "--mesh-resolution", 8) == 0
        assert run("eval", "--pred", tmp_path / "b.ply", "--gt", tmp_path / "b.ply", "--mesh", tmp_path / "m.ply") == 0

    @pytest.mark.parametrize("noise", ["gaussian", "laplace", "discrete", "aniso", "unidir", "uniform"])
    def test_corrupt_kinds(self, workdir, noise):
        out = workdir / f"c_{noise}.xyz"
        assert run("corrupt", "--in", workdir / "shapes" / "sphere.xyz", "--noise", noise, "--level", 0.01,
                   "--out", out) == 0


class TestErrors:
    def test_unknown_flag(self, capsys):
        assert run("eval", "--pred", "a", "--gt", "b", "--frobnicate") == 1
        err = capsys.readouterr().err
        assert err.startswith("error:") and len(err.strip().split("\n")) == 1

    def test_missing_command(self):
        assert run() == 1

    def test_missing_file(self, tmp_path, capsys):
        assert run("eval", "--pred", tmp_path / "nope.xyz", "--gt", tmp_path / "nope.xyz") == 2
        assert len(capsys.readouterr().err.strip().split("\n")) == 1

    def test_bad_checkpoint_version(self, workdir, tmp_path):
        ckpt = tmp_path / "old.ckpt"
        ckpt.write_text((workdir / "model.ckpt").read_text().replace("GFRS 1", "GFRS 7", 1))
        code = run("denoise", "--in", workdir / "shapes" / "sphere.xyz", "--ckpt", ckpt, "--out", tmp_path / "o.xyz")
        assert code == 2

    def test_bad_resample_args(self, workdir, tmp_path):
        code = run("denoise", "--in", workdir / "shapes" / "sphere.xyz", "--ckpt", workdir / "model.ckpt",
                   "--alpha", 1.5, "--out", tmp_path / "o.xyz")
        assert code == 1

    def test_parse_error(self, tmp_path):
        bad = tmp_path / "bad.xyz"
        bad.write_text("1 2\n")
        assert run("eval", "--pred", bad, "--gt", bad) == 2

    def test_help(self):
        assert run("--help") == 0


def test_surface_spec():
    s = parse_surface("torus:radius=0.5")
    assert s.params == {"radius": 0.5, "tube": 0.3}
    assert parse_surface("box:half_extents=1/2/3").params["half_extents"] == (1.0, 2.0, 3.0)


def test_determinism_subprocess(tmp_path):
    """Two identical command sequences in fresh single-threaded processes give identical files."""
    env = {**os.environ, **SINGLE_THREAD}

    def pipeline(d):
        d.mkdir()
        (d / "s").mkdir()
        cmds = [
            ["gen", "--shape", "capsule", "--points", 200, "--seed", 4, "--out", d / "s" / "c.xyz"],
            ["corrupt", "--in", d / "s" / "c.xyz", "--level", 0.02, "--seed", 5, "--out", d / "n.xyz"],
            ["train", "--shapes-dir", d / "s", "--iters", 4, "--patch", 100, "--seed", 6, "--ckpt", d / "m.ckpt"],
            ["denoise", "--in", d / "n.xyz", "--ckpt", d / "m.ckpt", "--steps", 3, "--reg", "glr", "--out", d / "o.xyz"],
        ]
        for c in cmds:
            subprocess.run([sys.executable, "-m", "pointresample", *map(str, c)], check=True, env=env)
        return [(d / f).read_bytes() for f in ("s/c.xyz", "n.xyz", "m.ckpt", "o.xyz")]

    assert pipeline(tmp_path / "a") == pipeline(tmp_path / "b")
