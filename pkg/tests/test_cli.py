import math

import numpy as np
import pytest

from tbir.cli import main
from tbir.grid import GridSpec, ScalarField
from tbir.io import read_field, read_sinogram, read_velocity, write_field


def _summary(path):
    out = {}
    for line in path.read_text().splitlines():
        key, value = line.split("=", 1)
        out[key] = value
    return out


def _prepare(tmp_path, m=32, angles="5@0:90", noise=0.05):
    assert main(["phantom", "--kind", "disk_pair", "--m", str(m), "--out", str(tmp_path)]) == 0
    sino = tmp_path / "data.tbir"
    assert main(["forward", str(tmp_path / "target.tbir"), "--angles", angles, "-o", str(sino)]) == 0
    if noise:
        assert main(["noise", str(sino), "--level", str(noise), "--seed", "0", "-o", str(sino)]) == 0
    return tmp_path / "template.tbir", sino, tmp_path / "target.tbir"


def test_phantom_then_forward_geometry(tmp_path, capsys):
    _, sino, _ = _prepare(tmp_path, m=128, noise=0.0)
    assert "p=5 q=192" in capsys.readouterr().out
    s = read_sinogram(sino)
    assert s.geometry.p == 5 and s.geometry.q == 192
    assert s.geometry.angles == (0.0, 18.0, 36.0, 54.0, 72.0)


def test_ssim_of_a_file_with_itself(tmp_path, capsys):
    template, _, _ = _prepare(tmp_path, noise=0.0)
    capsys.readouterr()
    assert main(["ssim", str(template), str(template)]) == 0
    assert capsys.readouterr().out.strip() == "1.0"


def test_fbp_and_export(tmp_path):
    _, sino, _ = _prepare(tmp_path)
    assert main(["fbp", str(sino), "-o", str(tmp_path / "fbp.tbir")]) == 0
    assert read_field(tmp_path / "fbp.tbir").grid == GridSpec(2, 32)
    assert main(["export-pgm", str(tmp_path / "fbp.tbir"), str(tmp_path / "fbp.pgm")]) == 0
    assert (tmp_path / "fbp.pgm").read_bytes().startswith(b"P5\n32 32\n")
    assert main(["export-pgm", str(sino), str(tmp_path / "s.pgm")]) == 0


def test_usage_errors_exit_2(tmp_path, capsys):
    template, sino, _ = _prepare(tmp_path, noise=0.0)
    assert main([]) == 2
    assert main(["frobnicate"]) == 2
    assert main(["forward", str(template), "--angles", "5@0:270"]) == 2
    assert main(["noise", str(sino), "--level", "-1"]) == 2
    # the data was measured on a 32 grid, this template has 64 cells per axis
    assert main(["phantom", "--kind", "disk_pair", "--m", "64", "--out", str(tmp_path / "big")]) == 0
    assert main(["reconstruct", "--template", str(tmp_path / "big" / "template.tbir"), "--data", str(sino),
                 "--out", str(tmp_path / "run")]) == 2
    assert "detector bins" in capsys.readouterr().err


def test_malformed_file_reports_path_and_offset(tmp_path, capsys):
    bad = tmp_path / "bad.tbir"
    bad.write_bytes(b"TBIR-F 2 8\n" + b"\0" * 20)
    assert main(["ssim", str(bad), str(bad)]) == 2
    err = capsys.readouterr().err
    assert str(bad) in err and "byte offset 27" in err


def test_numerical_failure_exits_3(tmp_path, capsys):
    _, sino, _ = _prepare(tmp_path, noise=0.0)
    blank = tmp_path / "blank.tbir"
    write_field(blank, ScalarField(GridSpec(2, 32), np.zeros(1024)))
    code = main(["reconstruct", "--template", str(blank), "--data", str(sino), "--distance", "ncc",
                 "--levels", "1", "--out", str(tmp_path / "run")])
    assert code == 3
    assert "numerical failure" in capsys.readouterr().err


def _reconstruct(tmp_path, out, template, sino, target):
    return main(["reconstruct", "--template", str(template), "--data", str(sino), "--target", str(target),
                 "--pde", "continuity", "--distance", "ncc", "--levels", "2", "--max-iters", "3",
                 "--out", str(out)])


def test_reconstruct_outputs_and_determinism(tmp_path):
    template, sino, target = _prepare(tmp_path)
    assert _reconstruct(tmp_path, tmp_path / "a", template, sino, target) == 0
    assert _reconstruct(tmp_path, tmp_path / "b", template, sino, target) == 0
    a = tmp_path / "a"
    assert read_field(a / "result.tbir").grid == GridSpec(2, 32)
    assert read_velocity(a / "velocity.tbir").grid.m == 32
    log = (a / "iterations.log").read_text().splitlines()
    assert log[0].startswith("level=4 iter=0") and any(line.startswith("level=5") for line in log)
    sa, sb = _summary(a / "summary.txt"), _summary(tmp_path / "b" / "summary.txt")
    assert sa.keys() == sb.keys()
    for key in ("final_J", "final_D", "final_R", "ssim_result", "ssim_template", "dice_result"):
        x, y = float(sa[key]), float(sb[key])
        assert math.isfinite(x) and abs(x - y) <= 1e-9 * abs(x)
    assert sa["line_search_failed"] == "False"


@pytest.mark.slow
def test_reconstruct_disk_pair_improves_ssim(tmp_path):
    template, sino, target = _prepare(tmp_path, m=128)
    out = tmp_path / "run"
    assert main(["reconstruct", "--template", str(template), "--data", str(sino), "--target", str(target),
                 "--pde", "continuity", "--distance", "ncc", "--out", str(out)]) == 0
    s = _summary(out / "summary.txt")
    assert float(s["ssim_result"]) >= float(s["ssim_template"]) + 0.15
