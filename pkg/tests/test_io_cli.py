import csv
import io as _io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sandsoliton import io as fio
from sandsoliton.cli import run_cli
from sandsoliton.engine import Domain, SandpileState, relax
from sandsoliton.errors import ParseError
from sandsoliton.lattice import Box
from sandsoliton.patterns import PatternSpec, lift_pattern_to_state, soliton
from sandsoliton.render import BACKGROUND, PALETTE, export_voxels, render, slice_rgb
from sandsoliton.scenario import figure1_domain, figure1_state


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=40)
def test_state_round_trip(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    hi = tuple(int(v) for v in rng.integers(0, 5, size=n))
    hs = ((tuple(int(v) for v in rng.integers(0, 2, size=n)), int(rng.integers(1, 9))),) if rng.random() < 0.5 else ()
    try:
        dom = Domain(n, Box((0,) * n, hi), hs)
    except Exception:
        return
    s = SandpileState(dom, np.where(dom.mask, rng.integers(0, 2 * n, size=dom.box.shape), 0))
    text = fio.encode_state(s)
    assert fio.decode_state(text) == s
    assert fio.encode_state(fio.decode_state(text)) == text


def test_figure1_header():
    text = fio.encode_state(figure1_state())
    lines = text.splitlines()
    assert lines[:7] == ["SANDPILE v1", "n 3", "min 0 0 0", "max 25 25 25",
                         "halfspace 1 1 1 50", "halfspace 1 2 0 50", "default 5"]
    assert lines[7] == "cells 1" and lines[8] == "4 5 6 6" and lines[9] == "END"
    assert fio.decode_domain(fio.encode_domain(figure1_domain())) == figure1_domain()


def _small_state_text(records, count):
    return "\n".join(["SANDPILE v1", "n 2", "min 0 0", "max 2 2", "default 1", f"cells {count}",
                      *records, "END"]) + "\n"


def test_parse_errors_name_the_line():
    text = _small_state_text(["0 0 2", "1 1 3", "2 2 0"], 2)
    with pytest.raises(ParseError) as err:
        fio.decode_state(text)
    assert err.value.line == 9
    with pytest.raises(ParseError) as err:
        fio.decode_state(_small_state_text(["0 0 2", "0 0 3"], 2))
    assert err.value.line == 8 and "duplicate" in str(err.value)
    with pytest.raises(ParseError) as err:
        fio.decode_state(_small_state_text(["5 0 2"], 1))
    assert "outside" in str(err.value)
    with pytest.raises(ParseError):
        fio.decode_state(_small_state_text(["0 0 -1"], 1))
    with pytest.raises(ParseError):
        fio.decode_state(_small_state_text(["0 0 2"], 2))
    with pytest.raises(ParseError) as err:
        fio.decode_state(_small_state_text(["0 0 x"], 1))
    assert err.value.line == 7


def test_unknown_version_rejected():
    with pytest.raises(ParseError) as err:
        fio.decode_state(_small_state_text([], 0).replace("v1", "v2"))
    assert err.value.line == 1
    with pytest.raises(ParseError):
        fio.decode_state("TOPPLING v1\nEND\n")


def test_missing_end_rejected():
    with pytest.raises(ParseError):
        fio.decode_state(_small_state_text([], 0).replace("END\n", ""))


def test_toppling_round_trip():
    dom = Domain(2, Box((0, 0), (4, 4)))
    _, H = relax(SandpileState.uniform(dom, 3).add((2, 2), 1))
    back = fio.decode_toppling(fio.encode_toppling(H))
    assert np.array_equal(back.counts, H.counts)
    assert fio.encode_toppling(H).splitlines()[4] == "default 0"


@pytest.mark.parametrize("p", [(1, 2), (2, 3), (1, 2, 0)])
def test_profile_round_trip_and_phi_check(p):
    prof = soliton(p)
    text = fio.encode_profile(prof)
    back = fio.decode_profile(text)
    assert back.N == prof.N and np.array_equal(back.g, prof.g) and np.array_equal(back.phi, prof.phi)
    lines = text.splitlines()
    i = next(k for k, l in enumerate(lines) if l.startswith("phi"))
    vals = lines[i].split()
    vals[len(vals) // 2] = str(int(vals[len(vals) // 2]) + 1)
    lines[i] = " ".join(vals)
    with pytest.raises(ParseError) as err:
        fio.decode_profile("\n".join(lines) + "\n")
    assert err.value.line == i + 1


def test_field_round_trip_and_ring_check():
    forms = [((0, 0), 0), ((1, 2), 0)]
    text = "FIELD v1\nn 2\nform 0 0 0\nform 1 2 0\nmin -5\nmax 5\nEND\n"
    got_forms, field = fio.decode_field(text)
    assert got_forms == forms
    assert field.values.tolist() == [min(0, t) for t in range(-5, 6)]
    again = fio.encode_field(forms, field)
    f2, field2 = fio.decode_field(again)
    assert np.array_equal(field2.values, field.values)
    bad = again.replace("\n-5 ", "\n-4 ", 1)
    with pytest.raises(ParseError):
        fio.decode_field(bad)


def test_pattern_round_trip():
    spec = PatternSpec.of(((0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)))
    assert fio.decode_pattern(fio.encode_pattern(spec)) == spec
    with pytest.raises(ParseError):
        fio.decode_pattern("PATTERN v1\nn 2\nvertex 0 0 0\nvertex 0 0 1\nEND\n")


# --- rendering ---------------------------------------------------------------

def test_palette_and_uniform_plane():
    prof = soliton((0, 0, 1))
    s = lift_pattern_to_state(prof, Box.cube(3, 6))
    img = slice_rgb(s, 2, 0)
    assert (img == np.array(PALETTE[4], dtype=np.uint8)).all()
    img = slice_rgb(s, 2, 3)
    assert (img == np.array(BACKGROUND, dtype=np.uint8)).all()
    ppm = render(s, 2, 0).splitlines()
    assert ppm[:3] == ["P3", "13 13", "255"]
    assert len(ppm) == 3 + 13


def test_distinct_heights_get_distinct_colours():
    assert len({PALETTE[h] for h in range(5)} | {BACKGROUND}) == 6


def test_render_outside_cells_and_errors():
    s = figure1_state()
    img = slice_rgb(s, 2, 25)
    assert tuple(img[25, 25]) == (0, 0, 0)  # x + y + z > 50 lies outside
    from sandsoliton.errors import RangeError
    with pytest.raises(RangeError):
        render(s, 2, 26)
    with pytest.raises(RangeError):
        render(s, 3, 0)


def test_voxel_export_rows():
    prof = soliton((1, 2, 0))
    s = lift_pattern_to_state(prof, Box.cube(3, 5))
    text = export_voxels(s)
    rows = list(csv.reader(_io.StringIO(text)))
    assert rows[0] == ["x", "y", "z", "h"]
    assert len(rows) - 1 == int((s.heights != 5).sum())
    for x, y, z, h in rows[1:]:
        assert s[(int(x), int(y), int(z))] == int(h)


# --- command line --------------------------------------------------------------

def test_cli_soliton(tmp_path, capsys):
    out = tmp_path / "p.txt"
    assert run_cli(["soliton", "--p", "2,3", "--out", str(out)]) == 0
    prof = fio.decode_profile(out.read_text())
    assert prof.p == (2, 3) and prof.N == soliton((2, 3)).N
    assert "layer:" in capsys.readouterr().err


def test_cli_exit_codes(tmp_path):
    assert run_cli(["soliton", "--p", "2,4"]) == 2
    assert run_cli(["soliton", "--p", "3,5", "--k-budget", "1"]) == 3
    assert run_cli(["bogus"]) == 2
    bad = tmp_path / "bad.txt"
    bad.write_text("SANDPILE v1\nn 2\n")
    assert run_cli(["wave", "--state", str(bad), "--from", "0,0"]) == 2
    assert run_cli(["wave", "--state", str(tmp_path / "missing.txt"), "--from", "0,0"]) == 2


def test_cli_husk_zero_is_identity(tmp_path):
    src = tmp_path / "f.txt"
    src.write_text("FIELD v1\nn 2\nform 0 0 0\nform 2 3 0\nmin -20\nmax 20\nEND\n")
    one = tmp_path / "one.txt"
    assert run_cli(["husk", "--input", str(src), "--k", "0", "--out", str(one)]) == 0
    two = tmp_path / "two.txt"
    assert run_cli(["husk", "--input", str(one), "--k", "0", "--out", str(two)]) == 0
    assert one.read_bytes() == two.read_bytes()
    three = tmp_path / "three.txt"
    assert run_cli(["husk", "--input", str(src), "--k", "2", "--out", str(three)]) == 0
    _, f = fio.decode_field(three.read_text())
    assert (f.values <= np.minimum(0, np.arange(-20, 21))).all()


def test_cli_relax_wave_render(tmp_path):
    dom = tmp_path / "d.txt"
    dom.write_text(fio.encode_domain(Domain(2, Box((0, 0), (6, 6)))))
    st_ = tmp_path / "s.txt"
    top = tmp_path / "h.txt"
    assert run_cli(["relax", "--domain", str(dom), "--default", "3", "--add", "3,3:1",
                    "--out", str(st_), "--toppling", str(top)]) == 0
    s = fio.decode_state(st_.read_text())
    assert s.is_stable()
    w = tmp_path / "w.txt"
    z = next(tuple(int(v) for v in c) for c in np.argwhere(s.heights[:-1] == 3)
             if s.heights[c[0] + 1, c[1]] == 3)
    assert run_cli(["wave", "--state", str(st_), "--from", ",".join(map(str, z)), "--out", str(w)]) == 0
    assert fio.decode_state(w.read_text()).is_stable()
    ppm = tmp_path / "s.ppm"
    png = tmp_path / "s.png"
    vox = tmp_path / "v.csv"
    assert run_cli(["render", "--state", str(st_), "--axis", "0", "--slice", "3",
                    "--out", str(ppm), "--png", str(png), "--voxels", str(vox)]) == 0
    assert ppm.read_text().startswith("P3")
    assert png.read_bytes()[:4] == b"\x89PNG"
    assert run_cli(["render", "--state", str(st_)]) == 2


def test_cli_vertex(tmp_path):
    spec = tmp_path / "a.txt"
    spec.write_text(fio.encode_pattern(PatternSpec.of(((0, 0), (1, 0), (0, 1)))))
    out = tmp_path / "s.txt"
    assert run_cli(["vertex", "--spec", str(spec), "--window", "8", "--out", str(out)]) == 0
    assert fio.decode_state(out.read_text()).is_stable()
