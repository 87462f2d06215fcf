import xml.etree.ElementTree as ET

import pytest

from ecs_engine.errors import NoData
from ecs_engine.plots import emit_plots

SVG = "{http://www.w3.org/2000/svg}"
HEADER = "kind,M,position,seed_count,accuracy,baseline,delta_pp,improved\n"


def _polylines(path):
    root = ET.parse(path).getroot()
    return [p for p in root.iter(f"{SVG}polyline") if p.get("class") == "series"]


def test_single_row(tmp_path):
    csv = tmp_path / "a.csv"
    csv.write_text(HEADER + "space,0,before_answer_cue,3,40.000,40.000,+0.000,false\n")
    (path,) = emit_plots(csv, tmp_path / "out")
    lines = _polylines(path)
    assert len(lines) == 1 and len(lines[0].get("points").split()) == 1


def test_two_kinds_five_counts(tmp_path):
    rows = [f"{k},{m},before_answer_cue,3,{40 + i},40.000,+0.000,false\n"
            for k in ("space", "tab") for i, m in enumerate((0, 16, 32, 64, 128))]
    csv = tmp_path / "a.csv"
    csv.write_text(HEADER + "".join(rows))
    (path,) = emit_plots(csv, tmp_path / "out")
    lines = _polylines(path)
    assert [p.get("data-series") for p in lines] == ["space", "tab"]
    assert all(len(p.get("points").split()) == 5 for p in lines)


def test_positions_get_separate_charts(tmp_path):
    csv = tmp_path / "a.csv"
    csv.write_text(HEADER + "space,0,before_answer_cue,1,1,1,+0.000,false\n"
                   "space,4,after_answer_cue,1,2,1,+1.000,true\n")
    names = sorted(p.name for p in emit_plots(csv, tmp_path / "out"))
    assert names == ["accuracy_vs_M_after_answer_cue.svg", "accuracy_vs_M_before_answer_cue.svg"]


def test_checkpoint_chart(tmp_path):
    csv = tmp_path / "a.csv"
    body = "".join(f"{c},space,{m},before_answer_cue,1,{acc},50,+0.000,false\n"
                   for c, m, acc in [("00:a.bin", 0, 50), ("00:a.bin", 64, 55),
                                     ("01:b.bin", 0, 60), ("01:b.bin", 64, 58)])
    csv.write_text("checkpoint," + HEADER + body)
    paths = emit_plots(csv, tmp_path / "out")
    chart = [p for p in paths if p.name == "accuracy_vs_checkpoint.svg"][0]
    series = {p.get("data-series"): p for p in _polylines(chart)}
    assert set(series) == {"baseline (M=0)", "space:64:before_answer_cue"}
    assert len(paths) == 3


def test_deterministic(tmp_path):
    csv = tmp_path / "a.csv"
    csv.write_text(HEADER + "space,0,before_answer_cue,3,40,40,+0.000,false\n"
                   "space,16,before_answer_cue,3,42,40,+2.000,true\n")
    (a,) = emit_plots(csv, tmp_path / "x")
    (b,) = emit_plots(csv, tmp_path / "y")
    assert a.read_bytes() == b.read_bytes()


def test_empty_csv(tmp_path):
    csv = tmp_path / "a.csv"
    csv.write_text(HEADER)
    with pytest.raises(NoData):
        emit_plots(csv, tmp_path / "out")
