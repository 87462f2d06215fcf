import xml.etree.ElementTree as ET

import numpy as np
import pytest

from ecs_engine.attention import (
    POOLED_HEAD,
    STATS_COLUMNS,
    covering_spans,
    region_stats,
    render_all,
    render_heatmap,
    span_masses,
    unmasked_row_means,
    write_stats_csv,
)
from ecs_engine.errors import EmptyRegion, IoError
from ecs_engine.prompt import FillerSpec, PromptTokens

SVG = "{http://www.w3.org/2000/svg}"


def _prompt(n, ecs, spans=None):
    return PromptTokens(tokens=tuple(range(n)), base_length=n - len(ecs), ecs_range=ecs,
                        answer_cue_index=n - 1, spans=spans or {})


def test_two_by_two_hand_example():
    attn = np.array([[[[1.0, 0.0], [0.5, 0.5]]]])
    (stats, pooled) = region_stats(attn, _prompt(2, range(1, 2)))
    assert stats.ecs_row_mean == 0.5
    assert stats.other_row_mean == 1.0
    assert pooled.head == POOLED_HEAD


def test_uniform_row_has_zero_spread():
    n = 6
    attn = np.zeros((n, n))
    for i in range(n):
        attn[i, : i + 1] = 1 / (i + 1)
    stats = region_stats(attn[None, None], _prompt(n, range(3, 6)), pooled=False)[0]
    assert stats.uniformity == 0.0


def test_empty_region():
    with pytest.raises(EmptyRegion):
        region_stats(np.ones((1, 1, 1, 1)), _prompt(1, range(0, 0)))


def test_shape_mismatch():
    with pytest.raises(ValueError):
        region_stats(np.ones((1, 1, 2, 2)), _prompt(3, range(2, 3)))


@pytest.fixture(scope="module")
def captured(engine, mc_samples):
    prompt = engine.prompt(mc_samples[0], FillerSpec("space", 16))
    return prompt, engine.run(prompt, attentions=True).attentions


def test_partition_of_unity(captured):
    prompt, attentions = captured
    spans = covering_spans(prompt)
    cols = sorted(c for s in spans.values() for c in s)
    assert cols == list(range(len(prompt.tokens)))
    for layer in attentions:
        for m in layer:
            total = sum(span_masses(m, range(len(prompt.tokens)), s) for s in spans.values())
            np.testing.assert_allclose(total, 1.0, atol=1e-6)


def test_masses_bounded(captured, vocab):
    prompt, attentions = captured
    for s in region_stats(attentions, prompt, vocab.eot_id):
        masses = [s.mass_question, s.mass_first_filler, s.mass_eot, *s.mass_options.values()]
        assert all(0 <= m <= 1 + 1e-12 for m in masses)
        if s.head != POOLED_HEAD:
            assert s.mass_question + sum(s.mass_options.values()) + s.mass_first_filler <= 1 + 1e-9
    assert any(s.mass_eot > 0 for s in region_stats(attentions, prompt, vocab.eot_id))


def test_mean_consistency(captured):
    prompt, attentions = captured
    n = len(prompt.tokens)
    m = attentions[2, 1]
    ecs_mean, ecs_cells = unmasked_row_means(m, prompt.ecs_range)
    other_rows = [i for i in range(n) if i not in prompt.ecs_range]
    other_mean, other_cells = unmasked_row_means(m, other_rows)
    global_mean, cells = unmasked_row_means(m, range(n))
    assert cells == ecs_cells + other_cells
    combined = (ecs_mean * ecs_cells + other_mean * other_cells) / cells
    assert abs(combined - global_mean) <= 1e-9


def test_stats_count_and_csv(captured, tmp_path, vocab, default_config):
    prompt, attentions = captured
    stats = region_stats(attentions, prompt, vocab.eot_id)
    L, H = default_config.num_layers, default_config.num_heads
    assert len(stats) == L * (H + 1)
    write_stats_csv(stats, tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0].split(",") == STATS_COLUMNS
    assert len(lines) == 1 + L * (H + 1)
    assert lines[H + 1].startswith("0,max,")


def test_single_cell_svg_is_xml(tmp_path):
    path = render_heatmap(np.ones((1, 1)), _prompt(1, range(0, 1)), 0, 0, tmp_path / "a.svg")
    root = ET.parse(path).getroot()
    assert root.tag == f"{SVG}svg"
    assert len([r for r in root.iter(f"{SVG}rect") if r.get("class") == "cell"]) == 1


def test_four_by_four_has_six_masked(tmp_path):
    m = np.tril(np.full((4, 4), 0.25))
    root = ET.parse(render_heatmap(m, _prompt(4, range(2, 4)), 0, 0, tmp_path / "a.svg")).getroot()
    rects = list(root.iter(f"{SVG}rect"))
    masked = [r for r in rects if r.get("class") == "masked"]
    assert len(masked) == 6
    cell_fills = {r.get("fill") for r in rects if r.get("class") == "cell"}
    assert masked[0].get("fill") not in cell_fills
    assert len([r for r in rects if r.get("class") == "ecs"]) == 2


def test_render_is_deterministic(captured, tmp_path, vocab):
    prompt, attentions = captured
    a = render_heatmap(attentions[0, 0], prompt, 0, 0, tmp_path / "a.svg", vocab)
    b = render_heatmap(attentions[0, 0], prompt, 0, 0, tmp_path / "b.svg", vocab)
    assert a.read_bytes() == b.read_bytes()
    ET.parse(a)


def test_render_unwritable(tmp_path):
    with pytest.raises(IoError):
        render_heatmap(np.ones((1, 1)), _prompt(1, range(0, 1)), 0, 0, tmp_path / "missing" / "a.svg")


def test_render_all_names(captured, tmp_path):
    prompt, attentions = captured
    paths = render_all(attentions, prompt, tmp_path, heads={1: [0, 3]})
    assert [p.name for p in paths] == ["attn_L1_H0.svg", "attn_L1_H3.svg"]
