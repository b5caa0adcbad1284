import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bladeinspect.bridge import (
    NO_DEFECTS_BLOCK,
    PromptTemplates,
    assemble_prompt,
    attach_protocol,
    encode_detection,
    format_confidence,
    format_coord,
    parse_blocks,
    protocol_excerpt,
)
from bladeinspect.geometry import Detection, OrientedBox, centroid, grid_cell
from bladeinspect.knowledge import ProcedureRecord, Retriever, bundled_kb, lexical_embedder
from helpers import CLASSES, random_box

VG_BLOCK = (
    "Defect 1: VG-missing-teeth. Confidence: 91.3%. Location: Top-Right / Trailing Edge. "
    "OBB corners (normalized): [(0.71, 0.08), (0.79, 0.08), (0.79, 0.19), (0.71, 0.19)]."
)
VG_PROTOCOL = (
    "Retrieved Protocol: If VG-missing-teeth is confirmed, procedure VG-402A applies: replace the affected "
    "vortex generator strip within 14 days; inspect the adjacent 30 cm span for secondary delamination."
)


@pytest.fixture
def vg_detection():
    box = OrientedBox.from_coords([(0.71, 0.08), (0.79, 0.08), (0.79, 0.19), (0.71, 0.19)])
    return Detection(box, "VG-missing-teeth", 0.913)


class TestEncode:
    def test_vg_block_byte_exact(self, vg_detection):
        assert encode_detection(vg_detection, 1).text == VG_BLOCK

    @pytest.mark.parametrize("conf,text", [(1.0, "100.0"), (0.005, "0.5"), (0.913, "91.3"), (0.0, "0.0"),
                                           (0.12345, "12.3"), (0.99949, "99.9"), (0.99951, "100.0")])
    def test_confidence_format(self, conf, text):
        assert format_confidence(conf) == text

    @pytest.mark.parametrize("v,text", [(0.125, "0.13"), (0.135, "0.14"), (0.0, "0.00"), (1.0, "1.00"), (0.714, "0.71")])
    def test_coord_half_up(self, v, text):
        assert format_coord(v) == text

    def test_ordinal_must_be_positive(self, vg_detection):
        with pytest.raises(ValueError):
            encode_detection(vg_detection, 0)


class TestProtocol:
    def test_vg_protocol_line(self, vg_detection):
        block = attach_protocol(encode_detection(vg_detection, 1), bundled_kb().get("VG-402A"), 400)
        assert block.text == VG_BLOCK + "\n" + VG_PROTOCOL

    def test_short_body_untouched(self):
        r = ProcedureRecord("X-1", frozenset({"dirt"}), "t", "Procedure X-1: wash it. Then dry it.")
        assert protocol_excerpt(r, 500) == "Procedure X-1: wash it. Then dry it."

    def test_truncation_prefixes_id(self):
        # 9 sentences of exactly 100 chars, id only in the tenth
        sentence = ("Sand the bond area " * 6)[:99] + "."
        assert len(sentence) == 100
        body = " ".join([sentence] * 9) + " Finally procedure VG-402A applies."
        assert body.index("VG-402A") > 850
        r = ProcedureRecord("VG-402A", frozenset({"VG-missing-teeth"}), "t", body)
        excerpt = protocol_excerpt(r, 200)
        # last sentence end at or before 200 is the second one (chars 0..100, 101..201 -> ends at 201 > 200)
        assert excerpt == "procedure VG-402A applies: " + sentence
        assert "VG-402A" in excerpt

    def test_no_sentence_boundary(self):
        r = ProcedureRecord("Q-9", frozenset({"dirt"}), "t", "word " * 100)
        excerpt = protocol_excerpt(r, 22)
        assert excerpt == "procedure Q-9 applies: word word word word"


class TestAssemble:
    def test_structure(self, vg_detection):
        p = assemble_prompt([vg_detection], "SYS", "QUERY")
        assert p.segments == ("SYS", VG_BLOCK, "QUERY")
        assert p.rendered == "SYS\n\n" + VG_BLOCK + "\n\nQUERY"

    def test_with_retrieval(self, vg_detection):
        t = PromptTemplates.bundled()
        retriever = Retriever(bundled_kb(), lexical_embedder())
        p = assemble_prompt([vg_detection], t.system_preamble, t.query_suffix, retrieval=retriever)
        assert VG_BLOCK + "\n" + VG_PROTOCOL in p.rendered
        assert p.blocks[0].protocol.procedure_id == "VG-402A"

    def test_deterministic(self, vg_detection):
        t = PromptTemplates.bundled()
        runs = {
            assemble_prompt([vg_detection], t.system_preamble, t.query_suffix,
                            retrieval=Retriever(bundled_kb(), lexical_embedder())).rendered.encode()
            for _ in range(3)
        }
        assert len(runs) == 1

    def test_mismatched_retrieval(self, vg_detection):
        kb = bundled_kb()
        r = Retriever(kb, lexical_embedder())
        r.provider = lexical_embedder(64)
        with pytest.raises(ValueError, match="does not match"):
            assemble_prompt([vg_detection], "S", "Q", retrieval=r)

    def test_floor_and_empty(self, vg_detection):
        low = Detection(vg_detection.box, "dirt", 0.69)
        p = assemble_prompt([low], "S", "Q")
        assert p.segments == ("S", NO_DEFECTS_BLOCK, "Q") and p.blocks == ()
        at_floor = Detection(vg_detection.box, "dirt", 0.70)
        assert len(assemble_prompt([at_floor, low], "S", "Q").blocks) == 1

    def test_template_whitespace_normalized(self, vg_detection):
        p = assemble_prompt([vg_detection], "SYS\n", "\nQUERY\n")
        assert p.rendered == "SYS\n\n" + VG_BLOCK + "\n\nQUERY"

    def test_tie_break_by_centroid(self):
        a = Detection(OrientedBox.from_coords([(0.6, 0.6), (0.7, 0.6), (0.7, 0.7), (0.6, 0.7)]), "dirt", 0.8)
        b = Detection(OrientedBox.from_coords([(0.1, 0.6), (0.2, 0.6), (0.2, 0.7), (0.1, 0.7)]), "dirt", 0.8)
        c = Detection(OrientedBox.from_coords([(0.5, 0.1), (0.6, 0.1), (0.6, 0.2), (0.5, 0.2)]), "dirt", 0.8)
        p = assemble_prompt([a, b, c], "S", "Q", conf_floor=0.0)
        assert [blk.detection for blk in p.blocks] == [c, b, a]


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(0, 8))
def test_prompt_invariants(seed, n):
    rng = random.Random(seed)
    dets = [Detection(random_box(rng), rng.choice(CLASSES), round(rng.random(), 3)) for _ in range(n)]
    p = assemble_prompt(dets, "S", "Q", conf_floor=0.3)
    parsed = parse_blocks(p.rendered)
    assert len(parsed) == len(p.blocks) == sum(d.confidence >= 0.3 for d in dets)
    assert [b.ordinal for b in parsed] == list(range(1, len(parsed) + 1))
    confs = [b.detection.confidence for b in p.blocks]
    assert confs == sorted(confs, reverse=True)
    for pb, blk in zip(parsed, p.blocks):
        assert pb.grid is grid_cell(centroid(blk.detection.box))
        assert pb.class_label == blk.detection.class_label
    assert p.rendered == assemble_prompt(dets, "S", "Q", conf_floor=0.3).rendered
