import json
import textwrap

import numpy as np
import pytest

from divtraj.corpus import (
    EMBEDDING_VERBS,
    PREPOSITION_BY_CLASS,
    FramePattern,
    VerbLexicon,
    filter_frames,
    find_token_matches,
    generate_rc_pairs,
    iter_conllu,
    load_benchmark_pairs,
    load_conllu,
    merge_reviewed,
    read_review_decisions,
    read_review_queue,
    write_review_queue,
)


def parse_block(text):
    return list(iter_conllu(textwrap.dedent(text).strip().splitlines()))


# --- lexicon ---------------------------------------------------------------------

def test_bundled_lexicon_shape():
    lex = VerbLexicon.default()
    sizes = {c: len(lex.by_class(c)) for c in lex.classes()}
    assert sizes == {"to_dative": 35, "motion": 36, "reciprocal": 16, "spray_load": 15}
    counts = {c: sum(e.reference_count for e in lex.by_class(c)) for c in lex.classes()}
    assert counts == {"to_dative": 1841, "motion": 1942, "reciprocal": 465, "spray_load": 404}


def test_lexicon_form_index_and_irregulars():
    lex = VerbLexicon.default()
    assert lex.lemmas_for_form("gave") == ("give",)
    assert lex.lemmas_for_form("GAVE") == ("give",)
    assert "went" in lex["go"].forms
    assert lex.lemmas_for_form("nonword") == ()
    forms = lex.forms_for_classes(["reciprocal"])
    assert "spoke" in forms and "gave" not in forms


def test_lexicon_tsv_errors(tmp_path):
    bad = tmp_path / "lex.tsv"
    bad.write_text("give\tto_dative\tgave\n")
    with pytest.raises(ValueError, match="5 tab-separated"):
        VerbLexicon.from_tsv(bad)


# --- CoNLL-U loading ----------------------------------------------------------------

GOOD_BLOCK = """
    # sent_id = s1
    # text = Chipotle gave away free burritos to the students .
    1\tChipotle\tChipotle\tPROPN\t_\t_\t2\tnsubj\t_\t_
    2\tgave\tgive\tVERB\t_\t_\t0\troot\t_\t_
    3\taway\taway\tADV\t_\t_\t2\tadvmod\t_\t_
    4\tfree\tfree\tADJ\t_\t_\t5\tamod\t_\t_
    5\tburritos\tburrito\tNOUN\t_\t_\t2\tobj\t_\t_
    6\tto\tto\tADP\t_\t_\t8\tcase\t_\t_
    7\tthe\tthe\tDET\t_\t_\t8\tdet\t_\t_
    8\tstudents\tstudent\tNOUN\t_\t_\t2\tobl\t_\t_
    9\t.\t.\tPUNCT\t_\t_\t2\tpunct\t_\t_
"""


def test_conllu_parses_metadata_and_tokens():
    (sent,) = parse_block(GOOD_BLOCK)
    assert sent.sent_id == "s1"
    assert sent.text.startswith("Chipotle gave")
    assert len(sent.tokens) == 9
    assert sent.tokens[1].lemma == "give"
    assert sent.tokens[1].head == 0
    assert [t.form for t in sent.children(8)] == ["to", "the"]
    assert sent.subtree_indices(5) == [4, 5]
    assert sent.span_text([4, 5]) == "free burritos"


def test_conllu_skips_ranges_and_empty_nodes():
    block = """
        1\tWe\twe\tPRON\t_\t_\t2\tnsubj\t_\t_
        2-3\tdon't\t_\t_\t_\t_\t_\t_\t_\t_
        2\tdo\tdo\tAUX\t_\t_\t4\taux\t_\t_
        3\tnot\tnot\tPART\t_\t_\t4\tadvmod\t_\t_
        4\tgo\tgo\tVERB\t_\t_\t0\troot\t_\t_
        4.1\tgone\tgo\tVERB\t_\t_\t_\t_\t_\t_
    """
    (sent,) = parse_block(block)
    assert [t.form for t in sent.tokens] == ["We", "do", "not", "go"]


def test_conllu_malformed_blocks_are_skipped_with_diagnostics(tmp_path):
    content = textwrap.dedent("""
        1\tShort\tshort\tADJ\t2\tnsubj
        2\tline\tline\tNOUN\t_\t_\t0\troot\t_\t_

        1\tTwo\ttwo\tNUM\t_\t_\t0\troot\t_\t_
        2\troots\troot\tNOUN\t_\t_\t0\troot\t_\t_

        1\tFine\tfine\tADJ\t_\t_\t0\troot\t_\t_
    """).strip()
    path = tmp_path / "c.conllu"
    path.write_text(content + "\n")
    sentences, diagnostics = load_conllu(path)
    assert [s.tokens[0].form for s in sentences] == ["Fine"]
    assert diagnostics["malformed_token_line"] == 1
    assert diagnostics["malformed_tree"] == 1
    assert diagnostics["skipped_sentences"] == 2


def test_conllu_synthesizes_sentence_ids():
    block = "1\tHi\thi\tINTJ\t_\t_\t0\troot\t_\t_"
    (sent,) = parse_block(block)
    assert sent.sent_id == "s00001"
    assert sent.text == "Hi"


# --- frame filtering ------------------------------------------------------------------

REJECT_BLOCK = """
    # sent_id = s2
    # text = Optimus spoke to the crowd .
    1\tOptimus\tOptimus\tPROPN\t_\t_\t2\tnsubj\t_\t_
    2\tspoke\tspeak\tVERB\t_\t_\t0\troot\t_\t_
    3\tto\tto\tADP\t_\t_\t5\tcase\t_\t_
    4\tthe\tthe\tDET\t_\t_\t5\tdet\t_\t_
    5\tcrowd\tcrowd\tNOUN\t_\t_\t2\tobl\t_\t_
    6\t.\t.\tPUNCT\t_\t_\t2\tpunct\t_\t_
"""

REGEX_ONLY_BLOCK = """
    # sent_id = s3
    # text = She gave up and walked to the store .
    1\tShe\tshe\tPRON\t_\t_\t2\tnsubj\t_\t_
    2\tgave\tgive\tVERB\t_\t_\t0\troot\t_\t_
    3\tup\tup\tADP\t_\t_\t2\tcompound:prt\t_\t_
    4\tand\tand\tCCONJ\t_\t_\t5\tcc\t_\t_
    5\twalked\twalk\tVERB\t_\t_\t2\tconj\t_\t_
    6\tto\tto\tADP\t_\t_\t8\tcase\t_\t_
    7\tthe\tthe\tDET\t_\t_\t8\tdet\t_\t_
    8\tstore\tstore\tNOUN\t_\t_\t5\tobl\t_\t_
    9\t.\t.\tPUNCT\t_\t_\t2\tpunct\t_\t_
"""

# token column says "to the clerk" but the text field was mangled upstream,
# so the surface route cannot see the frame
PARSE_ONLY_BLOCK = """
    # sent_id = s4
    # text = She sold it , over yesterday .
    1\tShe\tshe\tPRON\t_\t_\t2\tnsubj\t_\t_
    2\tsold\tsell\tVERB\t_\t_\t0\troot\t_\t_
    3\tit\tit\tPRON\t_\t_\t2\tobj\t_\t_
    4\tto\tto\tADP\t_\t_\t6\tcase\t_\t_
    5\tthe\tthe\tDET\t_\t_\t6\tdet\t_\t_
    6\tclerk\tclerk\tNOUN\t_\t_\t2\tobl\t_\t_
    7\t.\t.\tPUNCT\t_\t_\t2\tpunct\t_\t_
"""

SPRAY_BLOCK = """
    # sent_id = s5
    # text = Ray and Devon then sprayed the table with the cleaner .
    1\tRay\tRay\tPROPN\t_\t_\t5\tnsubj\t_\t_
    2\tand\tand\tCCONJ\t_\t_\t3\tcc\t_\t_
    3\tDevon\tDevon\tPROPN\t_\t_\t1\tconj\t_\t_
    4\tthen\tthen\tADV\t_\t_\t5\tadvmod\t_\t_
    5\tsprayed\tspray\tVERB\t_\t_\t0\troot\t_\t_
    6\tthe\tthe\tDET\t_\t_\t7\tdet\t_\t_
    7\ttable\ttable\tNOUN\t_\t_\t5\tobj\t_\t_
    8\twith\twith\tADP\t_\t_\t10\tcase\t_\t_
    9\tthe\tthe\tDET\t_\t_\t10\tdet\t_\t_
    10\tcleaner\tcleaner\tNOUN\t_\t_\t5\tobl\t_\t_
    11\t.\t.\tPUNCT\t_\t_\t5\tpunct\t_\t_
"""


def test_filter_accepts_agreeing_routes():
    lex = VerbLexicon.default()
    sentences = parse_block(GOOD_BLOCK)
    pattern = FramePattern.for_classes(["to_dative", "motion"])
    result = filter_frames(sentences, lex, pattern, classes=["to_dative", "motion"])
    (rec,) = result.records
    assert rec.prefix_id == "s1@give"
    assert rec.text == "Chipotle gave away free burritos to the"
    assert rec.verb_id == "give"
    assert rec.class_id == "to_dative"
    assert rec.target_offset == 7
    assert not result.queue


def test_filter_rejects_wrong_preposition_for_class():
    lex = VerbLexicon.default()
    sentences = parse_block(REJECT_BLOCK)
    with_pattern = FramePattern.for_classes(["reciprocal", "spray_load"])
    result = filter_frames(sentences, lex, with_pattern, classes=["reciprocal", "spray_load"])
    assert not result.records and not result.queue
    to_pattern = FramePattern.for_classes(["to_dative", "motion"])
    result = filter_frames(sentences, lex, to_pattern, classes=["to_dative", "motion"])
    assert not result.records and not result.queue  # "speak" is not a to-class verb


def test_filter_accepts_with_frame():
    lex = VerbLexicon.default()
    result = filter_frames(
        parse_block(SPRAY_BLOCK), lex, FramePattern.for_classes(["spray_load", "reciprocal"])
    )
    (rec,) = result.records
    assert rec.text == "Ray and Devon then sprayed the table with the"
    assert rec.class_id == "spray_load"
    assert rec.target_offset == 9


def test_filter_disagreements_go_to_review():
    lex = VerbLexicon.default()
    pattern = FramePattern.for_classes(["to_dative", "motion"])
    result = filter_frames(
        parse_block(REGEX_ONLY_BLOCK) + parse_block(PARSE_ONLY_BLOCK), lex, pattern
    )
    # "walked to the store" passes both routes; "gave ... to the" only the regex;
    # the mangled-text sentence only the parse
    assert [r.prefix_id for r in result.records] == ["s3@walk"]
    assert result.records[0].text == "She gave up and walked to the"
    reasons = {(item.sentence_id, item.verb_id): item.reason for item in result.queue}
    assert reasons == {("s3", "give"): "regex_only", ("s4", "sell"): "parse_only"}
    assert result.diagnostics["regex_only"] == 1
    assert result.diagnostics["parse_only"] == 1


def test_review_queue_roundtrip_and_merge(tmp_path):
    lex = VerbLexicon.default()
    pattern = FramePattern.for_classes(["to_dative", "motion"])
    result = filter_frames(
        parse_block(REGEX_ONLY_BLOCK) + parse_block(PARSE_ONLY_BLOCK), lex, pattern
    )
    queue_path = write_review_queue(result.queue, tmp_path / "queue.tsv")
    loaded = read_review_queue(queue_path)
    assert loaded == result.queue

    decisions_path = tmp_path / "decisions.tsv"
    decisions_path.write_text(
        "sentence_id\tverb_id\tdecision\ns3\tgive\treject\ns4\tsell\taccept\n"
    )
    decisions = read_review_decisions(decisions_path)
    records, diagnostics = merge_reviewed(loaded, decisions)
    (rec,) = records
    assert rec.prefix_id == "s4@sell"
    assert rec.text == "She sold it to the"
    assert rec.target_offset == 5
    assert diagnostics["rejected"] == 1 and diagnostics["accepted"] == 1


def test_review_decisions_validation(tmp_path):
    path = tmp_path / "d.tsv"
    path.write_text("sentence_id\tverb_id\tdecision\ns1\tgive\tmaybe\n")
    with pytest.raises(ValueError, match="accept or reject"):
        read_review_decisions(path)


def test_frame_pattern_requires_shared_preposition():
    with pytest.raises(ValueError, match="share a preposition"):
        FramePattern.for_classes(["to_dative", "spray_load"])
    assert FramePattern.for_classes(["to_dative", "motion"]).preposition == "to"
    assert PREPOSITION_BY_CLASS["reciprocal"] == "with"


# --- templated relative-clause pairs -----------------------------------------------------

SELL_BLOCK = """
    # sent_id = r1
    # text = They sold the land yesterday .
    1\tThey\tthey\tPRON\t_\t_\t2\tnsubj\t_\t_
    2\tsold\tsell\tVERB\t_\t_\t0\troot\t_\t_
    3\tthe\tthe\tDET\t_\t_\t4\tdet\t_\t_
    4\tland\tland\tNOUN\t_\t_\t2\tobj\t_\t_
    5\tyesterday\tyesterday\tNOUN\t_\t_\t2\tobl:tmod\t_\t_
    6\t.\t.\tPUNCT\t_\t_\t2\tpunct\t_\t_
"""

SPOKE_BLOCK = """
    # sent_id = r2
    # text = Optimus spoke with reporters .
    1\tOptimus\tOptimus\tPROPN\t_\t_\t2\tnsubj\t_\t_
    2\tspoke\tspeak\tVERB\t_\t_\t0\troot\t_\t_
    3\twith\twith\tADP\t_\t_\t4\tcase\t_\t_
    4\treporters\treporter\tNOUN\t_\t_\t2\tobl\t_\t_
    5\t.\t.\tPUNCT\t_\t_\t2\tpunct\t_\t_
"""

NO_SUBJECT_BLOCK = """
    # sent_id = r3
    # text = Sold the house to a neighbor .
    1\tSold\tsell\tVERB\t_\t_\t0\troot\t_\t_
    2\tthe\tthe\tDET\t_\t_\t3\tdet\t_\t_
    3\thouse\thouse\tNOUN\t_\t_\t1\tobj\t_\t_
    4\tto\tto\tADP\t_\t_\t6\tcase\t_\t_
    5\ta\ta\tDET\t_\t_\t6\tdet\t_\t_
    6\tneighbor\tneighbor\tNOUN\t_\t_\t1\tobl\t_\t_
    7\t.\t.\tPUNCT\t_\t_\t1\tpunct\t_\t_
"""

# a parse with a discontinuous object subtree (modifier split off by "to")
SPLIT_OBJECT_BLOCK = """
    # sent_id = r4
    # text = Buyers sold gifts to rare friends .
    1\tBuyers\tbuyer\tNOUN\t_\t_\t2\tnsubj\t_\t_
    2\tsold\tsell\tVERB\t_\t_\t0\troot\t_\t_
    3\tgifts\tgift\tNOUN\t_\t_\t2\tobj\t_\t_
    4\tto\tto\tADP\t_\t_\t6\tcase\t_\t_
    5\trare\trare\tADJ\t_\t_\t3\tamod\t_\t_
    6\tfriends\tfriend\tNOUN\t_\t_\t2\tobl\t_\t_
    7\t.\t.\tPUNCT\t_\t_\t2\tpunct\t_\t_
"""


def test_rc_pairs_hit_template_targets():
    lex = VerbLexicon.default()
    sentences = parse_block(SELL_BLOCK) + parse_block(SPOKE_BLOCK)
    result = generate_rc_pairs(sentences, lex, embedding_verbs=("thinks",))
    by_id = {r.prefix_id: r for r in result.records}
    assert by_id["r1@sell|gap"].text == "The person that they sold the land to"
    assert by_id["r1@sell|nogap@thinks"].text == "The person thinks that they sold the land to"
    assert by_id["r2@speak|gap"].text == "The person that Optimus spoke with"
    assert by_id["r2@speak|nogap@thinks"].text == "The person thinks that Optimus spoke with"
    gap = by_id["r1@sell|gap"]
    assert gap.condition_id == "gap" and gap.class_id == "to_dative"
    assert gap.target_offset == len(gap.text.split())
    assert not result.discarded


def test_rc_pair_members_differ_by_embedding_verb_only():
    lex = VerbLexicon.default()
    result = generate_rc_pairs(parse_block(SELL_BLOCK), lex, embedding_verbs=("believes",))
    gap = next(r for r in result.records if r.condition_id == "gap")
    nogap = next(r for r in result.records if r.condition_id == "no_gap")
    gap_tokens = gap.text.split()
    nogap_tokens = nogap.text.split()
    assert nogap_tokens[2] == "believes"
    assert nogap_tokens[:2] + nogap_tokens[3:] == gap_tokens
    assert nogap.target_offset == gap.target_offset + 1


def test_rc_pairs_discard_unusable_parses():
    lex = VerbLexicon.default()
    sentences = parse_block(NO_SUBJECT_BLOCK) + parse_block(SPLIT_OBJECT_BLOCK)
    result = generate_rc_pairs(sentences, lex)
    assert not result.records
    assert result.discarded["missing_or_noncontiguous_subject"] == 1
    assert result.discarded["missing_or_noncontiguous_object"] == 1


def test_rc_pairs_validate_embedding_verbs():
    lex = VerbLexicon.default()
    assert len(EMBEDDING_VERBS) == 9
    with pytest.raises(ValueError, match="unknown embedding verb"):
        generate_rc_pairs(parse_block(SELL_BLOCK), lex, embedding_verbs=("wonders",))
    result = generate_rc_pairs(parse_block(SELL_BLOCK), lex, embedding_verbs=EMBEDDING_VERBS)
    no_gap = [r for r in result.records if r.condition_id == "no_gap"]
    assert len(no_gap) == 9


# --- benchmark pairs -------------------------------------------------------------------

def test_benchmark_pairs_loading(tmp_path):
    lines = [
        {"sentence_good": "The pedestrians question the doctors .",
         "sentence_bad": "The pedestrians wave the doctors ."},
        {"sentence_good": "A lot of patients respect Rachelle .",
         "sentence_bad": "A lot of patients smile Rachelle ."},
        {"sentence_good": "same sides", "sentence_bad": "same sides"},
        {"sentence_good": "Only one field here"},
    ]
    path = tmp_path / "pairs.jsonl"
    path.write_text("\n".join(json.dumps(x) for x in lines) + "\nnot json\n")
    result = load_benchmark_pairs(path)
    assert len(result.records) == 4
    first_good = result.records[0]
    assert first_good.prefix_id == "blimp00001|transitive"
    assert first_good.text == "The pedestrians question"
    assert first_good.verb_id == "question"
    assert first_good.class_id == "transitive"
    assert first_good.target_offset == 3
    first_bad = result.records[1]
    assert first_bad.prefix_id == "blimp00001|intransitive"
    assert first_bad.verb_id == "wave"
    assert result.skipped == {"no_divergence": 1, "missing_field": 1, "malformed_json": 1}


def test_benchmark_strips_trailing_punctuation_from_final_verb(tmp_path):
    path = tmp_path / "pairs.jsonl"
    path.write_text(json.dumps({
        "sentence_good": "The truck has fallen.",
        "sentence_bad": "The truck has remembered.",
    }) + "\n")
    result = load_benchmark_pairs(path)
    assert result.records[0].text == "The truck has fallen"
    assert result.records[0].verb_id == "fallen"


def test_benchmark_rejects_overlapping_verb_sets(tmp_path):
    path = tmp_path / "pairs.jsonl"
    rows = [
        {"sentence_good": "They see it .", "sentence_bad": "They sleep it ."},
        {"sentence_good": "They sleep now .", "sentence_bad": "They see now ."},
    ]
    path.write_text("\n".join(json.dumps(x) for x in rows) + "\n")
    with pytest.raises(ValueError, match="not disjoint"):
        load_benchmark_pairs(path)


# --- token-stream matching ------------------------------------------------------------

def test_find_token_matches_anchors():
    tokens = np.array([10, 1, 5, 6, 2, 11, 5, 6, 3, 3], dtype=np.int64)
    forms = {"give": [10, 11]}
    by_prep = find_token_matches(tokens, forms, prep_ids=[5], det_ids=[6])
    assert by_prep == {"give": [3, 7]}  # determiner positions
    by_verb = find_token_matches(tokens, forms, prep_ids=[5], det_ids=[6], anchor="verb")
    assert by_verb == {"give": [0, 5]}


def test_find_token_matches_respects_gap_and_order():
    gap = 20
    tokens = np.zeros(60, dtype=np.int64)
    tokens[0] = 10
    tokens[30] = 5          # preposition too far from the verb
    tokens[31] = 6
    assert find_token_matches(tokens, {"v": [10]}, [5], [6], max_gap=gap) == {"v": []}
    tokens[15] = 5          # within reach
    tokens[16] = 6
    assert find_token_matches(tokens, {"v": [10]}, [5], [6], max_gap=gap) == {"v": [16]}
    # determiner must immediately follow the preposition
    tokens2 = np.array([10, 5, 0, 6], dtype=np.int64)
    assert find_token_matches(tokens2, {"v": [10]}, [5], [6]) == {"v": []}


def test_find_token_matches_takes_first_frame_per_verb_occurrence():
    tokens = np.array([10, 5, 6, 0, 5, 6], dtype=np.int64)
    assert find_token_matches(tokens, {"v": [10]}, [5], [6]) == {"v": [2]}


def test_find_token_matches_rejects_ambiguous_ids():
    tokens = np.array([1, 2, 3], dtype=np.int64)
    with pytest.raises(ValueError, match="claimed by both"):
        find_token_matches(tokens, {"a": [7], "b": [7]}, [5], [6])
    with pytest.raises(ValueError, match="anchor"):
        find_token_matches(tokens, {"a": [7]}, [5], [6], anchor="middle")
