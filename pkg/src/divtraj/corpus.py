"""Corpus machinery: verb lexicon, parses, frame filtering, and pair stimuli.

Sentences are filtered through two independent routes, a surface regular
expression and a dependency-parse structural check; sentences passing exactly
one route land in a review queue (TSV) whose accept/reject decisions can be
merged on a second pass. Parsing itself is external: this module consumes
CoNLL-U.

Prefix ids follow the convention ``<pair base>|<condition...>``: the text
before the first ``|`` identifies a minimal-pair group, so standalone records
simply avoid the separator.
"""
from __future__ import annotations

import csv
import json
import re
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .dist_store import PrefixRecord

EMBEDDING_VERBS = (
    "thinks",
    "believes",
    "knows",
    "says",
    "claims",
    "announces",
    "states",
    "reports",
    "reveals",
)

PREPOSITION_BY_CLASS = {
    "to_dative": "to",
    "motion": "to",
    "reciprocal": "with",
    "spray_load": "with",
}


# --- lexicon ------------------------------------------------------------------

@dataclass(frozen=True)
class VerbEntry:
    lemma: str
    class_id: str
    past: str
    forms: tuple[str, ...]
    reference_count: int


class VerbLexicon:
    """Verb lemmas grouped into argument-structure classes, with inflections."""

    def __init__(self, entries: Sequence[VerbEntry]):
        self.entries: dict[str, VerbEntry] = {}
        for entry in entries:
            if entry.lemma in self.entries:
                raise ValueError(f"duplicate lemma {entry.lemma!r} in lexicon")
            self.entries[entry.lemma] = entry
        self._form_index: dict[str, tuple[str, ...]] = {}
        for entry in entries:
            for form in entry.forms:
                prev = self._form_index.get(form.lower(), ())
                self._form_index[form.lower()] = prev + (entry.lemma,)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, lemma: str) -> bool:
        return lemma in self.entries

    def __getitem__(self, lemma: str) -> VerbEntry:
        return self.entries[lemma]

    def classes(self) -> list[str]:
        return sorted({e.class_id for e in self.entries.values()})

    def by_class(self, class_id: str) -> list[VerbEntry]:
        found = [e for e in self.entries.values() if e.class_id == class_id]
        if not found:
            raise KeyError(f"no lexicon entries for class {class_id!r}")
        return sorted(found, key=lambda e: e.lemma)

    def lemmas_for_form(self, form: str) -> tuple[str, ...]:
        return self._form_index.get(form.lower(), ())

    def forms_for_classes(self, class_ids: Iterable[str]) -> list[str]:
        wanted = set(class_ids)
        forms = {
            form
            for entry in self.entries.values()
            if entry.class_id in wanted
            for form in entry.forms
        }
        return sorted(forms)

    @classmethod
    def from_tsv(cls, path: str | Path) -> "VerbLexicon":
        entries = []
        with open(path, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line or line.startswith("#"):
                    continue
                parts = line.split("\t")
                if len(parts) != 5:
                    raise ValueError(f"{path}:{line_no}: expected 5 tab-separated fields")
                lemma, class_id, past, forms, count = parts
                entries.append(
                    VerbEntry(
                        lemma=lemma,
                        class_id=class_id,
                        past=past,
                        forms=tuple(forms.split("|")),
                        reference_count=int(count),
                    )
                )
        return cls(entries)

    @classmethod
    def default(cls) -> "VerbLexicon":
        with resources.as_file(
            resources.files("divtraj.data").joinpath("verb_lexicon.tsv")
        ) as path:
            return cls.from_tsv(path)


# --- CoNLL-U ------------------------------------------------------------------

@dataclass(frozen=True)
class ParsedToken:
    idx: int  # 1-based position
    form: str
    lemma: str
    upos: str
    head: int  # 0 means root
    deprel: str


@dataclass(frozen=True)
class ParsedSentence:
    sent_id: str
    text: str
    tokens: tuple[ParsedToken, ...]

    def children(self, head_idx: int) -> list[ParsedToken]:
        return [t for t in self.tokens if t.head == head_idx]

    def subtree_indices(self, idx: int) -> list[int]:
        out = [idx]
        frontier = [idx]
        while frontier:
            nxt = [t.idx for t in self.tokens if t.head in frontier]
            frontier = nxt
            out.extend(nxt)
        return sorted(out)

    def span_text(self, indices: Sequence[int]) -> str:
        by_idx = {t.idx: t for t in self.tokens}
        return " ".join(by_idx[i].form for i in indices)


def iter_conllu(lines: Iterable[str], diagnostics: Counter | None = None) -> Iterator[ParsedSentence]:
    """Parse CoNLL-U sentence blocks; malformed blocks are skipped and counted.

    Multi-word-token ranges and empty nodes are ignored. A block is malformed
    when a token line has the wrong arity, a head index is out of range, or
    the tree does not have exactly one root.
    """
    diagnostics = diagnostics if diagnostics is not None else Counter()
    buf: list[str] = []
    meta: dict[str, str] = {}
    count = 0

    def flush() -> ParsedSentence | None:
        nonlocal count
        if not buf:
            meta.clear()
            return None
        count += 1
        sent_id = meta.get("sent_id", f"s{count:05d}")
        tokens = []
        ok = True
        for raw in buf:
            cols = raw.split("\t")
            if len(cols) != 10:
                diagnostics["malformed_token_line"] += 1
                ok = False
                break
            if "-" in cols[0] or "." in cols[0]:
                continue  # multi-word token range or empty node
            try:
                idx = int(cols[0])
                head = int(cols[6])
            except ValueError:
                diagnostics["malformed_token_line"] += 1
                ok = False
                break
            tokens.append(
                ParsedToken(idx=idx, form=cols[1], lemma=cols[2], upos=cols[3], head=head, deprel=cols[7])
            )
        buf.clear()
        if not ok or not tokens:
            diagnostics["skipped_sentences"] += 1
            meta.clear()
            return None
        n = len(tokens)
        roots = [t for t in tokens if t.head == 0]
        if len(roots) != 1 or any(not (0 <= t.head <= n) for t in tokens) or [t.idx for t in tokens] != list(range(1, n + 1)):
            diagnostics["malformed_tree"] += 1
            diagnostics["skipped_sentences"] += 1
            meta.clear()
            return None
        text = meta.get("text") or " ".join(t.form for t in tokens)
        meta.clear()
        return ParsedSentence(sent_id=sent_id, text=text, tokens=tuple(tokens))

    for line in lines:
        line = line.rstrip("\n")
        if not line:
            sent = flush()
            if sent is not None:
                yield sent
            continue
        if line.startswith("#"):
            if "=" in line:
                key, _, value = line[1:].partition("=")
                meta[key.strip()] = value.strip()
            continue
        buf.append(line)
    sent = flush()
    if sent is not None:
        yield sent


def load_conllu(path: str | Path) -> tuple[list[ParsedSentence], Counter]:
    diagnostics: Counter = Counter()
    with open(path, "r", encoding="utf-8") as fh:
        sentences = list(iter_conllu(fh, diagnostics))
    return sentences, diagnostics


# --- frame filtering ----------------------------------------------------------

@dataclass(frozen=True)
class FramePattern:
    """Prepositional frame "... VERB ... PREP the <slot>" for a class family."""

    pattern_id: str
    preposition: str
    determiner: str = "the"

    @classmethod
    def for_classes(cls, class_ids: Sequence[str]) -> "FramePattern":
        preps = {PREPOSITION_BY_CLASS[c] for c in class_ids}
        if len(preps) != 1:
            raise ValueError(
                f"classes {list(class_ids)} do not share a preposition: {sorted(preps)}"
            )
        prep = preps.pop()
        return cls(pattern_id=f"{prep}-frame", preposition=prep)


@dataclass(frozen=True)
class ReviewItem:
    sentence_id: str
    verb_id: str
    class_id: str
    reason: str  # "regex_only" | "parse_only"
    prefix_text: str
    text: str


@dataclass
class FrameFilterResult:
    records: list[PrefixRecord]
    queue: list[ReviewItem]
    diagnostics: Counter


def _frame_regex(forms: Sequence[str], pattern: FramePattern) -> re.Pattern:
    # the frame sits in a lookahead so that two verbs sharing one
    # "PREP DET ..." tail both count as surface hits
    alt = "|".join(re.escape(f) for f in sorted(forms, key=len, reverse=True))
    return re.compile(
        rf"\b(?P<verb>{alt})\b"
        rf"(?=(?P<frame>.*?\b{pattern.preposition}\s+{pattern.determiner})\s+\w)",
        re.IGNORECASE,
    )


def _parse_route(
    sentence: ParsedSentence, lemma: str, pattern: FramePattern
) -> tuple[str, int] | None:
    """Prefix text and token count when the parse licenses the frame for ``lemma``."""
    by_idx = {t.idx: t for t in sentence.tokens}
    for tok in sentence.tokens:
        if tok.lemma != lemma or tok.upos != "VERB":
            continue
        for pos in range(tok.idx, len(sentence.tokens)):  # positions after the verb
            prep = sentence.tokens[pos]
            if prep.form.lower() != pattern.preposition:
                continue
            # the preposition must hang off the verb directly or via its noun
            governed = prep.head == tok.idx or (
                prep.head in by_idx and by_idx[prep.head].head == tok.idx
            )
            if not governed:
                continue
            det_pos = pos + 1
            if det_pos >= len(sentence.tokens):
                continue
            det = sentence.tokens[det_pos]
            if det.form.lower() != pattern.determiner:
                continue
            if det_pos + 1 >= len(sentence.tokens):
                continue  # no prediction slot after the determiner
            prefix_tokens = [t.form for t in sentence.tokens[: det_pos + 1]]
            return " ".join(prefix_tokens), len(prefix_tokens)
    return None


def filter_frames(
    sentences: Iterable[ParsedSentence],
    lexicon: VerbLexicon,
    pattern: FramePattern,
    classes: Sequence[str] | None = None,
) -> FrameFilterResult:
    """Dual-route frame filter.

    A sentence yields a record for a lexicon verb only when both the surface
    regex and the dependency-parse constraints recognize the frame; single
    -route hits go to the review queue.
    """
    if classes is None:
        classes = [c for c, p in PREPOSITION_BY_CLASS.items() if p == pattern.preposition]
    eligible = {
        entry.lemma: entry
        for class_id in classes
        for entry in lexicon.by_class(class_id)
    }
    for class_id in classes:
        if PREPOSITION_BY_CLASS.get(class_id) != pattern.preposition:
            raise ValueError(
                f"class {class_id!r} does not use preposition {pattern.preposition!r}"
            )
    forms = lexicon.forms_for_classes(classes)
    regex = _frame_regex(forms, pattern)

    records: list[PrefixRecord] = []
    queue: list[ReviewItem] = []
    diagnostics: Counter = Counter()
    for sentence in sentences:
        diagnostics["sentences"] += 1
        regex_hits: dict[str, str] = {}
        for match in regex.finditer(sentence.text):
            for lemma in lexicon.lemmas_for_form(match.group("verb")):
                if lemma in eligible and lemma not in regex_hits:
                    regex_hits[lemma] = sentence.text[: match.end("frame")]
        parse_hits: dict[str, tuple[str, int]] = {}
        for lemma in eligible:
            hit = _parse_route(sentence, lemma, pattern)
            if hit is not None:
                parse_hits[lemma] = hit
        for lemma in sorted(set(regex_hits) | set(parse_hits)):
            entry = eligible[lemma]
            if lemma in regex_hits and lemma in parse_hits:
                prefix_text, n_tokens = parse_hits[lemma]
                records.append(
                    PrefixRecord(
                        prefix_id=f"{sentence.sent_id}@{lemma}",
                        text=prefix_text,
                        verb_id=lemma,
                        class_id=entry.class_id,
                        condition_id=None,
                        target_offset=n_tokens,
                    )
                )
                diagnostics["accepted"] += 1
            else:
                reason = "parse_only" if lemma in parse_hits else "regex_only"
                prefix_text = parse_hits[lemma][0] if lemma in parse_hits else regex_hits[lemma]
                queue.append(
                    ReviewItem(
                        sentence_id=sentence.sent_id,
                        verb_id=lemma,
                        class_id=entry.class_id,
                        reason=reason,
                        prefix_text=prefix_text,
                        text=sentence.text,
                    )
                )
                diagnostics[reason] += 1
    return FrameFilterResult(records=records, queue=queue, diagnostics=diagnostics)


REVIEW_FIELDS = ["sentence_id", "verb_id", "class_id", "reason", "prefix_text", "text"]


def write_review_queue(items: Sequence[ReviewItem], path: str | Path) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = out.with_name(out.name + ".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(REVIEW_FIELDS)
        for item in items:
            writer.writerow(
                [item.sentence_id, item.verb_id, item.class_id, item.reason, item.prefix_text, item.text]
            )
    tmp.replace(out)
    return out


def read_review_queue(path: str | Path) -> list[ReviewItem]:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter="\t")
        header = next(reader)
        if header != REVIEW_FIELDS:
            raise ValueError(f"unexpected review queue header in {path}: {header}")
        return [ReviewItem(*row) for row in reader]


def read_review_decisions(path: str | Path) -> dict[tuple[str, str], str]:
    """Decisions TSV: sentence_id, verb_id, decision (accept|reject)."""
    out: dict[tuple[str, str], str] = {}
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter="\t")
        header = next(reader)
        if header != ["sentence_id", "verb_id", "decision"]:
            raise ValueError(f"unexpected decisions header in {path}: {header}")
        for sid, verb, decision in reader:
            decision = decision.strip().lower()
            if decision not in ("accept", "reject"):
                raise ValueError(f"decision for ({sid}, {verb}) must be accept or reject")
            out[(sid, verb)] = decision
    return out


def merge_reviewed(
    items: Sequence[ReviewItem], decisions: dict[tuple[str, str], str]
) -> tuple[list[PrefixRecord], Counter]:
    """Turn accepted review-queue items into records on a second pass."""
    records = []
    diagnostics: Counter = Counter()
    for item in items:
        decision = decisions.get((item.sentence_id, item.verb_id))
        if decision is None:
            diagnostics["undecided"] += 1
            continue
        if decision == "reject":
            diagnostics["rejected"] += 1
            continue
        if not item.prefix_text:
            diagnostics["accepted_without_prefix"] += 1
            continue
        records.append(
            PrefixRecord(
                prefix_id=f"{item.sentence_id}@{item.verb_id}",
                text=item.prefix_text,
                verb_id=item.verb_id,
                class_id=item.class_id,
                condition_id=None,
                target_offset=len(item.prefix_text.split()),
            )
        )
        diagnostics["accepted"] += 1
    return records, diagnostics


# --- templated relative-clause pairs -------------------------------------------

@dataclass
class RcPairResult:
    records: list[PrefixRecord]
    discarded: Counter


def _argument_span(sentence: ParsedSentence, verb: ParsedToken, deprels: set[str]) -> tuple[str, ParsedToken] | None:
    """Contiguous subtree text of the verb's first child bearing one of ``deprels``."""
    by_idx = {t.idx: t for t in sentence.tokens}
    for child in sentence.children(verb.idx):
        if child.deprel.split(":")[0] in deprels:
            indices = sentence.subtree_indices(child.idx)
            if indices != list(range(indices[0], indices[-1] + 1)):
                return None  # non-contiguous span
            return sentence.span_text(indices), by_idx[indices[0]]
    return None


def generate_rc_pairs(
    sentences: Iterable[ParsedSentence],
    lexicon: VerbLexicon,
    embedding_verbs: Sequence[str] = ("thinks",),
    classes: Sequence[str] = ("to_dative", "reciprocal"),
) -> RcPairResult:
    """Template relative-clause minimal pairs from parsed source sentences.

    For each matched verb: one gap-condition prefix ("The person that SUBJ
    PAST [OBJ] PREP") and one no-gap prefix per embedding verb ("The person
    EMB that SUBJ PAST [OBJ] PREP"). Sentences without a contiguous subject
    (or object, for to-dative sources) are discarded and counted.
    """
    for emb in embedding_verbs:
        if emb not in EMBEDDING_VERBS:
            raise ValueError(f"unknown embedding verb {emb!r}; pick from {EMBEDDING_VERBS}")
    records: list[PrefixRecord] = []
    discarded: Counter = Counter()
    for sentence in sentences:
        seen: set[str] = set()
        for tok in sentence.tokens:
            lemma = tok.lemma
            if lemma in seen or lemma not in lexicon or tok.upos != "VERB":
                continue
            entry = lexicon[lemma]
            if entry.class_id not in classes:
                continue
            seen.add(lemma)
            subj = _argument_span(sentence, tok, {"nsubj"})
            if subj is None:
                discarded["missing_or_noncontiguous_subject"] += 1
                continue
            subj_text, subj_first = subj
            if subj_first.upos != "PROPN":
                parts = subj_text.split(" ")
                parts[0] = parts[0].lower()
                subj_text = " ".join(parts)
            prep = PREPOSITION_BY_CLASS[entry.class_id]
            if entry.class_id == "to_dative":
                obj = _argument_span(sentence, tok, {"obj", "dobj"})
                if obj is None:
                    discarded["missing_or_noncontiguous_object"] += 1
                    continue
                obj_text, _ = obj
                body = f"that {subj_text} {entry.past} {obj_text} {prep}"
            else:
                body = f"that {subj_text} {entry.past} {prep}"
            base = f"{sentence.sent_id}@{lemma}"
            gap_text = f"The person {body}"
            records.append(
                PrefixRecord(
                    prefix_id=f"{base}|gap",
                    text=gap_text,
                    verb_id=lemma,
                    class_id=entry.class_id,
                    condition_id="gap",
                    target_offset=len(gap_text.split()),
                )
            )
            for emb in embedding_verbs:
                nogap_text = f"The person {emb} {body}"
                records.append(
                    PrefixRecord(
                        prefix_id=f"{base}|nogap@{emb}",
                        text=nogap_text,
                        verb_id=lemma,
                        class_id=entry.class_id,
                        condition_id="no_gap",
                        target_offset=len(nogap_text.split()),
                    )
                )
    return RcPairResult(records=records, discarded=discarded)


# --- benchmark minimal pairs ----------------------------------------------------

@dataclass
class BenchmarkResult:
    records: list[PrefixRecord]
    skipped: Counter


def load_benchmark_pairs(
    path: str | Path,
    condition_names: tuple[str, str] = ("transitive", "intransitive"),
) -> BenchmarkResult:
    """Load line-delimited JSON minimal pairs and truncate after the target verb.

    Each line holds ``sentence_good``/``sentence_bad`` differing at exactly
    one word, the target verb; the grammatical member maps to the first
    condition name. Records lacking a divergence point or required fields
    are skipped with diagnostics, and the two condition verb sets must stay
    disjoint.
    """
    records: list[PrefixRecord] = []
    skipped: Counter = Counter()
    verbs_by_condition: dict[str, set[str]] = {c: set() for c in condition_names}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError:
                skipped["malformed_json"] += 1
                continue
            good, bad = raw.get("sentence_good"), raw.get("sentence_bad")
            if not isinstance(good, str) or not isinstance(bad, str):
                skipped["missing_field"] += 1
                continue
            tokens_g, tokens_b = good.split(), bad.split()
            diverge = next(
                (k for k, (a, b) in enumerate(zip(tokens_g, tokens_b)) if a != b), None
            )
            if diverge is None:
                skipped["no_divergence"] += 1
                continue
            base = f"blimp{line_no:05d}"
            for tokens, cond in ((tokens_g, condition_names[0]), (tokens_b, condition_names[1])):
                verb_surface = tokens[diverge].rstrip(".,!?;:").lower()
                prefix = " ".join(tokens[: diverge] + [verb_surface])
                verbs_by_condition[cond].add(verb_surface)
                records.append(
                    PrefixRecord(
                        prefix_id=f"{base}|{cond}",
                        text=prefix,
                        verb_id=verb_surface,
                        class_id=cond,
                        condition_id=cond,
                        target_offset=diverge + 1,
                    )
                )
    overlap = verbs_by_condition[condition_names[0]] & verbs_by_condition[condition_names[1]]
    if overlap:
        raise ValueError(
            f"verb sets for {condition_names} are not disjoint: {sorted(overlap)[:5]}"
        )
    return BenchmarkResult(records=records, skipped=skipped)


# --- token-stream frame matching ------------------------------------------------

def find_token_matches(
    tokens: np.ndarray,
    verb_form_ids: dict[str, Iterable[int]],
    prep_ids: Iterable[int],
    det_ids: Iterable[int],
    max_gap: int = 20,
    anchor: str = "preposition",
) -> dict[str, list[int]]:
    """Locate "VERB ... PREP DET" frames in a raw token-id stream.

    Returns per-verb global match positions for the count baseline: with
    ``anchor="preposition"`` the recorded position is the determiner (the
    noun-phrase start, so count windows begin right after it); with
    ``anchor="verb"`` it is the verb token itself.
    """
    if anchor not in ("preposition", "verb"):
        raise ValueError(f"anchor must be 'preposition' or 'verb', got {anchor!r}")
    tokens = np.asarray(tokens, dtype=np.int64)
    id_to_verb: dict[int, str] = {}
    for verb, ids in verb_form_ids.items():
        for tid in ids:
            tid = int(tid)
            if tid in id_to_verb and id_to_verb[tid] != verb:
                raise ValueError(
                    f"token id {tid} is claimed by both {id_to_verb[tid]!r} and {verb!r}"
                )
            id_to_verb[tid] = verb
    prep_set = {int(i) for i in prep_ids}
    det_set = {int(i) for i in det_ids}
    verb_mask = np.isin(tokens, list(id_to_verb))
    matches: dict[str, list[int]] = {v: [] for v in verb_form_ids}
    n = tokens.size
    for pos in np.nonzero(verb_mask)[0]:
        pos = int(pos)
        for j in range(pos + 1, min(pos + 1 + max_gap, n - 1)):
            if int(tokens[j]) in prep_set and int(tokens[j + 1]) in det_set:
                matches[id_to_verb[int(tokens[pos])]].append(pos if anchor == "verb" else j + 1)
                break
    return matches
