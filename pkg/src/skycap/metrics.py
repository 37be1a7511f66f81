"""Caption-quality metrics and prompt diagnostics.

Corpus-level BLEU and CIDEr-D operate on pre-tokenized captions (token
sequences, or strings treated as space-joined tokens). :func:`tokenize`
applies the language rules: 13a-style punctuation padding for Latin- and
Cyrillic-script languages, character splitting (with Latin runs kept whole)
for Chinese and Korean.

CIDEr-D follows the consensus-metric reference implementation exactly:
per-image document frequencies, tf-idf vectors over 1..4-grams, count
clipping against each reference, and a Gaussian length penalty with sigma 6,
averaged over n-gram orders and scaled by 10.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

from .languages import CHARACTER_TOKENIZED, check_language
from .store import EmbeddingVector, cosine_similarity

Tokens = Sequence[str]
CaptionLike = "str | Tokens"

_CIDER_MAX_N = 4
_CIDER_SIGMA = 6.0


@dataclass(frozen=True)
class TokenizedCaption:
    tokens: tuple[str, ...]
    language: str


# -- tokenization -------------------------------------------------------------

_PUNCT_PAD = re.compile(r"([\{-\~\[-\` -\&\(-\+\:-\@\/])")
_PERIOD_COMMA_BEFORE = re.compile(r"([^0-9])([\.,])")
_PERIOD_COMMA_AFTER = re.compile(r"([\.,])([^0-9])")
_DIGIT_DASH = re.compile(r"([0-9])(-)")
_LATIN_RUN = re.compile(r"[0-9A-Za-z]")


def _tokenize_13a(text: str) -> list[str]:
    norm = text.replace("<skipped>", "").replace("-\n", "").replace("\n", " ")
    if "&" in norm:
        norm = (
            norm.replace("&quot;", '"')
            .replace("&amp;", "&")
            .replace("&lt;", "<")
            .replace("&gt;", ">")
        )
    norm = f" {norm} "
    norm = _PUNCT_PAD.sub(r" \1 ", norm)
    norm = _PERIOD_COMMA_BEFORE.sub(r"\1 \2 ", norm)
    norm = _PERIOD_COMMA_AFTER.sub(r" \1 \2", norm)
    norm = _DIGIT_DASH.sub(r"\1 \2 ", norm)
    return norm.split()


def _tokenize_chars(text: str) -> list[str]:
    tokens: list[str] = []
    run: list[str] = []

    def flush() -> None:
        if run:
            tokens.append("".join(run))
            run.clear()

    for ch in text:
        if ch.isspace():
            flush()
        elif _LATIN_RUN.match(ch):
            run.append(ch)
        else:
            flush()
            tokens.append(ch)
    flush()
    return tokens


def tokenize(text: str, language: str) -> TokenizedCaption:
    """Tokenize ``text`` with the rule set for ``language``."""
    check_language(language)
    if language in CHARACTER_TOKENIZED:
        tokens = _tokenize_chars(text)
    else:
        tokens = _tokenize_13a(text)
    return TokenizedCaption(tokens=tuple(tokens), language=language)


def _as_tokens(caption: CaptionLike) -> tuple[str, ...]:
    if isinstance(caption, str):
        return tuple(caption.split())
    return tuple(caption)


def _ngram_counts(tokens: Tokens, max_n: int) -> Counter:
    counts: Counter = Counter()
    for n in range(1, max_n + 1):
        for i in range(len(tokens) - n + 1):
            counts[tuple(tokens[i : i + n])] += 1
    return counts


def _ngram_set(captions: Iterable[CaptionLike], n: int) -> set[tuple[str, ...]]:
    grams: set[tuple[str, ...]] = set()
    for caption in captions:
        tokens = _as_tokens(caption)
        grams.update(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))
    return grams


# -- BLEU ----------------------------------------------------------------------


def bleu(
    candidates: Sequence[CaptionLike],
    references: Sequence[Sequence[CaptionLike]],
    max_n: int = 4,
) -> float:
    """Corpus-level BLEU with clipped modified n-gram precision, uniform
    weights over 1..max_n, and brevity penalty.

    Reference length per item is the closest to the candidate length, ties
    resolved toward the shorter reference.
    """
    if not 1 <= max_n <= 4:
        raise ValueError("max_n must be between 1 and 4")
    if len(candidates) != len(references):
        raise ValueError(
            f"length mismatch: {len(candidates)} candidates, "
            f"{len(references)} reference lists"
        )
    if not candidates:
        raise ValueError("empty corpus")

    correct = [0] * max_n
    total = [0] * max_n
    sys_len = 0
    ref_len = 0
    for candidate, refs in zip(candidates, references):
        cand_tokens = _as_tokens(candidate)
        ref_token_lists = [_as_tokens(r) for r in refs]
        if not ref_token_lists:
            raise ValueError("every candidate needs at least one reference")
        sys_len += len(cand_tokens)
        ref_len += min(
            (abs(len(r) - len(cand_tokens)), len(r)) for r in ref_token_lists
        )[1]

        cand_counts = _ngram_counts(cand_tokens, max_n)
        max_ref_counts: Counter = Counter()
        for ref_tokens in ref_token_lists:
            for gram, count in _ngram_counts(ref_tokens, max_n).items():
                if count > max_ref_counts[gram]:
                    max_ref_counts[gram] = count
        for gram, count in cand_counts.items():
            n = len(gram)
            correct[n - 1] += min(count, max_ref_counts.get(gram, 0))
        for n in range(1, max_n + 1):
            total[n - 1] += max(0, len(cand_tokens) - n + 1)

    if any(t == 0 for t in total) or any(c == 0 for c in correct):
        return 0.0
    log_precision = sum(math.log(c / t) for c, t in zip(correct, total)) / max_n
    if sys_len == 0:
        return 0.0
    brevity = 1.0 if sys_len >= ref_len else math.exp(1.0 - ref_len / sys_len)
    return brevity * math.exp(log_precision)


# -- CIDEr-D -------------------------------------------------------------------


def _tfidf_vector(counts: Counter, doc_freq: Counter, log_corpus: float):
    vectors = [dict() for _ in range(_CIDER_MAX_N)]
    norms = [0.0] * _CIDER_MAX_N
    length = 0
    for gram, term_freq in counts.items():
        idf = log_corpus - math.log(max(1.0, doc_freq[gram]))
        n = len(gram) - 1
        weight = float(term_freq) * idf
        vectors[n][gram] = weight
        norms[n] += weight * weight
        if n == 1:
            # Reference-implementation convention: "length" is the bigram
            # total, which keeps length deltas identical to word counts.
            length += term_freq
    return vectors, [math.sqrt(x) for x in norms], length


def cider_d(
    candidates: Sequence[CaptionLike],
    references: Sequence[Sequence[CaptionLike]],
) -> float:
    """Corpus CIDEr-D score (tf-idf n-gram consensus, clipped, length-penalized)."""
    if len(candidates) != len(references):
        raise ValueError(
            f"length mismatch: {len(candidates)} candidates, "
            f"{len(references)} reference lists"
        )
    if not candidates:
        raise ValueError("empty corpus")

    cooked_candidates = [
        _ngram_counts(_as_tokens(c), _CIDER_MAX_N) for c in candidates
    ]
    cooked_references = []
    for refs in references:
        if not refs:
            raise ValueError("every candidate needs at least one reference")
        cooked_references.append(
            [_ngram_counts(_as_tokens(r), _CIDER_MAX_N) for r in refs]
        )

    doc_freq: Counter = Counter()
    for cooked_refs in cooked_references:
        seen = set()
        for ref_counts in cooked_refs:
            seen.update(ref_counts)
        for gram in seen:
            doc_freq[gram] += 1
    log_corpus = math.log(float(len(cooked_references)))

    scores = []
    for cand_counts, cooked_refs in zip(cooked_candidates, cooked_references):
        vec, norm, length = _tfidf_vector(cand_counts, doc_freq, log_corpus)
        per_n = [0.0] * _CIDER_MAX_N
        for ref_counts in cooked_refs:
            ref_vec, ref_norm, ref_length = _tfidf_vector(
                ref_counts, doc_freq, log_corpus
            )
            delta = float(length - ref_length)
            penalty = math.exp(-(delta**2) / (2.0 * _CIDER_SIGMA**2))
            for n in range(_CIDER_MAX_N):
                val = 0.0
                for gram, weight in vec[n].items():
                    val += min(weight, ref_vec[n].get(gram, 0.0)) * ref_vec[n].get(
                        gram, 0.0
                    )
                if norm[n] != 0.0 and ref_norm[n] != 0.0:
                    val /= norm[n] * ref_norm[n]
                per_n[n] += val * penalty
        score = sum(per_n) / _CIDER_MAX_N / len(cooked_refs) * 10.0
        scores.append(score)
    return sum(scores) / len(scores)


# -- embedding-based score -----------------------------------------------------


def ref_siglip_score(
    caption_emb: EmbeddingVector,
    image_emb: EmbeddingVector,
    reference_embs: Sequence[EmbeddingVector],
) -> float:
    """Harmonic mean of caption-image and best caption-reference similarity,
    cosines clipped at zero; 0.0 whenever either side vanishes."""
    if not reference_embs:
        raise ValueError("need at least one reference embedding")
    image_term = max(cosine_similarity(caption_emb, image_emb), 0.0)
    reference_term = max(
        max(cosine_similarity(caption_emb, ref) for ref in reference_embs), 0.0
    )
    if image_term == 0.0 or reference_term == 0.0:
        return 0.0
    return 2.0 * image_term * reference_term / (image_term + reference_term)


# -- prompt diagnostics --------------------------------------------------------


def ngram_overlap(
    prompt_captions: Sequence[CaptionLike],
    reference_captions: Sequence[CaptionLike],
    n: int,
) -> tuple[float, float]:
    """Precision/recall of unique n-grams shared between prompt and
    reference captions."""
    if n not in (1, 4):
        raise ValueError("n must be 1 or 4")
    prompt_grams = _ngram_set(prompt_captions, n)
    reference_grams = _ngram_set(reference_captions, n)
    shared = len(prompt_grams & reference_grams)
    precision = shared / len(prompt_grams) if prompt_grams else 0.0
    recall = shared / len(reference_grams) if reference_grams else 0.0
    return precision, recall


@dataclass(frozen=True)
class AttributionCounts:
    valid_in_prompt: int = 0
    invalid_in_prompt: int = 0
    valid_not_in_prompt: int = 0
    invalid_not_in_prompt: int = 0

    @property
    def total(self) -> int:
        return (
            self.valid_in_prompt
            + self.invalid_in_prompt
            + self.valid_not_in_prompt
            + self.invalid_not_in_prompt
        )

    def __add__(self, other: "AttributionCounts") -> "AttributionCounts":
        return AttributionCounts(
            self.valid_in_prompt + other.valid_in_prompt,
            self.invalid_in_prompt + other.invalid_in_prompt,
            self.valid_not_in_prompt + other.valid_not_in_prompt,
            self.invalid_not_in_prompt + other.invalid_not_in_prompt,
        )

    def to_json(self) -> dict:
        return {
            "valid_in_prompt": self.valid_in_prompt,
            "invalid_in_prompt": self.invalid_in_prompt,
            "valid_not_in_prompt": self.valid_not_in_prompt,
            "invalid_not_in_prompt": self.invalid_not_in_prompt,
        }


def prompt_attribution(
    generated: CaptionLike,
    references: Sequence[CaptionLike],
    prompt_captions: Sequence[CaptionLike],
) -> AttributionCounts:
    """Classify each unique generated 1-gram by reference validity and
    prompt membership."""
    generated_grams = {g[0] for g in _ngram_set([generated], 1)}
    reference_grams = {g[0] for g in _ngram_set(references, 1)}
    prompt_grams = {g[0] for g in _ngram_set(prompt_captions, 1)}
    counts = {"vi": 0, "ii": 0, "vo": 0, "io": 0}
    for gram in generated_grams:
        valid = gram in reference_grams
        in_prompt = gram in prompt_grams
        key = ("v" if valid else "i") + ("i" if in_prompt else "o")
        counts[key] += 1
    return AttributionCounts(
        valid_in_prompt=counts["vi"],
        invalid_in_prompt=counts["ii"],
        valid_not_in_prompt=counts["vo"],
        invalid_not_in_prompt=counts["io"],
    )


# -- reports -------------------------------------------------------------------


@dataclass(frozen=True)
class LanguageMetrics:
    bleu1: float
    bleu4: float
    cider_d: float
    ref_siglip: float | None = None

    def to_json(self) -> dict:
        return {
            "bleu1": self.bleu1,
            "bleu4": self.bleu4,
            "cider_d": self.cider_d,
            "ref_siglip": self.ref_siglip,
        }


@dataclass(frozen=True)
class OverlapStats:
    p1: float
    p4: float
    r1: float
    r4: float

    def to_json(self) -> dict:
        return {"p1": self.p1, "p4": self.p4, "r1": self.r1, "r4": self.r4}


@dataclass(frozen=True)
class MetricReport:
    per_language: dict[str, LanguageMetrics]
    overlap: "dict[str, OverlapStats] | None" = None
    attribution: "dict[str, AttributionCounts] | None" = None

    def to_json(self) -> dict:
        data: dict = {
            "per_language": {
                lang: metrics.to_json() for lang, metrics in self.per_language.items()
            }
        }
        if self.overlap is not None:
            data["overlap"] = {
                lang: stats.to_json() for lang, stats in self.overlap.items()
            }
        if self.attribution is not None:
            data["attribution"] = {
                lang: counts.to_json() for lang, counts in self.attribution.items()
            }
        return data

    def render_table(self) -> str:
        """Aligned plain-text table: BLEU1/BLEU4/CIDEr/SigLIP per language."""
        header = f"{'Language':<12}{'BLEU1':>8}{'BLEU4':>8}{'CIDEr':>8}{'SigLIP':>8}"
        lines = [header, "-" * len(header)]
        for lang in sorted(self.per_language):
            m = self.per_language[lang]
            siglip = f"{m.ref_siglip:>8.3f}" if m.ref_siglip is not None else f"{'-':>8}"
            lines.append(
                f"{lang:<12}{m.bleu1:>8.3f}{m.bleu4:>8.3f}{m.cider_d:>8.3f}{siglip}"
            )
        if self.overlap:
            lines.append("")
            header2 = f"{'Language':<12}{'P1':>8}{'P4':>8}{'R1':>8}{'R4':>8}"
            lines.append(header2)
            lines.append("-" * len(header2))
            for lang in sorted(self.overlap):
                o = self.overlap[lang]
                lines.append(
                    f"{lang:<12}{o.p1:>8.3f}{o.p4:>8.3f}{o.r1:>8.3f}{o.r4:>8.3f}"
                )
        if self.attribution:
            lines.append("")
            header3 = (
                f"{'Language':<12}{'Val/In':>10}{'Inv/In':>10}"
                f"{'Val/Out':>10}{'Inv/Out':>10}"
            )
            lines.append(header3)
            lines.append("-" * len(header3))
            for lang in sorted(self.attribution):
                a = self.attribution[lang]
                lines.append(
                    f"{lang:<12}{a.valid_in_prompt:>10}{a.invalid_in_prompt:>10}"
                    f"{a.valid_not_in_prompt:>10}{a.invalid_not_in_prompt:>10}"
                )
        return "\n".join(lines) + "\n"
