"""Repetition-free prompt content selection and prompt rendering.

Selection walks k-combinations of the retrieved captions in descending
total-score order and, for each, tries to complete N few-shot examples from
the ranked similar images, masking every caption text already placed in the
prompt. The first combination that completes wins. If no combination can
complete N examples, the example budget degrades one step at a time (down
to zero) with a structured warning.

Rendering is purely textual: identical inputs produce byte-identical
prompts.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Callable

from .errors import InsufficientCandidatesError
from .languages import language_name
from .pool import CandidatePool, PoolCaption, normalize_caption_text

logger = logging.getLogger(__name__)

MODE_IMAGE_BLIND = "image_blind"
MODE_IMAGE_AWARE = "image_aware"
MODE_NO_RETRIEVAL = "no_retrieval_baseline"
MODES = (MODE_IMAGE_BLIND, MODE_IMAGE_AWARE, MODE_NO_RETRIEVAL)

# A gold resolver maps a gold candidate to (source_text, prompt_text), or
# None when the candidate cannot appear in the prompt (e.g. no translation
# for the target language). Both texts count as "used" once selected, so a
# caption cannot re-enter the prompt under either form.
GoldResolver = Callable[[PoolCaption], "tuple[str, str] | None"]


def english_gold_resolver(candidate: PoolCaption) -> tuple[str, str]:
    return (candidate.text, candidate.text)


@dataclass(frozen=True)
class FewShotExample:
    image_id: str
    retrieved_captions: tuple[str, ...]
    gold_caption: str
    gold_caption_id: str


@dataclass(frozen=True)
class SelectionResult:
    examples: tuple[FewShotExample, ...]
    input_captions: tuple[str, ...]
    combination: tuple[int, ...]
    n_requested: int
    n_effective: int
    degraded: bool


@dataclass(frozen=True)
class PromptSpec:
    mode: str
    language: str
    n_examples: int
    k_captions: int
    examples: tuple[FewShotExample, ...]
    input_captions: tuple[str, ...]
    rendered: str

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "language": self.language,
            "N": self.n_examples,
            "k": self.k_captions,
            "examples": [
                {
                    "image_id": ex.image_id,
                    "retrieved_captions": list(ex.retrieved_captions),
                    "gold_caption": ex.gold_caption,
                    "gold_caption_id": ex.gold_caption_id,
                }
                for ex in self.examples
            ],
            "input_captions": list(self.input_captions),
            "rendered": self.rendered,
        }

    @classmethod
    def from_json(cls, data: dict) -> "PromptSpec":
        return cls(
            mode=data["mode"],
            language=data["language"],
            n_examples=data["N"],
            k_captions=data["k"],
            examples=tuple(
                FewShotExample(
                    image_id=ex["image_id"],
                    retrieved_captions=tuple(ex["retrieved_captions"]),
                    gold_caption=ex["gold_caption"],
                    gold_caption_id=ex.get("gold_caption_id", ""),
                )
                for ex in data["examples"]
            ),
            input_captions=tuple(data["input_captions"]),
            rendered=data["rendered"],
        )


# -- selection ---------------------------------------------------------------


def _complete_examples(
    pool: CandidatePool,
    used: set[str],
    n_examples: int,
    k_captions: int,
    gold_resolver: GoldResolver,
) -> tuple[FewShotExample, ...] | None:
    """Try to finish ``n_examples`` examples given already-used texts.

    Walks images in rank order; each image contributes at most one example,
    built from its first unused gold caption and the top-k of its similar
    captions that survive the dynamic mask.
    """
    examples: list[FewShotExample] = []
    for image in pool.similar_images:
        if len(examples) == n_examples:
            break
        chosen = None
        for gold in image.gold_captions:
            resolved = gold_resolver(gold)
            if resolved is None:
                continue
            source_norm = normalize_caption_text(resolved[0])
            prompt_norm = normalize_caption_text(resolved[1])
            if source_norm in used or prompt_norm in used:
                continue
            chosen = (gold, source_norm, prompt_norm, resolved[1])
            break
        if chosen is None:
            continue
        gold_cap, source_norm, prompt_norm, gold_text = chosen
        tentative = used | {source_norm, prompt_norm}
        survivors: list[PoolCaption] = []
        for cap in image.similar_captions:
            text_norm = normalize_caption_text(cap.text)
            if text_norm in tentative:
                continue
            tentative.add(text_norm)
            survivors.append(cap)
            if len(survivors) == k_captions:
                break
        if len(survivors) < k_captions:
            continue
        used = tentative
        examples.append(
            FewShotExample(
                image_id=image.image_id,
                retrieved_captions=tuple(c.text for c in survivors),
                gold_caption=gold_text,
                gold_caption_id=gold_cap.caption_id,
            )
        )
    if len(examples) < n_examples:
        return None
    return tuple(examples)


def select_prompt_content(
    pool: CandidatePool,
    n_examples: int,
    k_captions: int,
    gold_resolver: GoldResolver = english_gold_resolver,
) -> SelectionResult:
    """Pick the input-caption combination and few-shot examples for a prompt.

    Combinations of ``k_captions`` retrieved captions are tried in descending
    total-score order (ties resolved by lexicographic index order); the first
    one from which ``n_examples`` repetition-free examples can be completed
    is returned.
    """
    if n_examples < 0 or k_captions < 1:
        raise ValueError("need n_examples >= 0 and k_captions >= 1")
    candidates = pool.retrieved_captions
    if k_captions > len(candidates):
        raise InsufficientCandidatesError(
            f"insufficient candidates: need {k_captions} retrieved captions, "
            f"pool has {len(candidates)}"
        )

    combos = sorted(
        itertools.combinations(range(len(candidates)), k_captions),
        key=lambda combo: (-sum(candidates[i].score for i in combo), combo),
    )

    for target_n in range(n_examples, -1, -1):
        for combo in combos:
            combo_norms = [normalize_caption_text(candidates[i].text) for i in combo]
            if len(set(combo_norms)) < len(combo_norms):
                continue
            examples = _complete_examples(
                pool, set(combo_norms), target_n, k_captions, gold_resolver
            )
            if examples is None:
                continue
            if target_n < n_examples:
                logger.warning(
                    "prompt for %r degraded from %d to %d few-shot examples: "
                    "no repetition-free selection exists at the requested size",
                    pool.query_image_id,
                    n_examples,
                    target_n,
                )
            return SelectionResult(
                examples=examples,
                input_captions=tuple(candidates[i].text for i in combo),
                combination=combo,
                n_requested=n_examples,
                n_effective=target_n,
                degraded=target_n < n_examples,
            )
    raise InsufficientCandidatesError(
        "no repetition-free caption combination exists, even without examples"
    )


# -- rendering ---------------------------------------------------------------

_INSTRUCTION = (
    "You are an intelligent image captioning bot tasked with describing aerial "
    "images with short and concise descriptions in the {language} language. To "
    "generate a short one-sentence caption that accurately describes an input "
    "image in {language}, you should analyze {focus}the information present in a "
    "set of English captions associated to other images that are similar to the "
    "input, attending to common features in these descriptions and avoiding "
    "spurious information resulting from errors in the process of retrieving "
    "similar examples."
)
_IMAGE_AWARE_FOCUS = "the input image, plus "

_FIRST_EXAMPLE_INTRO = (
    "To illustrate how the captioning task should be performed, consider that an "
    "aerial image that is highly similar to the input that you need to process is "
    "associated to the following set of different descriptions:"
)
_NEXT_EXAMPLE_INTRO = (
    "In another example illustrating how the captioning task should be performed, "
    "consider that the aerial image is associated to the following set of "
    "descriptions:"
)
_GOLD_LINE = (
    "A short and concise caption that can be used to describe this image in "
    "{language} would be: {gold}"
)
_INPUT_INTRO = (
    "For the input that you need to process, consider that similar images are "
    "associated to the following captions:"
)
_CLOSING = (
    "Notice that you should generate a description specifically in {language} and "
    "not in any other language, from the complete instructions that are being "
    "provided to you. The caption that is to be generated should be direct and "
    "concise, consisting of a single sentence and featuring only accurate "
    "information about the input. Be particularly careful when describing object "
    "properties such as color or size, or when mentioning objects that are seldom "
    "encountered on aerial images, given that this information is more likely to "
    "correspond to mistakes derived from incorrect similarity assessments."
)
_REQUEST = (
    "Reflecting upon all the previous information, a short and concise caption "
    "that can describe the input image in {language} is:"
)


def _caption_lines(texts: tuple[str, ...]) -> str:
    return "\n".join(f"CAPTION {i}: {text}" for i, text in enumerate(texts, start=1))


def render_caption_prompt(spec: PromptSpec) -> str:
    """Render the four-section captioning prompt for a spec's content fields."""
    if spec.mode not in (MODE_IMAGE_BLIND, MODE_IMAGE_AWARE):
        raise ValueError(f"unsupported prompt mode: {spec.mode!r}")
    name = language_name(spec.language)
    focus = _IMAGE_AWARE_FOCUS if spec.mode == MODE_IMAGE_AWARE else ""
    blocks = [_INSTRUCTION.format(language=name, focus=focus)]
    for i, example in enumerate(spec.examples):
        blocks.append(_FIRST_EXAMPLE_INTRO if i == 0 else _NEXT_EXAMPLE_INTRO)
        blocks.append(_caption_lines(example.retrieved_captions))
        blocks.append(_GOLD_LINE.format(language=name, gold=example.gold_caption))
    blocks.append(_INPUT_INTRO)
    blocks.append(_caption_lines(spec.input_captions))
    blocks.append(_CLOSING.format(language=name))
    blocks.append(_REQUEST.format(language=name))
    return "\n\n".join(blocks)


def render_baseline_prompt(language: str) -> str:
    """Instruction-only prompt: no examples, no retrieved captions.

    Reconstructed from the image-aware instruction paragraph plus the final
    request sentence; the no-retrieval prompt is not fully specified by its
    source, see README.
    """
    name = language_name(language)
    return "\n\n".join(
        [
            _INSTRUCTION.format(language=name, focus=_IMAGE_AWARE_FOCUS),
            _REQUEST.format(language=name),
        ]
    )


def render_translation_prompt(caption: str, language: str) -> str:
    """Zero-shot translation instruction; ``language`` is a language name."""
    if not caption:
        raise ValueError("caption must be non-empty")
    return (
        f"Translate the following text from English into {language}.\n"
        f"English: {caption}\n{language}:"
    )


def make_prompt_spec(
    mode: str,
    language: str,
    selection: SelectionResult | None = None,
) -> PromptSpec:
    """Assemble and render a validated PromptSpec.

    ``selection`` is required for the retrieval-backed modes and ignored for
    the no-retrieval baseline.
    """
    if mode not in MODES:
        raise ValueError(f"unsupported prompt mode: {mode!r}")
    if mode == MODE_NO_RETRIEVAL:
        return PromptSpec(
            mode=mode,
            language=language,
            n_examples=0,
            k_captions=0,
            examples=(),
            input_captions=(),
            rendered=render_baseline_prompt(language),
        )
    if selection is None:
        raise ValueError("retrieval-backed modes need a SelectionResult")
    spec = PromptSpec(
        mode=mode,
        language=language,
        n_examples=len(selection.examples),
        k_captions=len(selection.input_captions),
        examples=selection.examples,
        input_captions=selection.input_captions,
        rendered="",
    )
    rendered = render_caption_prompt(spec)
    _check_no_repeats(spec)
    return PromptSpec(
        mode=spec.mode,
        language=spec.language,
        n_examples=spec.n_examples,
        k_captions=spec.k_captions,
        examples=spec.examples,
        input_captions=spec.input_captions,
        rendered=rendered,
    )


def _check_no_repeats(spec: PromptSpec) -> None:
    texts = [normalize_caption_text(t) for t in spec.input_captions]
    for example in spec.examples:
        texts.extend(normalize_caption_text(t) for t in example.retrieved_captions)
        texts.append(normalize_caption_text(example.gold_caption))
    if len(set(texts)) != len(texts):
        raise AssertionError("prompt contains a repeated caption text")
