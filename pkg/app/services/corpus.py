from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.core.errors import ArgumentError
from app.core.logging import get_logger
from app.schemas.corpus import (
    CorpusSpec,
    DomainTemplate,
    Intent,
    Utterance,
    Vocabulary,
    placeholder_name,
)
from app.schemas.labeling import SlotSpan

logger = get_logger(__name__)

_SPLIT_CODES = {"train": 1, "eval": 2}
_CLASS_CODES = {"intended": 1, "unintended": 2}
_TOKEN_MEAN_TAG = 0x70CE
_OPTIONAL_SLOT_PROB = 0.5

DEFAULT_INTENDED_DOMAINS: List[DomainTemplate] = [
    DomainTemplate(
        name="media",
        templates=["play | <media_object>", "turn up | the volume", "pause | the music"],
        slot_fillers={"media_object": ["jazz", "some music", "the news", "my playlist"]},
        tempo_frames=(4, 8),
    ),
    DomainTemplate(
        name="alarm",
        templates=["snooze alarm | [<time_label>]", "set an alarm | <time_label>"],
        slot_fillers={"time_label": ["at 8:00", "at noon", "in ten minutes"]},
        tempo_frames=(4, 8),
    ),
    DomainTemplate(
        name="call",
        templates=["call | <contact>", "send a message | to <contact>"],
        slot_fillers={"contact": ["mom", "the office", "john"]},
        tempo_frames=(4, 8),
    ),
    DomainTemplate(
        name="facts",
        templates=["how many metres | in a mile", "why is | the sky blue", "what is the weather | <date>"],
        slot_fillers={"date": ["today", "tomorrow"]},
        tempo_frames=(4, 8),
    ),
    DomainTemplate(
        name="undo",
        templates=["undo that", "cancel | the timer", "never mind"],
        tempo_frames=(4, 8),
    ),
]

DEFAULT_UNINTENDED_DOMAINS: List[DomainTemplate] = [
    DomainTemplate(
        name="spouse_chat",
        templates=["what do you want | for dinner", "did you watch | the show | last night",
                   "i think | the debate | was close"],
        tempo_frames=(6, 12),
    ),
    DomainTemplate(
        name="assistant_praise",
        templates=["wow | it did that | really well", "that was | so helpful"],
        tempo_frames=(6, 12),
    ),
    DomainTemplate(
        name="song_love",
        templates=["i love | this song", "this song | is so good"],
        tempo_frames=(6, 12),
    ),
    DomainTemplate(
        name="murmur",
        templates=["hmm | where did i | put my keys", "let me think | about it"],
        tempo_frames=(6, 12),
    ),
]


def default_corpus_spec(**overrides) -> CorpusSpec:
    fields = {
        "intended_domains": [d.model_copy(deep=True) for d in DEFAULT_INTENDED_DOMAINS],
        "unintended_domains": [d.model_copy(deep=True) for d in DEFAULT_UNINTENDED_DOMAINS],
    }
    fields.update(overrides)
    return CorpusSpec(**fields)


def build_vocabulary(spec: CorpusSpec) -> Vocabulary:
    """Every literal token of every template and filler, sorted"""
    words = set()
    for domain in spec.intended_domains + spec.unintended_domains:
        for template in domain.templates:
            for element in template.split():
                if element != "|" and placeholder_name(element) is None:
                    words.add(element)
        for fillers in domain.slot_fillers.values():
            for filler in fillers:
                words.update(filler.split())
    return Vocabulary.from_wordpieces(sorted(words))


@lru_cache(maxsize=4096)
def _token_mean(seed: int, token_id: int, dim: int) -> np.ndarray:
    rng = np.random.default_rng([seed, _TOKEN_MEAN_TAG, token_id])
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    v.setflags(write=False)
    return v


def token_mean(spec: CorpusSpec, token_id: int) -> np.ndarray:
    """Unit-norm acoustic centroid of a token; a pure function of (seed, token id)"""
    return _token_mean(spec.seed, token_id, spec.feature_dim)


def _draw(rng: np.random.Generator, frame_range: Tuple[int, int]) -> int:
    lo, hi = frame_range
    return int(rng.integers(lo, hi + 1))


def render_features(
    transcript: Sequence[int],
    domain: DomainTemplate,
    spec: CorpusSpec,
    rng: np.random.Generator,
    phrase_breaks: Sequence[int] = (),
) -> Tuple[np.ndarray, List[Tuple[int, int]], int, List[Tuple[int, int]]]:
    """
    Synthesize frames for a token sequence.

    phrase_breaks are token-gap indices (a pause before token g) where a pause is
    inserted with probability spec.silence_insertion_prob. Returns
    (features, silence_segments, start_of_speech_frame, token_alignment).
    """
    if len(transcript) == 0:
        raise ArgumentError("cannot render an empty transcript")
    dim = spec.feature_dim
    sigma = spec.noise_sigma
    breaks = set(phrase_breaks)

    chunks: List[np.ndarray] = []
    silences: List[Tuple[int, int]] = []
    alignment: List[Tuple[int, int]] = []
    cursor = 0

    def emit_silence(n: int) -> None:
        nonlocal cursor
        if n == 0:
            return
        chunks.append(sigma * rng.standard_normal((n, dim)))
        silences.append((cursor, cursor + n))
        cursor += n

    emit_silence(_draw(rng, spec.leading_silence_frames))
    start_of_speech = cursor
    for position, token_id in enumerate(transcript):
        if position in breaks and rng.random() < spec.silence_insertion_prob:
            emit_silence(_draw(rng, spec.pause_frames))
        duration = _draw(rng, domain.tempo_frames)
        mean = token_mean(spec, token_id)
        chunks.append(mean + sigma * rng.standard_normal((duration, dim)))
        alignment.append((cursor, cursor + duration))
        cursor += duration
    emit_silence(_draw(rng, spec.trailing_silence_frames))

    return np.concatenate(chunks, axis=0), silences, start_of_speech, alignment


def _pick_domain(rng: np.random.Generator, domains: List[DomainTemplate]) -> DomainTemplate:
    weights = np.array([d.weight for d in domains], dtype=np.float64)
    return domains[int(rng.choice(len(domains), p=weights / weights.sum()))]


def instantiate_template(
    template: str,
    domain: DomainTemplate,
    rng: np.random.Generator,
) -> Tuple[List[str], List[int], List[SlotSpan]]:
    """Fill placeholders; returns (words, phrase-break gap indices, slot spans)"""
    words: List[str] = []
    breaks: List[int] = []
    slots: List[SlotSpan] = []
    for phrase in template.split("|"):
        if words and len(words) not in breaks:
            breaks.append(len(words))
        for element in phrase.split():
            slot = placeholder_name(element)
            if slot is None:
                words.append(element)
                continue
            if element.startswith("[") and rng.random() >= _OPTIONAL_SLOT_PROB:
                continue
            fillers = domain.slot_fillers[slot]
            filler = fillers[int(rng.integers(len(fillers)))].split()
            slots.append(SlotSpan(slot_name=slot, start_token=len(words), end_token=len(words) + len(filler)))
            words.extend(filler)
    breaks = [g for g in breaks if 0 < g < len(words)]
    return words, breaks, slots


def generate_utterance(
    spec: CorpusSpec,
    vocab: Vocabulary,
    intent: Intent,
    index: int,
    split: str = "train",
) -> Utterance:
    """One utterance from its own seed stream (seed, split, class, index)"""
    rng = np.random.default_rng([spec.seed, _SPLIT_CODES[split], _CLASS_CODES[intent], index])
    domains = spec.intended_domains if intent == "intended" else spec.unintended_domains
    domain = _pick_domain(rng, domains)
    template = domain.templates[int(rng.integers(len(domain.templates)))]
    words, breaks, slots = instantiate_template(template, domain, rng)
    transcript = vocab.encode(words)
    features, silences, sos, alignment = render_features(transcript, domain, spec, rng, breaks)
    return Utterance(
        id=f"{split}-{intent}-{index:05d}",
        domain=domain.name,
        intent=intent,
        transcript=transcript,
        features=features.astype(np.float32),
        silence_segments=silences,
        start_of_speech_frame=sos,
        token_alignment=alignment,
        slots=slots,
    )


def generate_corpus(spec: CorpusSpec, split: str = "train") -> Tuple[Vocabulary, List[Utterance]]:
    if split not in _SPLIT_CODES:
        raise ArgumentError(f"unknown split {split!r}")
    try:
        spec = CorpusSpec.model_validate(spec.model_dump())
    except ValueError as e:
        raise ArgumentError(f"invalid corpus spec: {e}") from e
    vocab = build_vocabulary(spec)
    n_intended, n_unintended = spec.split_counts(split)
    utterances = [generate_utterance(spec, vocab, "intended", i, split) for i in range(n_intended)]
    utterances += [generate_utterance(spec, vocab, "unintended", i, split) for i in range(n_unintended)]
    logger.info(
        "corpus_generated",
        split=split,
        n_intended=n_intended,
        n_unintended=n_unintended,
        vocab_size=len(vocab.tokens),
    )
    return vocab, utterances


def domain_histogram(utterances: Sequence[Utterance]) -> Dict[str, int]:
    counts: Dict[str, int] = {}
    for utt in utterances:
        counts[utt.domain] = counts.get(utt.domain, 0) + 1
    return counts


def mean_frames_per_token(utterances: Sequence[Utterance], intent: Optional[Intent] = None) -> float:
    spans = [
        end - start
        for utt in utterances
        if intent is None or utt.intent == intent
        for start, end in utt.token_alignment
    ]
    return float(np.mean(spans)) if spans else 0.0
