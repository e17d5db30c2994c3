"""
Label augmentation: slot parsing with a toy grammar, then IQ-token insertion at
slot closings and pauses.
"""
from typing import List, Optional, Sequence, Tuple

from app.core.errors import ArgumentError
from app.core.logging import get_logger
from app.schemas.corpus import CorpusSpec, Utterance, Vocabulary, placeholder_name
from app.schemas.labeling import AugmentedLabelSequence, LabelItem, SlotGrammar, SlotRule, SlotSpan

logger = get_logger(__name__)

ACTION_SLOT = "action"
PAUSE_MIN_FRAMES = 8


def grammar_from_domains(spec: CorpusSpec) -> SlotGrammar:
    """One rule per slotted intended template"""
    rules = []
    for domain in spec.intended_domains:
        for template in domain.templates:
            elements = template.replace("|", " ").split()
            slot_names = [placeholder_name(e) for e in elements if placeholder_name(e)]
            if not slot_names:
                continue
            slot = slot_names[0]
            rules.append(
                SlotRule(
                    pattern=" ".join(elements),
                    slot_name=slot,
                    slot_vocabulary=domain.slot_fillers[slot],
                )
            )
    return SlotGrammar(rules=rules)


class _CompiledRule:
    def __init__(self, rule: SlotRule, vocab: Vocabulary):
        self.rule = rule
        self.elements: List[Tuple[Optional[int], bool, bool]] = []
        for token, is_placeholder, optional in rule.elements():
            if is_placeholder:
                self.elements.append((None, True, optional))
            else:
                self.elements.append((_lookup(vocab, token), False, optional))
        # Longest fillers first so the first successful match is the longest
        fillers = [vocab.encode(f) for f in rule.fillers() if all(t in vocab.tokens for t in f)]
        self.fillers = sorted(fillers, key=len, reverse=True)
        n_literal = 0
        while n_literal < len(self.elements) and not self.elements[n_literal][1]:
            n_literal += 1
        tail = self.elements[n_literal:]
        self.action_prefix = n_literal if tail and n_literal and all(opt for _, _, opt in tail) else 0

    def match(self, transcript: Sequence[int], start: int) -> Optional[Tuple[int, List[SlotSpan]]]:
        """Longest match at start; returns (end, spans) or None"""
        best = self._match_from(transcript, start, 0)
        if best is None:
            return None
        end, spans = best
        if self.action_prefix:
            spans = [SlotSpan(slot_name=ACTION_SLOT, start_token=start, end_token=start + self.action_prefix)] + spans
        return end, spans

    def _match_from(self, transcript, pos: int, k: int) -> Optional[Tuple[int, List[SlotSpan]]]:
        if k == len(self.elements):
            return pos, []
        token_id, is_placeholder, optional = self.elements[k]
        candidates = []
        if not is_placeholder:
            if pos < len(transcript) and transcript[pos] == token_id:
                rest = self._match_from(transcript, pos + 1, k + 1)
                if rest is not None:
                    candidates.append(rest)
        else:
            for filler in self.fillers:
                end = pos + len(filler)
                if list(transcript[pos:end]) == filler:
                    rest = self._match_from(transcript, end, k + 1)
                    if rest is not None:
                        span = SlotSpan(slot_name=self.rule.slot_name, start_token=pos, end_token=end)
                        candidates.append((rest[0], [span] + rest[1]))
            if optional:
                rest = self._match_from(transcript, pos, k + 1)
                if rest is not None:
                    candidates.append(rest)
        if not candidates:
            return None
        return max(candidates, key=lambda c: c[0])


def _lookup(vocab: Vocabulary, token: str) -> Optional[int]:
    try:
        return vocab.tokens.index(token)
    except ValueError:
        return None


def parse_slots(transcript: Sequence[int], grammar: SlotGrammar, vocab: Vocabulary) -> List[SlotSpan]:
    """Deterministic left-to-right longest match; earlier rules win ties"""
    rules = [_CompiledRule(rule, vocab) for rule in grammar.rules]
    spans: List[SlotSpan] = []
    pos = 0
    while pos < len(transcript):
        best: Optional[Tuple[int, List[SlotSpan]]] = None
        for rule in rules:
            m = rule.match(transcript, pos)
            if m is not None and m[0] > pos and (best is None or m[0] > best[0]):
                best = m
        if best is None:
            pos += 1
            continue
        spans.extend(best[1])
        pos = best[0]
    return spans


def insert_iq_tokens(
    transcript: Sequence[int],
    slots: Sequence[SlotSpan],
    silence_boundaries: Sequence[int],
    intent: str,
    vocab: Vocabulary,
) -> AugmentedLabelSequence:
    """
    Interleave class tokens into the transcript.

    silence_boundaries are token-gap indices g, meaning a pause between token
    g-1 and token g.

    Intended utterances get <intended> only after slot ends strictly inside the
    transcript. A slot closing at the utterance end emits nothing of its own;
    the end token is appended only when no other insertion happened, so
    "snooze alarm at 8:00" becomes "snooze alarm <intended> at 8:00" with no
    trailing token. Unintended utterances always end with <unintended>.
    """
    n = len(transcript)
    if n == 0:
        raise ArgumentError("cannot augment an empty transcript")
    ordered = sorted(slots, key=lambda s: (s.start_token, s.end_token))
    for span in ordered:
        if span.end_token > n:
            raise ArgumentError(f"slot {span.slot_name} ends beyond the transcript")
    for prev, cur in zip(ordered, ordered[1:]):
        if cur.start_token < prev.end_token:
            raise ArgumentError(f"overlapping slots {prev.slot_name} and {cur.slot_name}")
    for g in silence_boundaries:
        if not 0 < g < n:
            raise ArgumentError(f"silence boundary {g} is not an internal token gap")

    class_id = vocab.class_token(intent)
    insertions = {}
    if intent == "intended":
        for span in ordered:
            if span.end_token < n:
                insertions.setdefault(span.end_token, "slot_close")
    for g in silence_boundaries:
        insertions.setdefault(g, "silence")

    items: List[LabelItem] = []
    for position, token_id in enumerate(transcript):
        if position in insertions:
            items.append(LabelItem(token_id=class_id, origin=insertions[position]))
        items.append(LabelItem(token_id=token_id, origin="wordpiece"))
    if intent == "unintended" or not insertions:
        items.append(LabelItem(token_id=class_id, origin="utterance_end"))
    return AugmentedLabelSequence(items=items, intent=intent)


def to_training_targets(aug: AugmentedLabelSequence, include_iq: bool) -> List[int]:
    if not aug.items:
        raise ArgumentError("empty label sequence")
    if include_iq:
        return aug.token_ids()
    return [item.token_id for item in aug.items if item.origin == "wordpiece"]


def strip_iq(token_ids: Sequence[int], vocab: Vocabulary) -> List[int]:
    return [t for t in token_ids if not vocab.is_iq(t)]


class LabelingService:
    def __init__(self, grammar: SlotGrammar, vocab: Vocabulary, pause_min_frames: int = PAUSE_MIN_FRAMES):
        self.grammar = grammar
        self.vocab = vocab
        self.pause_min_frames = pause_min_frames

    def augment(self, utt: Utterance) -> AugmentedLabelSequence:
        slots = parse_slots(utt.transcript, self.grammar, self.vocab) if utt.intent == "intended" else []
        return insert_iq_tokens(
            utt.transcript, slots, utt.pause_gaps(self.pause_min_frames), utt.intent, self.vocab
        )

    def label_corpus(self, utterances: List[Utterance]) -> List[Utterance]:
        """Attach augmented targets to every utterance in place"""
        n_iq = 0
        for utt in utterances:
            aug = self.augment(utt)
            utt.augmented_targets = aug.token_ids()
            n_iq += len(aug.items) - len(utt.transcript)
        logger.info("corpus_labeled", utterances=len(utterances), iq_tokens=n_iq)
        return utterances
