"""Synthetic desk-scale corpora with explicit reasoning traces.

Two task families:

  chain  is-a ontology chains over synthetic category names. The question
         lists shuffled facts (the main chain plus a disconnected
         distractor chain) and asks whether the chain start is a given
         category; the trace walks the chain hop by hop.
  arith  chained small-integer updates with every intermediate spelled
         out; the answer uses the "#### n" marker convention.

All text is emitted pre-tokenized (single spaces). Generation is a pure
function of the seed. Each sample is checked against an independent solver
and the reference judge before it is emitted.

CoT expansion follows the propose/judge/accept loop with pluggable
components; the reference plugins are deterministic and rule-based, and a
remote-LLM adapter slot exists but is intentionally unimplemented.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Set, Tuple, Union

from .errors import ContractViolation, CorruptSampleError

__all__ = [
    "Sample",
    "ExpansionConfig",
    "gen_chain_task",
    "gen_arith_task",
    "gen_corpus",
    "expand_cot",
    "ChainJudge",
    "ArithJudge",
    "ChainExpander",
    "ArithExpander",
    "RemoteLLMExpander",
    "judge_for",
    "expander_for",
    "write_manifest",
    "read_manifest",
]

_ONSETS = ("bl", "gr", "fl", "kr", "pl", "sn", "tr", "vl")
_RIMES = ("imp", "orp", "ant", "umb", "olt", "ink")
NAMES: Tuple[str, ...] = tuple(o + r for o in _ONSETS for r in _RIMES)

TRUE_ANSWER = "The answer is True ."
FALSE_ANSWER = "The answer is False ."

_ARITH_MAX = 99


@dataclass(frozen=True)
class Sample:
    sample_id: str
    kind: str  # "chain" | "arith"
    question: str
    cot: str
    answer: str
    hops: int
    seed: int


# ---------------------------------------------------------------------------
# chain tasks
# ---------------------------------------------------------------------------


def _sentences(text: str) -> List[str]:
    """Split ' . '-separated sentences, dropping the terminal dot."""
    return [s.rstrip(" .").strip() for s in text.split(" . ") if s.strip(" .")]


def _join_sentences(sents: Sequence[str]) -> str:
    return " . ".join(sents) + " ."


def _parse_facts(question: str) -> List[Tuple[str, str]]:
    """Recover 'X is a Y' edges from the question text."""
    edges = []
    for sent in _sentences(question):
        words = sent.split()
        if len(words) == 4 and words[1] == "is" and words[2] == "a":
            edges.append((words[0], words[3]))
    return edges


def _reachable(start: str, edges: Iterable[Tuple[str, str]]) -> Set[str]:
    adj: Dict[str, List[str]] = {}
    for a, b in edges:
        adj.setdefault(a, []).append(b)
    seen = {start}
    frontier = [start]
    while frontier:
        node = frontier.pop()
        for nxt in adj.get(node, ()):
            if nxt not in seen:
                seen.add(nxt)
                frontier.append(nxt)
    return seen


def gen_chain_task(
    seed: int,
    hops: int,
    label_true: Optional[bool] = None,
    false_target: str = "absent",
) -> Sample:
    """One is-a chain question; label defaults to the seed's parity.

    False questions ask about a category that is either absent from the
    facts entirely (`false_target="absent"`, the default desk-scale
    setting) or the end of the disconnected distractor chain
    (`"distractor"`, a harder distribution that from-scratch micro models
    do not reliably learn under answer-only supervision).
    """
    if hops < 1:
        raise ContractViolation("hops must be >= 1")
    if false_target not in ("absent", "distractor"):
        raise ContractViolation(f"unknown false_target mode: {false_target}")
    rng = random.Random(seed)
    if label_true is None:
        label_true = seed % 2 == 0
    d_len = rng.randint(1, 3)
    names = rng.sample(NAMES, hops + 1 + d_len + 1 + 1)
    chain = names[: hops + 1]
    dchain = names[hops + 1 : hops + 1 + d_len + 1]
    absent = names[-1]
    chain_edges = list(zip(chain[:-1], chain[1:]))
    dedges = list(zip(dchain[:-1], dchain[1:]))
    if label_true:
        target = chain[-1]
    else:
        target = dchain[-1] if false_target == "distractor" else absent

    facts = chain_edges + dedges
    rng.shuffle(facts)
    fact_text = " ".join(f"{a} is a {b} ." for a, b in facts)
    question = f"{fact_text} Is {chain[0]} a {target} ?"

    steps = [f"{a} is a {b} ." for a, b in chain_edges]
    if label_true:
        steps.append(f"So {chain[0]} is a {target} .")
        answer = TRUE_ANSWER
    else:
        steps.append(f"So {chain[0]} is a {chain[-1]} .")
        steps.append(f"{target} is not reached .")
        answer = FALSE_ANSWER
    cot = " ".join(steps)

    # independent check: reachability over the emitted facts
    reach = _reachable(chain[0], _parse_facts(question))
    if (target in reach) != label_true:
        raise CorruptSampleError(f"chain construction broke reachability for seed {seed}")
    sample = Sample(
        sample_id=f"chain-{seed}",
        kind="chain",
        question=question,
        cot=cot,
        answer=answer,
        hops=hops,
        seed=seed,
    )
    if not ChainJudge()(sample, cot):
        raise CorruptSampleError(f"reference judge rejected fresh chain sample {seed}")
    return sample


# ---------------------------------------------------------------------------
# arithmetic tasks
# ---------------------------------------------------------------------------


def gen_arith_task(seed: int, steps: int) -> Sample:
    if steps < 1:
        raise ContractViolation("steps must be >= 1")
    rng = random.Random(seed)
    value = rng.randint(2, 9)
    phrases = [f"Start with {value} ."]
    lines = []
    for _ in range(steps):
        choices = []
        for k in range(2, 10):
            if value + k <= _ARITH_MAX:
                choices.append(("+", k))
            if value - k >= 0:
                choices.append(("-", k))
        for m in (2, 3):
            if value * m <= _ARITH_MAX:
                choices.append(("*", m))
        op, operand = choices[rng.randrange(len(choices))]
        if op == "+":
            result = value + operand
            phrases.append(f"Add {operand} .")
        elif op == "-":
            result = value - operand
            phrases.append(f"Subtract {operand} .")
        else:
            result = value * operand
            phrases.append(f"Multiply by {operand} .")
        lines.append(f"{value} {op} {operand} = {result} .")
        value = result
    question = " ".join(phrases) + " What is the result ?"
    cot = " ".join(lines)
    answer = f"#### {value}"
    sample = Sample(
        sample_id=f"arith-{seed}",
        kind="arith",
        question=question,
        cot=cot,
        answer=answer,
        hops=steps,
        seed=seed,
    )
    if _eval_arith_question(question) != value:
        raise CorruptSampleError(f"arith construction mismatch for seed {seed}")
    if not ArithJudge()(sample, cot):
        raise CorruptSampleError(f"reference judge rejected fresh arith sample {seed}")
    return sample


def _eval_arith_question(question: str) -> int:
    """Independent evaluator: apply the narrated operations directly."""
    value = None
    for sent in question.split(" . "):
        words = sent.replace(" ?", "").replace(" .", "").split()
        if not words:
            continue
        if words[0] == "Start":
            value = int(words[2])
        elif words[0] == "Add":
            value += int(words[1])
        elif words[0] == "Subtract":
            value -= int(words[1])
        elif words[0] == "Multiply":
            value *= int(words[2])
    if value is None:
        raise CorruptSampleError("arith question without a start value")
    return value


# ---------------------------------------------------------------------------
# judges (answer preservation + step consistency)
# ---------------------------------------------------------------------------


class ChainJudge:
    """Accepts a trace iff every sentence is grounded in the question's
    facts and the verdict matches reachability of the queried category."""

    def __call__(self, sample: Sample, cot: str) -> bool:
        if not cot.strip():
            return False
        edges = set(_parse_facts(sample.question))
        if not edges:
            return False
        words = sample.question.rstrip(" ?").split()
        start, target = words[-3], words[-1]
        reach = _reachable(start, edges)
        expected_true = target in reach
        if (sample.answer == TRUE_ANSWER) != expected_true:
            return False
        for sent in _sentences(cot):
            w = sent.split()
            if len(w) == 4 and w[1] == "is" and w[2] == "a":
                if (w[0], w[3]) not in edges:
                    return False
            elif len(w) == 6 and w[0] == "We" and w[1] == "know" and w[3] == "is":
                if (w[2], w[5]) not in edges:
                    return False
            elif len(w) == 8 and w[0] == "Since" and w[2] == "is":
                if (w[1], w[4].rstrip(",")) not in edges:
                    return False
            elif len(w) == 5 and w[0] == "So" and w[2] == "is":
                if w[4] not in reach or w[1] != start:
                    return False
            elif len(w) == 4 and w[1] == "is" and w[2] == "not" and w[3] == "reached":
                if w[0] in reach:
                    return False
            else:
                return False
        return True


class ArithJudge:
    """Accepts a trace iff every computed line is correct, the chain of
    values is consistent, and the final value matches the answer marker."""

    def __call__(self, sample: Sample, cot: str) -> bool:
        if not cot.strip():
            return False
        try:
            gold = int(sample.answer.split("####")[-1].strip())
        except ValueError:
            return False
        current = None
        last_value = None
        for sent in _sentences(cot):
            w = sent.split()
            if len(w) == 5 and w[1] in "+-*" and w[3] == "=":
                a, op, b, c = int(w[0]), w[1], int(w[2]), int(w[4])
                computed = a + b if op == "+" else a - b if op == "-" else a * b
                if computed != c:
                    return False
                if current is not None and a != current:
                    return False
                current = c
                last_value = c
            elif len(w) == 5 and sent.startswith("The current value is"):
                if current is None or int(w[4]) != current:
                    return False
            else:
                return False
        return last_value == gold and _eval_arith_question(sample.question) == gold


class ChainExpander:
    """Deterministic rule-based expansion: restate chain facts already used
    by the trace, rotating over two grounded templates."""

    def __init__(self):
        self._counter = 0

    def __call__(self, sample: Sample, cot: str) -> str:
        edges = _parse_facts(sample.question)
        mentioned = [e for e in _parse_facts(cot.replace("We know ", "")) if e in edges]
        if not mentioned:
            mentioned = edges
        a, b = mentioned[self._counter % len(mentioned)]
        if self._counter % 2 == 0:
            insert = f"We know {a} is a {b}"
        else:
            insert = f"Since {a} is a {b} , we continue"
        self._counter += 1
        sents = _sentences(cot)
        pos = min(1 + self._counter % max(1, len(sents)), len(sents) - 1)
        sents.insert(max(pos, 0), insert)
        return _join_sentences(sents)


class ArithExpander:
    """Insert 'The current value is v .' checkpoints after computed lines."""

    def __init__(self):
        self._counter = 0

    def __call__(self, sample: Sample, cot: str) -> str:
        sents = _sentences(cot)
        values = []
        for i, sent in enumerate(sents):
            w = sent.split()
            if len(w) == 5 and w[3] == "=":
                values.append((i, int(w[4])))
        if not values:
            return cot
        idx, val = values[self._counter % len(values)]
        self._counter += 1
        sents.insert(idx + 1, f"The current value is {val}")
        return _join_sentences(sents)


class RemoteLLMExpander:
    """Adapter slot for an external language model; not implemented here."""

    def __call__(self, sample: Sample, cot: str) -> str:
        raise NotImplementedError(
            "remote LLM expansion is out of scope for the reference pipeline; "
            "plug in an implementation of the Expander protocol"
        )


def judge_for(kind: str) -> Callable[[Sample, str], bool]:
    if kind == "chain":
        return ChainJudge()
    if kind == "arith":
        return ArithJudge()
    raise ContractViolation(f"unknown task kind: {kind}")


def expander_for(kind: str) -> Callable[[Sample, str], str]:
    if kind == "chain":
        return ChainExpander()
    if kind == "arith":
        return ArithExpander()
    raise ContractViolation(f"unknown task kind: {kind}")


# ---------------------------------------------------------------------------
# expansion loop
# ---------------------------------------------------------------------------


@dataclass
class ExpansionConfig:
    l_target: int
    max_iters: int
    expander: Callable[[Sample, str], str]
    judge: Callable[[Sample, str], bool]

    def __post_init__(self):
        if self.max_iters < 1:
            raise ContractViolation("max_iters must be >= 1")


def expand_cot(sample: Sample, cfg: ExpansionConfig) -> Sample:
    """Grow the trace toward l_target characters, keeping it judge-valid.

    Proposals that the judge rejects (or that would shrink the trace) leave
    it unchanged; the loop stops at l_target or after max_iters proposals.
    The original trace must be judge-valid, otherwise the sample is corrupt.
    """
    cot = sample.cot
    if not cfg.judge(sample, cot):
        raise CorruptSampleError(f"judge rejects original trace of {sample.sample_id}")
    for _ in range(cfg.max_iters):
        if len(cot) >= cfg.l_target:
            break
        proposal = cfg.expander(sample, cot)
        if len(proposal) >= len(cot) and cfg.judge(sample, proposal):
            cot = proposal
    return replace(sample, cot=cot)


# ---------------------------------------------------------------------------
# corpus drivers and manifests
# ---------------------------------------------------------------------------


def _sample_seed(corpus_seed: int, index: int) -> int:
    return corpus_seed * 1_000_003 + index


def gen_corpus(
    kind: str,
    count: int,
    corpus_seed: int,
    max_hops: int = 8,
    min_hops: int = 1,
    exclude_questions: Optional[Set[str]] = None,
    false_target: str = "absent",
) -> List[Sample]:
    """Deterministic corpus with unique questions and 50/50 chain labels."""
    if kind not in ("chain", "arith"):
        raise ContractViolation(f"unknown task kind: {kind}")
    samples: List[Sample] = []
    seen: Set[str] = set(exclude_questions or ())
    index = 0
    while len(samples) < count:
        seed = _sample_seed(corpus_seed, index)
        index += 1
        rng = random.Random(seed ^ 0x5EED)
        hops = rng.randint(min_hops, max_hops)
        if kind == "chain":
            sample = gen_chain_task(seed, hops, label_true=len(samples) % 2 == 0,
                                    false_target=false_target)
        else:
            sample = gen_arith_task(seed, hops)
        if sample.question in seen:
            continue
        seen.add(sample.question)
        samples.append(sample)
    return samples


def write_manifest(samples: Sequence[Sample], path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(
                json.dumps(
                    {
                        "sample_id": s.sample_id,
                        "kind": s.kind,
                        "seed": s.seed,
                        "question": s.question,
                        "cot": s.cot,
                        "answer": s.answer,
                        "hops": s.hops,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def read_manifest(path: Union[str, Path]) -> List[Sample]:
    samples = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            samples.append(
                Sample(
                    sample_id=rec["sample_id"],
                    kind=rec["kind"],
                    question=rec["question"],
                    cot=rec["cot"],
                    answer=rec["answer"],
                    hops=rec["hops"],
                    seed=rec["seed"],
                )
            )
    return samples
