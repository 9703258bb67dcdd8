"""Generator determinism, solver oracles, and the expansion loop contract."""

import numpy as np
import pytest

from onelatent.errors import ContractViolation, CorruptSampleError
from onelatent.taskgen import (
    NAMES,
    ArithExpander,
    ArithJudge,
    ChainExpander,
    ChainJudge,
    ExpansionConfig,
    RemoteLLMExpander,
    Sample,
    expand_cot,
    gen_arith_task,
    gen_chain_task,
    gen_corpus,
    read_manifest,
    write_manifest,
    _parse_facts,
)


def test_chain_determinism():
    assert gen_chain_task(42, 5) == gen_chain_task(42, 5)


def test_chain_single_hop_single_step():
    s = gen_chain_task(2, 1)  # even seed: label True
    steps = [x for x in s.cot.split(" . ") if " is a " in x and not x.startswith("So")]
    assert len(steps) == 1
    assert s.answer == "The answer is True ."


def _closure_reachable(question: str, start: str, target: str) -> bool:
    """Independent oracle: boolean transitive closure by matrix squaring."""
    edges = _parse_facts(question)
    names = sorted({n for e in edges for n in e} | {start, target})
    idx = {n: i for i, n in enumerate(names)}
    n = len(names)
    adj = np.eye(n, dtype=bool)
    for a, b in edges:
        adj[idx[a], idx[b]] = True
    for _ in range(int(np.ceil(np.log2(max(n, 2)))) + 1):
        adj = adj @ adj
    return bool(adj[idx[start], idx[target]])


def test_chain_answers_match_reachability_oracle():
    for i in range(10_000):
        hops = (i % 8) + 1
        s = gen_chain_task(10_000 + i, hops)
        words = s.question.rstrip(" ?").split()
        start, target = words[-3], words[-1]
        expected = _closure_reachable(s.question, start, target)
        assert (s.answer == "The answer is True .") == expected


def test_arith_determinism_and_bounds():
    s1 = gen_arith_task(9, 4)
    assert s1 == gen_arith_task(9, 4)
    for i in range(500):
        s = gen_arith_task(i, (i % 6) + 1)
        for sent in s.cot.split(" . "):
            w = sent.replace(" .", "").split()
            if len(w) == 5 and w[3] == "=":
                assert 0 <= int(w[4]) <= 99


def test_arith_single_step():
    s = gen_arith_task(3, 1)
    lines = [x for x in s.cot.split(" . ") if x.strip(" .")]
    assert len(lines) == 1
    assert s.answer.startswith("#### ")


def _eval_expression_oracle(question: str) -> int:
    """Independent evaluator built on a tiny expression string."""
    expr = None
    for sent in question.split(" . "):
        w = sent.replace(" ?", "").replace(" .", "").split()
        if not w:
            continue
        if w[0] == "Start":
            expr = w[2]
        elif w[0] == "Add":
            expr = f"({expr})+{w[1]}"
        elif w[0] == "Subtract":
            expr = f"({expr})-{w[1]}"
        elif w[0] == "Multiply":
            expr = f"({expr})*{w[2]}"
    return eval(expr)  # arithmetic over literals only


def test_arith_answers_match_expression_oracle():
    for i in range(10_000):
        s = gen_arith_task(50_000 + i, (i % 6) + 1)
        gold = int(s.answer.split()[-1])
        assert _eval_expression_oracle(s.question) == gold


def test_generator_contracts():
    with pytest.raises(ContractViolation):
        gen_chain_task(1, 0)
    with pytest.raises(ContractViolation):
        gen_arith_task(1, 0)


def test_corpus_balance_uniqueness_determinism():
    c1 = gen_corpus("chain", 400, corpus_seed=7)
    c2 = gen_corpus("chain", 400, corpus_seed=7)
    assert c1 == c2
    labels = sum(1 for s in c1 if s.answer.endswith("True ."))
    assert labels == 200
    assert len({s.question for s in c1}) == 400
    assert all(1 <= s.hops <= 8 for s in c1)


def test_corpus_split_disjointness():
    train = gen_corpus("chain", 300, corpus_seed=7)
    seen = {s.question for s in train}
    test = gen_corpus("chain", 100, corpus_seed=7_000_000, exclude_questions=seen)
    assert not seen & {s.question for s in test}


def test_manifest_round_trip(tmp_path):
    corpus = gen_corpus("arith", 25, corpus_seed=3)
    path = tmp_path / "c.jsonl"
    write_manifest(corpus, path)
    assert read_manifest(path) == list(corpus)


# ---------------------------------------------------------------------------
# expansion loop
# ---------------------------------------------------------------------------


def test_expansion_early_exit_when_target_met():
    s = gen_chain_task(4, 3)
    calls = []

    def spy_expander(sample, cot):
        calls.append(1)
        return cot + " extra"

    cfg = ExpansionConfig(l_target=len(s.cot), max_iters=5,
                          expander=spy_expander, judge=ChainJudge())
    out = expand_cot(s, cfg)
    assert out.cot == s.cot and calls == []


def test_expansion_rejects_corrupting_expander():
    s = gen_chain_task(6, 3)

    def corruptor(sample, cot):
        return cot.replace("True", "False").replace("is a", "is not a")

    cfg = ExpansionConfig(l_target=10_000, max_iters=4,
                          expander=corruptor, judge=ChainJudge())
    out = expand_cot(s, cfg)
    assert out.cot == s.cot  # every proposal rejected


def test_expansion_rejects_invalid_original():
    s = gen_chain_task(8, 2)
    bad = Sample(s.sample_id, s.kind, s.question, "nonsense words here .",
                 s.answer, s.hops, s.seed)
    cfg = ExpansionConfig(l_target=100, max_iters=2,
                          expander=ChainExpander(), judge=ChainJudge())
    with pytest.raises(CorruptSampleError):
        expand_cot(bad, cfg)


@pytest.mark.parametrize("kind", ["chain", "arith"])
def test_expansion_loop_contract_sweep(kind):
    """Monotone length, answer preservation, iteration bound, early exit."""
    judge = ChainJudge() if kind == "chain" else ArithJudge()
    for i in range(500):
        if kind == "chain":
            s = gen_chain_task(900_000 + i, (i % 8) + 1)
            expander = ChainExpander()
        else:
            s = gen_arith_task(900_000 + i, (i % 6) + 1)
            expander = ArithExpander()
        cfg = ExpansionConfig(l_target=len(s.cot) + 40 + (i % 60), max_iters=8,
                              expander=expander, judge=judge)
        out = expand_cot(s, cfg)
        assert len(out.cot) >= len(s.cot)
        assert out.answer == s.answer
        assert judge(out, out.cot)


def test_remote_llm_slot_unimplemented():
    s = gen_chain_task(2, 2)
    with pytest.raises(NotImplementedError):
        RemoteLLMExpander()(s, s.cot)
