"""Depth-bounded beam search over provider calls.

A search seeds two states (direct answer; answer over one gathered evidence),
then repeatedly expands every beam state into children via generated
follow-up queries, scores them, prunes to the beam width, and stops early as
soon as a kept state reaches the confidence threshold.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .accounting import CostLedger
from .prompts import (
    HistoryPairs,
    ScoreParseError,
    parse_questions,
    parse_score,
    render_answer_prompt,
    render_ask_prompt,
    render_score_prompt,
)
from .providers import (
    CompletionProvider,
    CompletionRequest,
    ProviderError,
    TAG_ANSWER,
    TAG_ASK,
    TAG_SCORE,
)
from .retrieval import (
    EVIDENCE_MODES,
    Evidence,
    LexicalIndex,
    RETRIEVE_SUMMARIZE,
    gather_evidence,
)

TRACE_KINDS = ("seeded", "expanded", "scored", "pruned", "early_exit", "finished")

EXIT_EARLY = "early_exit"
EXIT_MAX_DEPTH = "max_depth"
EXIT_NO_CANDIDATES = "no_candidates"


class SearchError(Exception):
    """A search aborted; carries the partial trace and ledger as a diagnostic."""

    def __init__(self, message: str, trace: tuple["TraceEvent", ...], ledger: CostLedger):
        super().__init__(message)
        self.trace = trace
        self.ledger = ledger


@dataclass(frozen=True)
class SearchConfig:
    """Hyperparameters of one search. Defaults follow the NQ setup:
    threshold 0.8, beam 2, depth 2, 2 documents per retrieval, 2 generated
    queries, evidence via retrieval plus summarization."""

    beam_size: int = 2
    max_depth: int = 2
    max_queries: int = 2
    retrieval_docs: int = 2
    score_threshold: float = 0.8
    evidence_mode: str = RETRIEVE_SUMMARIZE
    dedupe_queries: bool = True

    def __post_init__(self):
        for name in ("beam_size", "max_depth", "max_queries", "retrieval_docs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0.0 <= self.score_threshold <= 1.0:
            raise ValueError(f"score_threshold must be in [0, 1], got {self.score_threshold}")
        if self.evidence_mode not in EVIDENCE_MODES:
            raise ValueError(f"unknown evidence_mode {self.evidence_mode!r}")

    def as_dict(self) -> dict:
        return {
            "beam_size": self.beam_size,
            "max_depth": self.max_depth,
            "max_queries": self.max_queries,
            "retrieval_docs": self.retrieval_docs,
            "score_threshold": self.score_threshold,
            "evidence_mode": self.evidence_mode,
            "dedupe_queries": self.dedupe_queries,
        }


@dataclass(frozen=True)
class SearchState:
    """One beam element: the question, the query/evidence history accumulated
    so far, the current answer, and its confidence."""

    original_query: str
    asked_queries: tuple[str, ...]
    evidences: tuple[Evidence, ...]
    answer: str
    score: float
    depth: int
    state_id: int

    def __post_init__(self):
        object.__setattr__(self, "asked_queries", tuple(self.asked_queries))
        object.__setattr__(self, "evidences", tuple(self.evidences))
        if len(self.asked_queries) != len(self.evidences):
            raise ValueError(
                f"history misaligned: {len(self.asked_queries)} queries "
                f"vs {len(self.evidences)} evidences"
            )
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")
        if self.depth < 0:
            raise ValueError("depth must be non-negative")

    def history_pairs(self) -> list[tuple[str, str]]:
        return [(q, e.text) for q, e in zip(self.asked_queries, self.evidences)]


Beam = list[SearchState]


@dataclass(frozen=True)
class TraceEvent:
    kind: str
    payload: dict

    def __post_init__(self):
        if self.kind not in TRACE_KINDS:
            raise ValueError(f"unknown trace kind {self.kind!r}")

    def to_json_line(self) -> str:
        return json.dumps(
            {"kind": self.kind, "payload": self.payload},
            sort_keys=True,
            separators=(",", ":"),
            ensure_ascii=False,
        )


@dataclass(frozen=True)
class SearchResult:
    final_answer: str
    final_state: SearchState
    trace: tuple[TraceEvent, ...]
    ledger: CostLedger

    def trace_lines(self) -> list[str]:
        return [event.to_json_line() for event in self.trace]


def _rank_key(state: SearchState) -> tuple[float, int]:
    return (-state.score, state.state_id)


def prune_beam(states: Sequence[SearchState], beam_size: int) -> Beam:
    """Keep the ``beam_size`` highest-scoring states; ties go to the earlier
    (smaller id) state. Output is sorted score-descending then id-ascending;
    the input is left untouched."""
    if beam_size < 1:
        raise ValueError(f"beam_size must be >= 1, got {beam_size}")
    return sorted(states, key=_rank_key)[:beam_size]


def should_terminate(beam: Sequence[SearchState], threshold: float) -> bool:
    """True iff any state's confidence reached the threshold."""
    return any(state.score >= threshold for state in beam)


def select_answer(beam: Sequence[SearchState]) -> SearchState:
    """The highest-scoring state; ties go to the earlier state."""
    if not beam:
        raise ValueError("cannot select from an empty beam")
    return min(beam, key=_rank_key)


def _normalize_query(query: str) -> str:
    return " ".join(query.split()).casefold()


@dataclass
class _AskOutcome:
    parent: SearchState
    raw_queries: list[str] = field(default_factory=list)
    kept_queries: list[str] = field(default_factory=list)
    error: str | None = None
    ledger: CostLedger = field(default_factory=CostLedger)


@dataclass
class _ChildOutcome:
    query: str
    evidence: Evidence | None = None
    answer: str = ""
    score: float = 0.0
    score_parse_error: str | None = None
    error: str | None = None
    ledger: CostLedger = field(default_factory=CostLedger)
    api_before_score: int = 0


class SearchRun:
    """Executes one search: holds the trace, the ledger, and the id counter.

    A run is single-use (one question); the provider and index it borrows may
    be shared across concurrent runs as long as they tolerate concurrent
    calls, which the bundled ones do.
    """

    def __init__(
        self,
        config: SearchConfig,
        provider: CompletionProvider,
        index: LexicalIndex | None = None,
        workers: int = 1,
    ):
        if workers < 1:
            raise ValueError(f"workers must be >= 1, got {workers}")
        if config.evidence_mode == RETRIEVE_SUMMARIZE and index is None:
            raise ValueError("retrieve_summarize mode needs an index")
        self.config = config
        self.provider = provider
        self.index = index
        self.workers = workers
        self.trace: list[TraceEvent] = []
        self.ledger = CostLedger()
        self._next_id = 0

    # -- provider plumbing ---------------------------------------------------

    def _complete(self, prompt: str, tag: str, ledger: CostLedger) -> str:
        resp = self.provider.complete(CompletionRequest(prompt=prompt, tag=tag))
        ledger.record_api_call(resp.prompt_tokens, resp.completion_tokens)
        return resp.text

    def _with_retry(self, call: Callable[[], str | Evidence]) -> str | Evidence:
        # One engine-level retry for retryable provider failures; scripted
        # mismatches are deterministic and fail straight through.
        try:
            return call()
        except ProviderError as err:
            if not err.retryable:
                raise
            return call()

    def _take_id(self) -> int:
        state_id = self._next_id
        self._next_id += 1
        return state_id

    def _emit(self, kind: str, payload: dict) -> None:
        self.trace.append(TraceEvent(kind=kind, payload=payload))

    # -- the Answer / Score / Ask calls ---------------------------------------

    def _answer(self, question: str, history: HistoryPairs, ledger: CostLedger) -> str:
        prompt = render_answer_prompt(question, history)
        text = self._with_retry(lambda: self._complete(prompt, TAG_ANSWER, ledger))
        answer = str(text).strip()
        if not answer:
            # Contract violation: an unanswerable state cannot be scored.
            raise ProviderError("provider returned an empty answer")
        return answer

    def _score(
        self, question: str, history: HistoryPairs, answer: str, ledger: CostLedger
    ) -> tuple[float, str | None]:
        prompt = render_score_prompt(question, history, answer)
        text = self._with_retry(lambda: self._complete(prompt, TAG_SCORE, ledger))
        try:
            return parse_score(str(text)), None
        except ScoreParseError as err:
            # Tolerated: an unscorable answer competes with confidence zero.
            return 0.0, str(err)

    def _ask(self, parent: SearchState, ledger: CostLedger) -> str:
        prompt = render_ask_prompt(
            parent.original_query, parent.history_pairs(), self.config.max_queries
        )
        return str(self._with_retry(lambda: self._complete(prompt, TAG_ASK, ledger)))

    def _gather(self, original_question: str, query: str, ledger: CostLedger) -> Evidence:
        return self._with_retry(
            lambda: gather_evidence(
                original_question, query, self.config, self.provider, self.index, ledger
            )
        )

    # -- seeding ---------------------------------------------------------------

    def initialize_beam(self, question: str) -> Beam:
        """Build and score the two depth-0 seeds; no threshold check happens here."""
        question = question.strip()
        if not question:
            raise ValueError("question must be non-empty")

        # Seed 1: answer from model knowledge alone.
        ledger = CostLedger()
        answer = self._answer(question, [], ledger)
        direct_id = self._take_id()
        self._emit(
            "seeded",
            {
                "state_id": direct_id,
                "depth": 0,
                "variant": "direct",
                "answer": answer,
                "api_calls": ledger.api_times,
                "retrievals": ledger.retrieval_times,
            },
        )
        self.ledger.merge_from(ledger)
        ledger = CostLedger()
        score, parse_error = self._score(question, [], answer, ledger)
        self._emit_scored(direct_id, score, ledger.api_times, parse_error)
        self.ledger.merge_from(ledger)
        direct = SearchState(question, (), (), answer, score, 0, direct_id)

        # Seed 2: answer over one evidence gathered for the question itself.
        ledger = CostLedger()
        evidence = self._gather(question, question, ledger)
        history = [(question, evidence.text)]
        answer = self._answer(question, history, ledger)
        seeded_id = self._take_id()
        self._emit(
            "seeded",
            {
                "state_id": seeded_id,
                "depth": 0,
                "variant": "evidence",
                "answer": answer,
                "provenance": evidence.provenance,
                "n_docs": len(evidence.doc_ids),
                "api_calls": ledger.api_times,
                "retrievals": ledger.retrieval_times,
            },
        )
        self.ledger.merge_from(ledger)
        ledger = CostLedger()
        score, parse_error = self._score(question, history, answer, ledger)
        self._emit_scored(seeded_id, score, ledger.api_times, parse_error)
        self.ledger.merge_from(ledger)
        grounded = SearchState(question, (question,), (evidence,), answer, score, 0, seeded_id)

        return [direct, grounded]

    def _emit_scored(
        self, state_id: int, score: float, api_calls: int, parse_error: str | None
    ) -> None:
        payload = {"state_id": state_id, "score": score, "api_calls": api_calls}
        if parse_error is not None:
            payload["parse_error"] = parse_error
        self._emit("scored", payload)

    # -- expansion ---------------------------------------------------------------

    def _ask_parent(self, parent: SearchState) -> _AskOutcome:
        outcome = _AskOutcome(parent=parent)
        try:
            text = self._ask(parent, outcome.ledger)
        except ProviderError as err:
            outcome.error = str(err)
            return outcome
        outcome.raw_queries = parse_questions(text, self.config.max_queries)
        kept = outcome.raw_queries
        if self.config.dedupe_queries:
            seen = {_normalize_query(q) for q in parent.asked_queries}
            kept = [q for q in kept if _normalize_query(q) not in seen]
        outcome.kept_queries = kept
        return outcome

    def _build_child(self, parent: SearchState, query: str) -> _ChildOutcome:
        outcome = _ChildOutcome(query=query)
        ledger = outcome.ledger
        try:
            evidence = self._gather(parent.original_query, query, ledger)
            history = parent.history_pairs() + [(query, evidence.text)]
            answer = self._answer(parent.original_query, history, ledger)
            outcome.api_before_score = ledger.api_times
            score, parse_error = self._score(parent.original_query, history, answer, ledger)
        except ProviderError as err:
            outcome.api_before_score = ledger.api_times
            outcome.error = str(err)
            return outcome
        outcome.evidence = evidence
        outcome.answer = answer
        outcome.score = score
        outcome.score_parse_error = parse_error
        return outcome

    def _map(self, fn, items: list):
        if self.workers == 1 or len(items) <= 1:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=min(self.workers, len(items))) as pool:
            return list(pool.map(fn, items))

    def _expand_level(self, parents: Sequence[SearchState], depth: int) -> Beam:
        """Expand every parent once; emits events, returns unpruned candidates.

        Workers only parallelize the provider calls: ids are assigned and
        events emitted afterwards in (parent order, query order), so the trace
        never depends on completion order.
        """
        asks = self._map(self._ask_parent, list(parents))
        jobs = [(a.parent, query) for a in asks for query in a.kept_queries]
        child_outcomes = self._map(lambda job: self._build_child(*job), jobs)

        by_parent: dict[int, list[_ChildOutcome]] = {a.parent.state_id: [] for a in asks}
        for (parent, _), outcome in zip(jobs, child_outcomes):
            by_parent[parent.state_id].append(outcome)

        candidates: Beam = []
        scored_events: list[tuple[int, float, int, str | None]] = []
        for ask in asks:
            entries = []
            for outcome in by_parent[ask.parent.state_id]:
                self.ledger.merge_from(outcome.ledger)
                if outcome.error is not None:
                    entries.append(
                        {
                            "query": outcome.query,
                            "state_id": None,
                            "error": outcome.error,
                            "api_calls": outcome.ledger.api_times,
                            "retrievals": outcome.ledger.retrieval_times,
                        }
                    )
                    continue
                state_id = self._take_id()
                child = SearchState(
                    ask.parent.original_query,
                    ask.parent.asked_queries + (outcome.query,),
                    ask.parent.evidences + (outcome.evidence,),
                    outcome.answer,
                    outcome.score,
                    depth,
                    state_id,
                )
                candidates.append(child)
                entries.append(
                    {
                        "query": outcome.query,
                        "state_id": state_id,
                        "answer": outcome.answer,
                        "provenance": outcome.evidence.provenance,
                        "api_calls": outcome.api_before_score,
                        "retrievals": outcome.ledger.retrieval_times,
                    }
                )
                scored_events.append(
                    (
                        state_id,
                        outcome.score,
                        outcome.ledger.api_times - outcome.api_before_score,
                        outcome.score_parse_error,
                    )
                )
            self.ledger.merge_from(ask.ledger)
            payload = {
                "parent_id": ask.parent.state_id,
                "depth": depth,
                "raw_queries": ask.raw_queries,
                "kept_queries": ask.kept_queries,
                "api_calls": ask.ledger.api_times,
                "children": entries,
            }
            if ask.error is not None:
                payload["ask_error"] = ask.error
            self._emit("expanded", payload)
        for state_id, score, api_calls, parse_error in scored_events:
            self._emit_scored(state_id, score, api_calls, parse_error)
        return candidates

    def expand_state(self, parent: SearchState) -> Beam:
        """Expand one state into scored children (one generated query each)."""
        if parent.depth >= self.config.max_depth:
            raise ValueError(
                f"state {parent.state_id} is already at the maximum depth {self.config.max_depth}"
            )
        return self._expand_level([parent], parent.depth + 1)

    # -- the full loop --------------------------------------------------------------

    def run_search(self, question: str) -> SearchResult:
        """Run seeding, depth-bounded expansion, pruning, and final selection."""
        if not question or not question.strip():
            raise ValueError("question must be non-empty")
        try:
            beam = self.initialize_beam(question)
            final_beam = beam
            reason = EXIT_MAX_DEPTH
            for depth in range(1, self.config.max_depth + 1):
                candidates = self._expand_level(beam, depth)
                if not candidates:
                    # Nothing survived this depth; finalize on the previous beam.
                    reason = EXIT_NO_CANDIDATES
                    break
                beam = prune_beam(candidates, self.config.beam_size)
                kept_ids = {s.state_id for s in beam}
                self._emit(
                    "pruned",
                    {
                        "depth": depth,
                        "kept": [[s.state_id, s.score] for s in beam],
                        "dropped": sorted(
                            c.state_id for c in candidates if c.state_id not in kept_ids
                        ),
                    },
                )
                final_beam = beam
                if should_terminate(beam, self.config.score_threshold):
                    best = select_answer(beam)
                    self._emit(
                        "early_exit",
                        {
                            "depth": depth,
                            "state_id": best.state_id,
                            "score": best.score,
                            "threshold": self.config.score_threshold,
                        },
                    )
                    reason = EXIT_EARLY
                    break
        except ProviderError as err:
            raise SearchError(
                f"search aborted: {err}", tuple(self.trace), self.ledger
            ) from err
        winner = select_answer(final_beam)
        self._emit(
            "finished",
            {
                "state_id": winner.state_id,
                "answer": winner.answer,
                "score": winner.score,
                "reason": reason,
            },
        )
        return SearchResult(winner.answer, winner, tuple(self.trace), self.ledger)


def run_search(
    question: str,
    config: SearchConfig,
    provider: CompletionProvider,
    index: LexicalIndex | None = None,
    workers: int = 1,
) -> SearchResult:
    """Convenience wrapper: one fresh run per question."""
    return SearchRun(config, provider, index=index, workers=workers).run_search(question)
