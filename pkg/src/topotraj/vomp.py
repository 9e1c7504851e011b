"""Variable-order Markov model over h-signature words.

A prediction suffix tree (PST) is grown over contexts whose next-symbol
distribution differs enough from their parent's, then completed into a
probabilistic suffix automaton (PSA).  The PSA gives ``P(h)`` for a full
signature; combined with an empirical length prior it gives the posterior
over full signatures compatible with an observed partial signature.

Words are tuples of nonzero ints.  ``END`` (0) is the termination symbol
that closes a word; it is part of the continuation alphabet but never a
letter.
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from . import FORMAT_VERSION
from .errors import EmptyCorpus
from .topology import Word, is_compatible, is_reduced

log = logging.getLogger(__name__)

END = 0

DEFAULT_EPSILON = 0.01
DEFAULT_MAX_ORDER = 5


def letters_for(n_obstacles: int) -> tuple[int, ...]:
    return tuple(range(1, n_obstacles + 1)) + tuple(range(-1, -n_obstacles - 1, -1))


@dataclass
class CorpusStats:
    """Sub-word and continuation counts of a corpus of reduced words.

    ``word_counts[p]`` is F(p) for ``1 <= |p| <= max_order + 1``;
    ``next_counts[(p, c)]`` is F(c|p) for ``|p| <= max_order`` and ``c`` a
    letter or ``END``; ``totals[k]`` is the number of length-``k``
    sub-word occurrences.
    """

    word_counts: Counter
    next_counts: Counter
    length_counts: Counter
    totals: dict[int, int]
    n_obstacles: int
    corpus_size: int
    max_order: int

    @property
    def alphabet_size(self) -> int:
        return 2 * self.n_obstacles

    @property
    def letters(self) -> tuple[int, ...]:
        return letters_for(self.n_obstacles)

    @property
    def continuation(self) -> tuple[int, ...]:
        return self.letters + (END,)


def collect_stats(corpus: Sequence[Sequence[int]], max_order: int, n_obstacles: int | None = None) -> CorpusStats:
    if len(corpus) == 0:
        raise EmptyCorpus("cannot collect statistics from an empty corpus")
    if max_order < 1:
        raise ValueError("max_order must be >= 1")
    corpus = [tuple(w) for w in corpus]
    for w in corpus:
        if 0 in w or not is_reduced(w):
            raise ValueError(f"corpus word {w} is not a reduced word")
    inferred = max((abs(a) for w in corpus for a in w), default=0)
    if n_obstacles is None:
        n_obstacles = max(inferred, 1)
    elif inferred > n_obstacles:
        raise ValueError(f"corpus uses letter {inferred} but n_obstacles={n_obstacles}")

    word_counts: Counter = Counter()
    next_counts: Counter = Counter()
    totals: Counter = Counter()
    for w in corpus:
        n = len(w)
        for i in range(n):
            for k in range(1, min(max_order + 1, n - i) + 1):
                word_counts[w[i : i + k]] += 1
                totals[k] += 1
        # context w[i-k:i] followed by w[i] (or END at i == n)
        for i in range(n + 1):
            c = w[i] if i < n else END
            for k in range(0, min(max_order, i) + 1):
                next_counts[(w[i - k : i], c)] += 1
    length_counts = Counter(len(w) for w in corpus)
    return CorpusStats(
        word_counts=word_counts,
        next_counts=next_counts,
        length_counts=length_counts,
        totals=dict(totals),
        n_obstacles=n_obstacles,
        corpus_size=len(corpus),
        max_order=max_order,
    )


def laplace_word_prob(p: Sequence[int], stats: CorpusStats) -> float:
    """Rule-of-succession estimate (F(p) + 1) / (F(p^C) + |A|).

    F(p^C) counts the length-|p| sub-word occurrences other than ``p``.
    Not a normalised distribution over words: frequent words can exceed 1.
    """
    p = tuple(p)
    if not p:
        return 1.0
    f = stats.word_counts.get(p, 0)
    f_c = stats.totals.get(len(p), 0) - f
    return (f + 1) / (f_c + stats.alphabet_size)


def succession_ratio(f_a: float, f_not_a: float, alphabet_size: int) -> float:
    """Unnormalised (F(a|p) + 1) / (F(a^C|p) + |A|)."""
    return (f_a + 1) / (f_not_a + alphabet_size)


def next_distribution(p: Sequence[int], stats: CorpusStats) -> np.ndarray:
    """Add-one smoothed, normalised distribution over ``stats.continuation``."""
    p = tuple(p)
    counts = np.array([stats.next_counts.get((p, c), 0) for c in stats.continuation], dtype=float)
    counts += 1.0
    return counts / counts.sum()


def laplace_next_prob(a: int, p: Sequence[int], stats: CorpusStats) -> float:
    return float(next_distribution(p, stats)[stats.continuation.index(a)])


def kl_divergence(q: np.ndarray, r: np.ndarray) -> float:
    """KL(q || r) in nats with 0 log 0 = 0."""
    q = np.asarray(q, dtype=float)
    r = np.asarray(r, dtype=float)
    mask = q > 0
    if np.any(r[mask] == 0):
        return math.inf
    return float(np.sum(q[mask] * (np.log(q[mask]) - np.log(r[mask]))))


def scaled_kl(weight: float, q: np.ndarray, r: np.ndarray) -> float:
    return weight * kl_divergence(q, r)


def kl_criterion(ap: Sequence[int], p: Sequence[int], stats: CorpusStats) -> float:
    """P(ap) * KL(P(.|ap) || P(.|p)); P(ap) is capped at 1."""
    ap, p = tuple(ap), tuple(p)
    if ap[1:] != p:
        raise ValueError(f"{p} is not the longest proper suffix of {ap}")
    weight = min(1.0, laplace_word_prob(ap, stats))
    return max(0.0, scaled_kl(weight, next_distribution(ap, stats), next_distribution(p, stats)))


@dataclass
class PstNode:
    context: Word
    children: dict[int, "PstNode"] = field(default_factory=dict)
    next_probs: dict[int, float] = field(default_factory=dict)

    def is_leaf(self) -> bool:
        return not self.children

    def walk(self) -> Iterator["PstNode"]:
        yield self
        for a in sorted(self.children):
            yield from self.children[a].walk()

    def find(self, context: Sequence[int]) -> "PstNode | None":
        node = self
        for a in reversed(tuple(context)):
            node = node.children.get(a)
            if node is None:
                return None
        return node

    def add_path(self, context: Sequence[int]) -> bool:
        """Insert ``context`` and all its suffixes; True if anything was new."""
        node, added = self, False
        context = tuple(context)
        for k in range(1, len(context) + 1):
            a = context[-k]
            if a not in node.children:
                node.children[a] = PstNode(context[-k:])
                added = True
            node = node.children[a]
        return added

    def depth(self) -> int:
        return max(len(n.context) for n in self.walk())


def _assign_probs(root: PstNode, stats: CorpusStats) -> None:
    for node in root.walk():
        if not node.next_probs:
            dist = next_distribution(node.context, stats)
            node.next_probs = {c: float(q) for c, q in zip(stats.continuation, dist)}


def build_pst(
    corpus: Sequence[Sequence[int]] | CorpusStats,
    epsilon: float = DEFAULT_EPSILON,
    max_order: int = DEFAULT_MAX_ORDER,
    n_obstacles: int | None = None,
) -> PstNode:
    """Grow a prediction suffix tree.

    Candidates start as the observed single letters with P(a) >= epsilon; a
    candidate ``p`` is added (with its whole suffix path) when its scaled KL
    against its parent context reaches ``epsilon``, and while
    ``|p| < max_order`` it spawns the observed extensions ``ap`` with
    P(ap) >= epsilon.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    stats = corpus if isinstance(corpus, CorpusStats) else collect_stats(corpus, max_order, n_obstacles)
    if stats.max_order < max_order:
        raise ValueError("statistics were collected with a smaller max_order")
    def candidate(p: Word) -> bool:
        # unseen contexts only carry the smoothing prior, never evidence
        return stats.word_counts.get(p, 0) > 0 and laplace_word_prob(p, stats) >= epsilon

    root = PstNode(())
    queue = deque((a,) for a in stats.letters if candidate((a,)))
    while queue:
        p = queue.popleft()
        if kl_criterion(p, p[1:], stats) >= epsilon:
            root.add_path(p)
        if len(p) < max_order:
            queue.extend((a,) + p for a in stats.letters if candidate((a,) + p))
    _assign_probs(root, stats)
    return root


def complete_tree(root: PstNode, stats: CorpusStats) -> PstNode:
    """Add nodes until every leaf's longest proper prefix is in the tree."""
    changed = True
    while changed:
        changed = False
        for node in list(root.walk()):
            if node.is_leaf() and len(node.context) > 1:
                prefix = node.context[:-1]
                if root.find(prefix) is None:
                    root.add_path(prefix)
                    changed = True
    _assign_probs(root, stats)
    return root


@dataclass
class LengthDistribution:
    """Distribution of full signature lengths on ``0..max_length``."""

    probs: np.ndarray

    @classmethod
    def from_counts(cls, length_counts: Mapping[int, int], max_length: int | None = None) -> "LengthDistribution":
        if max_length is None:
            max_length = max(length_counts, default=0)
        counts = np.array([length_counts.get(k, 0) for k in range(max_length + 1)], dtype=float) + 1.0
        return cls(counts / counts.sum())

    @property
    def max_length(self) -> int:
        return len(self.probs) - 1

    def prob(self, k: int) -> float:
        return float(self.probs[k]) if 0 <= k < len(self.probs) else 0.0


@dataclass
class Psa:
    """Probabilistic suffix automaton.

    States are the contexts of a completed PST (the suffix-closed tree,
    internal nodes included).  ``transitions[(state, a)]`` is the longest
    suffix of ``state + (a,)`` among the states.
    """

    states: tuple[Word, ...]
    next_probs: dict[Word, dict[int, float]]
    transitions: dict[tuple[Word, int], Word]
    n_obstacles: int
    epsilon: float
    max_order: int
    max_signature_length: int
    lengths: LengthDistribution
    support: tuple[Word, ...] = ()

    @property
    def letters(self) -> tuple[int, ...]:
        return letters_for(self.n_obstacles)

    @property
    def alphabet_size(self) -> int:
        return 2 * self.n_obstacles

    initial_state = ()

    def step(self, state: Word, a: int) -> tuple[Word, float]:
        return self.transitions[(state, a)], self.next_probs[state][a]

    def termination_prob(self, state: Word) -> float:
        return self.next_probs[state][END]

    # -- serialisation -------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "psa",
            "n_obstacles": self.n_obstacles,
            "alphabet_size": self.alphabet_size,
            "epsilon": self.epsilon,
            "max_order": self.max_order,
            "max_signature_length": self.max_signature_length,
            "states": [
                {
                    "context": list(s),
                    "next": {str(c): q for c, q in sorted(self.next_probs[s].items())},
                    "transitions": {str(a): list(self.transitions[(s, a)]) for a in sorted(self.letters)},
                }
                for s in self.states
            ],
            "length_distribution": [float(q) for q in self.lengths.probs],
            "support": [list(h) for h in self.support],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Psa":
        if d.get("format_version") != FORMAT_VERSION or d.get("kind") != "psa":
            raise ValueError("not a PSA model document of a supported version")
        states, next_probs, transitions = [], {}, {}
        for entry in d["states"]:
            s = tuple(entry["context"])
            states.append(s)
            next_probs[s] = {int(c): float(q) for c, q in entry["next"].items()}
            for a, t in entry["transitions"].items():
                transitions[(s, int(a))] = tuple(t)
        return cls(
            states=tuple(states),
            next_probs=next_probs,
            transitions=transitions,
            n_obstacles=int(d["n_obstacles"]),
            epsilon=float(d["epsilon"]),
            max_order=int(d["max_order"]),
            max_signature_length=int(d["max_signature_length"]),
            lengths=LengthDistribution(np.array(d["length_distribution"], dtype=float)),
            support=tuple(tuple(h) for h in d["support"]),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "Psa":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _state_order(s: Word):
    return (len(s), [(abs(a), a < 0) for a in reversed(s)])


def complete_to_psa(
    root: PstNode,
    stats: CorpusStats,
    epsilon: float = DEFAULT_EPSILON,
    support: Iterable[Word] = (),
) -> Psa:
    root = complete_tree(root, stats)
    states = tuple(sorted((n.context for n in root.walk()), key=_state_order))
    state_set = set(states)
    next_probs = {n.context: dict(n.next_probs) for n in root.walk()}
    transitions = {}
    for s in states:
        for a in stats.letters:
            sa = s + (a,)
            k = next(k for k in range(len(sa), -1, -1) if sa[len(sa) - k :] in state_set)
            transitions[(s, a)] = sa[len(sa) - k :]
    max_len = max(stats.length_counts, default=0)
    return Psa(
        states=states,
        next_probs=next_probs,
        transitions=transitions,
        n_obstacles=stats.n_obstacles,
        epsilon=epsilon,
        max_order=stats.max_order,
        max_signature_length=max_len,
        lengths=LengthDistribution.from_counts(stats.length_counts, max_len),
        support=tuple(sorted(set(support), key=lambda h: (len(h), h))),
    )


def learn_psa(
    corpus: Sequence[Sequence[int]],
    epsilon: float = DEFAULT_EPSILON,
    max_order: int = DEFAULT_MAX_ORDER,
    n_obstacles: int | None = None,
) -> Psa:
    """Fit a PSA to a corpus of reduced h-signatures.

    The posterior support is the set of distinct training signatures.
    """
    stats = collect_stats(corpus, max_order, n_obstacles)
    root = build_pst(stats, epsilon, max_order)
    psa = complete_to_psa(root, stats, epsilon, support=(tuple(w) for w in corpus))
    log.info("learned PSA with %d states from %d words", len(psa.states), stats.corpus_size)
    return psa


def sequence_prob(h: Sequence[int], psa: Psa) -> float:
    """P(h): product of transition probabilities along ``h`` times the
    termination probability of the final state; 0 beyond the longest
    training signature."""
    if len(h) > psa.max_signature_length:
        return 0.0
    state, prob = psa.initial_state, 1.0
    for a in h:
        state, q = psa.step(state, a)
        prob *= q
    return prob * psa.termination_prob(state)


@dataclass
class Posterior:
    probs: dict[Word, float]
    fallback: bool = False

    def __getitem__(self, h: Word) -> float:
        return self.probs.get(tuple(h), 0.0)


def posterior_over_full(
    p: Sequence[int],
    psa: Psa,
    lengths: LengthDistribution | None = None,
    support: Iterable[Word] | None = None,
    use_length_prior: bool = True,
) -> Posterior:
    """P(h | p) over full signatures ``h`` in ``support`` compatible with ``p``.

    With ``use_length_prior`` each ``h`` is weighted by P(h) P(|h|), the
    length prior renormalised over lengths >= |p|; without it by P(h)
    alone.  If no compatible ``h`` has positive mass, the unconditioned
    weights over the support are returned with ``fallback=True``.
    """
    p = tuple(p)
    lengths = psa.lengths if lengths is None else lengths
    support = psa.support if support is None else tuple(tuple(h) for h in support)

    def weight(h: Word, feasible_mass: float) -> float:
        w = sequence_prob(h, psa)
        if use_length_prior:
            w *= lengths.prob(len(h)) / feasible_mass if feasible_mass > 0 else 0.0
        return w

    feasible = float(sum(lengths.prob(k) for k in range(len(p), lengths.max_length + 1)))
    raw = {h: (weight(h, feasible) if is_compatible(h, p) else 0.0) for h in support}
    total = sum(raw.values())
    if total > 0:
        return Posterior({h: w / total for h, w in raw.items()})
    log.debug("no compatible signature for partial %s; falling back to prior", p)
    raw = {h: weight(h, 1.0) for h in support}
    total = sum(raw.values())
    if total <= 0:
        n = len(support)
        return Posterior({h: 1.0 / n for h in support}, fallback=True)
    return Posterior({h: w / total for h, w in raw.items()}, fallback=True)


def enumerate_reduced_words(n_obstacles: int, max_length: int) -> list[Word]:
    """All reduced words over ``+-1..+-n`` of length ``<= max_length``."""
    letters = letters_for(n_obstacles)
    out: list[Word] = [()]
    frontier: list[Word] = [()]
    for _ in range(max_length):
        frontier = [w + (a,) for w in frontier for a in letters if not w or w[-1] != -a]
        out.extend(frontier)
    return out

