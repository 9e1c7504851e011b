"""Independent reference computations used by the test-suite."""

import itertools

import numpy as np

LETTERS_2 = (1, 2, -1, -2)
END = 0


def pst_word_prob(contexts, next_probs, h):
    """P(h) by looking up, at every step, the longest suffix of the whole
    history among the tree contexts (no automaton involved)."""
    prob = 1.0
    symbols = list(h) + [END]
    for i, c in enumerate(symbols):
        hist = tuple(h[:i])
        ctx = next(hist[len(hist) - k :] for k in range(len(hist), -1, -1) if hist[len(hist) - k :] in contexts)
        prob *= next_probs[ctx][c]
    return prob


def all_reduced_words(n, max_len):
    letters = [a for i in range(1, n + 1) for a in (i, -i)]
    out = []
    for k in range(max_len + 1):
        for w in itertools.product(letters, repeat=k):
            if all(w[i] != -w[i + 1] for i in range(k - 1)):
                out.append(tuple(w))
    return out


def enumerate_posterior(p, contexts, next_probs, length_counts, corpus_size, max_len, n):
    """Eq.-2 posterior by brute force over every reduced word <= max_len."""
    p = tuple(p)
    weights = {}
    for h in all_reduced_words(n, max_len):
        if h[: len(p)] != p:
            continue
        length_prob = (length_counts.get(len(h), 0) + 1) / (corpus_size + max_len + 1)
        weights[h] = pst_word_prob(contexts, next_probs, h) * length_prob
    total = sum(weights.values())
    return {h: w / total for h, w in weights.items()}


class Order2Source:
    """Generator of reduced words over (1, 2, -1, -2) whose next-symbol
    law depends on at most the last two letters."""

    letters = LETTERS_2
    symbols = LETTERS_2 + (END,)

    def dist(self, hist):
        hist = tuple(hist)
        if not hist:
            return {**{a: 0.245 for a in self.letters}, END: 0.02}
        allowed = [a for a in self.letters if a != -hist[-1]]
        d = {a: 0.0 for a in self.letters}
        d[END] = 0.08
        if len(hist) == 1:
            for a in allowed:
                d[a] = 0.92 / 3
            return d
        x = hist[-2]
        for a in allowed:
            d[a] = 0.92 * (0.7 if a == x else 0.15)
        return d

    def sample(self, rng, k):
        out = []
        for _ in range(k):
            w = []
            while True:
                d = self.dist(w)
                c = self.symbols[rng.choice(len(self.symbols), p=[d[s] for s in self.symbols])]
                if c == END:
                    break
                w.append(int(c))
            out.append(tuple(w))
        return out

    def context_truth(self, context, memory=None):
        """Exact distribution of the symbol following ``context`` in the
        expected corpus counts, from the absorbing chain on truncated
        histories."""
        context = tuple(context)
        m = max(2, len(context)) if memory is None else memory
        states = all_reduced_words(2, m)
        index = {s: i for i, s in enumerate(states)}
        q = np.zeros((len(states), len(states)))
        for s in states:
            d = self.dist(s)
            for a in self.letters:
                if d[a] > 0:
                    q[index[s], index[(s + (a,))[-m:]]] += d[a]
        start = np.zeros(len(states))
        start[index[()]] = 1.0
        visits = np.linalg.solve((np.eye(len(states)) - q).T, start)
        expected = dict.fromkeys(self.symbols, 0.0)
        for s in states:
            if len(s) >= len(context) and s[len(s) - len(context) :] == context:
                d = self.dist(s)
                for c in self.symbols:
                    expected[c] += visits[index[s]] * d[c]
        total = sum(expected.values())
        return {c: v / total for c, v in expected.items()}
