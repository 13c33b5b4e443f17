"""Privacy-leakage battery: location hiding, Viterbi sequence reconstruction
against a Markov prior, and nearest-trace membership inference.

The adversary prior is meant to be trained on the *published* synthetic
corpus: the attacks measure what the released data alone leaks about the
individuals behind it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dataio import Corpus, GridTrace
from .errors import DomainError
from .generators import MarkovGenerator, _bucket_of

logger = logging.getLogger(__name__)

HIDDEN = -1


@dataclass
class ObfuscatedTrace:
    """Trace with independently suppressed points; HIDDEN marks suppressed cells."""

    user_id: str
    cells: np.ndarray          # observed cell id, or HIDDEN
    timestamps: np.ndarray
    hidden_mask: np.ndarray

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=np.int64)
        self.hidden_mask = np.asarray(self.hidden_mask, dtype=bool)
        if not np.array_equal(self.hidden_mask, self.cells == HIDDEN):
            raise DomainError("hidden_mask must mark exactly the HIDDEN entries")


def hide_locations(trace: GridTrace, p_hide: float, rng) -> ObfuscatedTrace:
    """Replace each point by HIDDEN independently with probability p_hide."""
    if not 0.0 <= p_hide <= 1.0:
        raise DomainError(f"p_hide must lie in [0, 1], got {p_hide}")
    mask = rng.uniform(size=len(trace)) < p_hide
    cells = np.where(mask, HIDDEN, trace.cells)
    return ObfuscatedTrace(trace.user_id, cells, trace.timestamps.copy(), mask)


# ---------------------------------------------------------------------------
# sequence reconstruction attack
# ---------------------------------------------------------------------------

class _ViterbiPrior:
    """Log-space order-1 reduction of a Markov prior, cached per time bucket."""

    def __init__(self, prior: MarkovGenerator):
        self.prior = prior
        self.alphabet = prior.alphabet
        self.index = {int(c): i for i, c in enumerate(prior.alphabet)}
        self._log_trans: dict[int, np.ndarray] = {}
        self._log_init: dict[int, np.ndarray] = {}

    def log_trans(self, bucket: int) -> np.ndarray:
        if bucket not in self._log_trans:
            self._log_trans[bucket] = np.log(self.prior.transition_matrix(bucket))
        return self._log_trans[bucket]

    def log_init(self, bucket: int) -> np.ndarray:
        if bucket not in self._log_init:
            self._log_init[bucket] = np.log(self.prior.stationary_distribution(bucket))
        return self._log_init[bucket]


def reconstruct_trace(obf: ObfuscatedTrace, prior: MarkovGenerator) -> np.ndarray:
    """Most probable completion of the hidden cells under the prior.

    Viterbi runs only over maximal hidden segments; observed points pin the
    state (observed cells unknown to the prior leave the step unconstrained).
    """
    vp = _ViterbiPrior(prior)
    return _reconstruct(obf, vp)


def _reconstruct(obf: ObfuscatedTrace, vp: _ViterbiPrior) -> np.ndarray:
    n = len(obf.cells)
    buckets = _bucket_of(obf.timestamps, vp.prior.time_buckets)
    known = np.full(n, -1, dtype=np.int64)  # pinned state index, -1 = free
    for i in range(n):
        if not obf.hidden_mask[i]:
            known[i] = vp.index.get(int(obf.cells[i]), -1)

    out = obf.cells.copy()
    i = 0
    while i < n:
        if known[i] >= 0:
            i += 1
            continue
        j = i
        while j < n and known[j] < 0:
            j += 1
        # decode segment [i, j) with anchors at i-1 and j when pinned
        states = _viterbi_segment(vp, buckets, i, j,
                                  left=known[i - 1] if i > 0 and known[i - 1] >= 0 else None,
                                  right=known[j] if j < n else None)
        out[i:j] = vp.alphabet[states]
        i = j
    return out


def _viterbi_segment(vp: _ViterbiPrior, buckets, i, j, left, right) -> np.ndarray:
    v = vp.alphabet.size
    length = j - i
    score = vp.log_init(int(buckets[i])) if left is None else vp.log_trans(int(buckets[i]))[left]
    score = score.copy()
    back = np.empty((length, v), dtype=np.int64)
    back[0] = -1
    for t in range(1, length):
        log_a = vp.log_trans(int(buckets[i + t]))
        cand = score[:, None] + log_a
        back[t] = np.argmax(cand, axis=0)
        score = cand[back[t], np.arange(v)]
    if right is not None:
        # one more transition into the pinned right anchor
        log_a = vp.log_trans(int(buckets[j]))
        final = score + log_a[:, right]
    else:
        final = score
    states = np.empty(length, dtype=np.int64)
    states[-1] = int(np.argmax(final))
    for t in range(length - 1, 0, -1):
        states[t - 1] = back[t, states[t]]
    return states


def sequence_attack(truth: Corpus, obfuscated: list[ObfuscatedTrace],
                    prior: MarkovGenerator) -> float:
    """Fraction of hidden cells recovered exactly; traces without hidden
    points are excluded."""
    if len(truth.traces) != len(obfuscated):
        raise DomainError("truth corpus and obfuscated list must align")
    vp = _ViterbiPrior(prior)
    correct = 0
    total = 0
    for trace, obf in zip(truth.traces, obfuscated):
        if not obf.hidden_mask.any():
            continue
        recovered = _reconstruct(obf, vp)
        mask = obf.hidden_mask
        correct += int(np.sum(recovered[mask] == trace.cells[mask]))
        total += int(mask.sum())
    if total == 0:
        raise DomainError("nothing to attack: no hidden points in the corpus")
    return correct / total


def run_sequence_attack(truth: Corpus, prior: MarkovGenerator, p_hide: float,
                        rng) -> float:
    """Hide-then-reconstruct convenience wrapper."""
    obfuscated = [hide_locations(t, p_hide, rng) for t in truth.traces]
    return sequence_attack(truth, obfuscated, prior)


# ---------------------------------------------------------------------------
# membership inference attack
# ---------------------------------------------------------------------------

def visit_frequency(trace: GridTrace) -> dict[int, float]:
    """Normalized per-cell visit (run) frequencies."""
    from .metrics import visit_runs

    run_cells, _, _ = visit_runs(trace)
    freq: dict[int, float] = {}
    for c in run_cells:
        freq[int(c)] = freq.get(int(c), 0.0) + 1.0
    total = run_cells.size
    return {c: k / total for c, k in freq.items()}


def _tv_sparse(p: dict, q: dict) -> float:
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(c, 0.0) - q.get(c, 0.0)) for c in keys)


def membership_scores(syn: Corpus, targets: list[GridTrace]) -> np.ndarray:
    """Min over synthetic traces of the visit-frequency TV distance."""
    syn_freqs = [visit_frequency(t) for t in syn.traces]
    scores = np.empty(len(targets))
    for i, target in enumerate(targets):
        tf = visit_frequency(target)
        scores[i] = min(_tv_sparse(tf, sf) for sf in syn_freqs)
    return scores


@dataclass
class MembershipResult:
    accuracy: float
    auc: float
    threshold: float
    member_scores: np.ndarray = field(default_factory=lambda: np.empty(0))
    nonmember_scores: np.ndarray = field(default_factory=lambda: np.empty(0))

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "auc": self.auc, "threshold": self.threshold}


def _auc_lower_is_member(member: np.ndarray, nonmember: np.ndarray) -> float:
    """Mann-Whitney AUC of the rule 'member iff score is small'."""
    wins = 0.0
    for s in member:
        wins += np.sum(s < nonmember) + 0.5 * np.sum(s == nonmember)
    return float(wins / (member.size * nonmember.size))


def membership_attack(syn: Corpus, members: list[GridTrace],
                      nonmembers: list[GridTrace], rng,
                      calibration_fraction: float = 0.2) -> MembershipResult:
    """Threshold the nearest-synthetic-trace distance; the threshold is tuned
    on a held-out calibration split, accuracy and AUC reported on the rest."""
    if not members or not nonmembers:
        raise DomainError("need non-empty member and non-member sets")
    m_scores = membership_scores(syn, members)
    n_scores = membership_scores(syn, nonmembers)

    def _split(scores):
        k = max(1, int(round(calibration_fraction * scores.size)))
        perm = rng.permutation(scores.size)
        return scores[perm[:k]], scores[perm[k:]]

    m_cal, m_eval = _split(m_scores)
    n_cal, n_eval = _split(n_scores)
    if m_eval.size == 0:
        m_eval = m_cal
    if n_eval.size == 0:
        n_eval = n_cal

    threshold = _best_threshold(m_cal, n_cal)
    correct = np.sum(m_eval <= threshold) + np.sum(n_eval > threshold)
    accuracy = float(correct / (m_eval.size + n_eval.size))
    auc = _auc_lower_is_member(m_eval, n_eval)
    return MembershipResult(accuracy, auc, threshold, m_scores, n_scores)


def _best_threshold(member: np.ndarray, nonmember: np.ndarray) -> float:
    pooled = np.unique(np.concatenate([member, nonmember]))
    candidates = np.concatenate([[pooled[0] - 1e-9],
                                 (pooled[:-1] + pooled[1:]) / 2,
                                 [pooled[-1] + 1e-9]])
    best_t, best_acc = candidates[0], -1.0
    for t in candidates:
        acc = (np.sum(member <= t) + np.sum(nonmember > t)) / (member.size + nonmember.size)
        if acc > best_acc:
            best_acc, best_t = acc, t
    return float(best_t)


@dataclass
class PrivacyResult:
    sequence_attack_accuracy: float
    membership_accuracy: float
    membership_auc: float
    random_baseline_sequence: float
    random_baseline_membership: float
    hide_probability: float

    def to_dict(self) -> dict:
        return {
            "sequence_attack_accuracy": self.sequence_attack_accuracy,
            "membership_accuracy": self.membership_accuracy,
            "membership_auc": self.membership_auc,
            "random_baseline_sequence": self.random_baseline_sequence,
            "random_baseline_membership": self.random_baseline_membership,
            "hide_probability": self.hide_probability,
        }
