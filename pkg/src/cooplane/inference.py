"""Naive-Bayes maneuver posterior over linguistic frames and feasible-frame enumeration."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Iterator, Mapping, Optional, Sequence

import numpy as np

from .errors import InputError, VocabularyError
from .semantics import LinguisticFrame, Ontology


@dataclass(frozen=True)
class ManeuverPosterior:
    maneuvers: tuple
    probs: tuple

    def __post_init__(self):
        if abs(sum(self.probs) - 1.0) > 1e-9:
            raise ValueError(f"posterior does not sum to 1: {self.probs}")

    @property
    def argmax(self) -> str:
        # first maximum wins, so ties resolve laneKeep < leftLaneChange < rightLaneChange
        return self.maneuvers[int(np.argmax(self.probs))]

    def __getitem__(self, maneuver: str) -> float:
        return self.probs[self.maneuvers.index(maneuver)]

    def as_dict(self) -> dict:
        return dict(zip(self.maneuvers, self.probs))


class LikelihoodModel:
    """Prior P(H) and per-feature conditional tables P(category | feature, H).

    ``tables[i]`` has shape (n_hypotheses, n_categories_i); rows sum to one.
    """

    def __init__(self, ontology: Ontology, prior, tables: Sequence, source: str = "frequency"):
        self.ontology = ontology
        self.maneuvers = tuple(ontology.maneuvers)
        self.prior = np.asarray(prior, dtype=float)
        self.tables = [np.asarray(t, dtype=float) for t in tables]
        self.source = source
        self._validate()
        self._log_prior = np.log(self.prior)
        self._log_tables = [np.log(t) for t in self.tables]
        self._cat_index = [{c: j for j, c in enumerate(f.categories)} for f in ontology.features]

    def _validate(self):
        nh = len(self.maneuvers)
        if self.prior.shape != (nh,) or abs(self.prior.sum() - 1.0) > 1e-9 or np.any(self.prior <= 0):
            raise InputError("prior must be a positive distribution over the maneuvers")
        if len(self.tables) != len(self.ontology.features):
            raise InputError("one conditional table per feature is required")
        for t, f in zip(self.tables, self.ontology.features):
            if t.shape != (nh, len(f.categories)):
                raise InputError(f"table for {f.name} has shape {t.shape}")
            if np.any(t <= 0) or np.any(np.abs(t.sum(axis=1) - 1.0) > 1e-9):
                raise InputError(f"table for {f.name} must have positive rows summing to 1")

    def category_index(self, feature: int, category: str) -> int:
        try:
            return self._cat_index[feature][category]
        except KeyError:
            raise VocabularyError(
                f"{category!r} is not a category of {self.ontology.features[feature].name}") from None

    def likelihood(self, feature: str, category: str) -> np.ndarray:
        i = self.ontology.index(feature)
        return self.tables[i][:, self.category_index(i, category)]

    def posterior_batch(self, codes: np.ndarray) -> np.ndarray:
        """Posteriors for many frames given as integer category codes, shape (n, 12)."""
        logp = np.tile(self._log_prior, (codes.shape[0], 1))
        for i, lt in enumerate(self._log_tables):
            logp += lt.T[codes[:, i]]
        logp -= logp.max(axis=1, keepdims=True)
        p = np.exp(logp)
        return p / p.sum(axis=1, keepdims=True)

    def __call__(self, frame) -> ManeuverPosterior:
        return posterior(frame, self)

    # persistence
    def to_dict(self) -> dict:
        return {
            "source": self.source,
            "ontology": self.ontology.to_dict(),
            "prior": dict(zip(self.maneuvers, self.prior.tolist())),
            "tables": {
                f.name: {h: dict(zip(f.categories, row)) for h, row in zip(self.maneuvers, t.tolist())}
                for f, t in zip(self.ontology.features, self.tables)
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LikelihoodModel":
        onto = Ontology.from_dict(d["ontology"])
        prior = [d["prior"][h] for h in onto.maneuvers]
        tables = [[[d["tables"][f.name][h][c] for c in f.categories] for h in onto.maneuvers]
                  for f in onto.features]
        return cls(onto, prior, tables, source=d.get("source", "frequency"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))

    @classmethod
    def load(cls, path) -> "LikelihoodModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _evidence_items(evidence, model: LikelihoodModel):
    """Yield (feature index, category index) for a full frame or a partial mapping."""
    onto = model.ontology
    if isinstance(evidence, Mapping):
        for name, cat in evidence.items():
            i = onto.index(name)
            yield i, model.category_index(i, cat)
    else:
        if len(evidence) != len(onto.features):
            raise VocabularyError(f"frame has {len(evidence)} values, expected {len(onto.features)}")
        for i, cat in enumerate(evidence):
            yield i, model.category_index(i, cat)


def posterior(evidence, model: LikelihoodModel) -> ManeuverPosterior:
    """P(H | E) under conditional independence of features given H.

    ``evidence`` is a full frame (sequence in ontology order) or a mapping
    feature name -> category for partial evidence.
    """
    logp = model._log_prior.copy()
    for i, j in _evidence_items(evidence, model):
        logp += model._log_tables[i][:, j]
    logp -= logp.max()
    p = np.exp(logp)
    p /= p.sum()
    return ManeuverPosterior(model.maneuvers, tuple(float(x) for x in p))


def bayes_update(belief: np.ndarray, likelihood: np.ndarray) -> np.ndarray:
    """One sequential Bayes step: belief * likelihood, renormalised."""
    b = np.asarray(belief, dtype=float) * np.asarray(likelihood, dtype=float)
    return b / b.sum()


def sequential_posterior(evidence, model: LikelihoodModel, order: Optional[Sequence[int]] = None):
    """Posterior built one feature at a time; returns the belief after each step."""
    items = list(_evidence_items(evidence, model))
    if order is not None:
        items = [items[k] for k in order]
    belief = model.prior.copy()
    trace = [belief]
    for i, j in items:
        belief = bayes_update(belief, model.tables[i][:, j])
        trace.append(belief)
    return trace


def fit_likelihoods_frequency(frames: Sequence, labels: Sequence[str], ontology: Ontology,
                              alpha: float = 1.0) -> LikelihoodModel:
    """Laplace-smoothed frequency estimates from a labelled frame corpus."""
    if len(frames) == 0:
        raise InputError("empty corpus")
    if len(frames) != len(labels):
        raise InputError("frames and labels differ in length")
    hs = ontology.maneuvers
    h_index = {h: k for k, h in enumerate(hs)}
    missing = set(hs) - set(labels)
    if missing:
        raise InputError(f"corpus lacks maneuvers {sorted(missing)}")
    cat_index = [{c: j for j, c in enumerate(f.categories)} for f in ontology.features]
    counts = [np.zeros((len(hs), len(f.categories))) for f in ontology.features]
    totals = np.zeros(len(hs))
    for frame, label in zip(frames, labels):
        try:
            k = h_index[label]
        except KeyError:
            raise VocabularyError(f"unknown maneuver {label!r}") from None
        totals[k] += 1
        for i, cat in enumerate(frame):
            try:
                counts[i][k, cat_index[i][cat]] += 1
            except KeyError:
                raise VocabularyError(f"{cat!r} is not a category of {ontology.features[i].name}") from None
    tables = [(c + alpha) / (totals[:, None] + alpha * c.shape[1]) for c in counts]
    prior = totals / totals.sum()
    return LikelihoodModel(ontology, prior, tables, source="frequency")


def softmax(x, temperature: float = 1.0) -> np.ndarray:
    z = np.asarray(x, dtype=float) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def hypothesis_subject(ontology: Ontology, maneuver: str) -> str:
    return f"{ontology.subject}_{maneuver}"


def likelihoods_from_embeddings(model, ontology: Ontology, temperature: float = 1.0,
                                prior=None) -> LikelihoodModel:
    """Likelihood rows as a softmax of TransE plausibility over each feature's categories.

    The subject entity for hypothesis H is ``vehicle_<H>``; see
    :func:`cooplane.kge.hypothesis_corpus`.
    """
    from .kge import score_tails

    hs = ontology.maneuvers
    tables = []
    for f in ontology.features:
        rows = []
        for h in hs:
            s = score_tails(model, hypothesis_subject(ontology, h), f.relation, f.categories)
            rows.append(softmax(s, temperature))
        tables.append(np.array(rows))
    prior = np.full(len(hs), 1.0 / len(hs)) if prior is None else np.asarray(prior, dtype=float)
    return LikelihoodModel(ontology, prior, tables, source="embedding")


@dataclass(frozen=True)
class FeasibilityRule:
    """A constraint over a few features; ``check`` gets their values in ``features`` order."""

    name: str
    features: tuple
    check: Callable[..., bool]
    reason: str = ""

    def __call__(self, frame, ontology: Ontology) -> bool:
        return bool(self.check(*(frame[ontology.index(n)] for n in self.features)))


def _implies_not(lane_label, forbidden):
    return lambda lane, value: not (lane == lane_label and value == forbidden)


def _implies_eq(lane_label, required):
    return lambda lane, value: lane != lane_label or value == required


def default_rules(ontology: Ontology) -> list:
    """Constraints removing frames that reference a lane beyond the road edge."""
    lanes = ontology.feature("lane_id").categories
    leftmost, rightmost = lanes[0], lanes[-1]
    rules = []
    for edge, side in ((leftmost, "left"), (rightmost, "right")):
        Side = side.capitalize()
        rules += [
            FeasibilityRule(f"{edge}-no-{side}-gap", ("lane_id", "highest_frontal_gap_lane"),
                            _implies_not(edge, f"gap{Side}"),
                            f"no {side} lane exists in the {edge}"),
            FeasibilityRule(f"{edge}-no-{side}-attraction", ("lane_id", "highest_attraction_lane"),
                            _implies_not(edge, f"attraction{Side}"),
                            f"no {side} lane exists in the {edge}"),
            FeasibilityRule(f"{edge}-no-{side}-preceding", ("lane_id", f"ttc_{side}_preceding"),
                            _implies_eq(edge, "lowRisk"),
                            f"no {side}-preceding vehicle can exist in the {edge}"),
            FeasibilityRule(f"{edge}-no-{side}-following", ("lane_id", f"ttc_{side}_following"),
                            _implies_eq(edge, "lowRisk"),
                            f"no {side}-following vehicle can exist in the {edge}"),
        ]
    return rules


def is_feasible(frame, ontology: Ontology, rules: Iterable[FeasibilityRule]) -> bool:
    return all(r(frame, ontology) for r in rules)


def enumerate_feasible(ontology: Ontology, rules: Sequence[FeasibilityRule] = ()) -> Iterator[LinguisticFrame]:
    """Odometer over the category product in ontology order, pruning early.

    Each rule is checked as soon as its last referenced feature is assigned,
    so whole sub-trees of infeasible frames are skipped.
    """
    cats = [f.categories for f in ontology.features]
    n = len(cats)
    at_depth = [[] for _ in range(n)]
    for r in rules:
        idx = tuple(ontology.index(f) for f in r.features)
        at_depth[max(idx)].append((idx, r.check))

    values = [None] * n

    def walk(depth):
        checks = at_depth[depth]
        for c in cats[depth]:
            values[depth] = c
            if checks and not all(chk(*(values[i] for i in idx)) for idx, chk in checks):
                continue
            if depth == n - 1:
                yield LinguisticFrame(values)
            else:
                yield from walk(depth + 1)

    return walk(0)


def count_feasible(ontology: Ontology, rules: Sequence[FeasibilityRule] = ()) -> int:
    return sum(1 for _ in enumerate_feasible(ontology, rules))


def encode_frames(frames: Sequence, ontology: Ontology) -> np.ndarray:
    """Integer category codes, shape (n, 12)."""
    idx = [{c: j for j, c in enumerate(f.categories)} for f in ontology.features]
    out = np.empty((len(frames), len(idx)), dtype=np.int64)
    for r, frame in enumerate(frames):
        for i, c in enumerate(frame):
            out[r, i] = idx[i][c]
    return out
