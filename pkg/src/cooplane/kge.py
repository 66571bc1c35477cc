"""TransE embeddings: training with self-adversarial negative sampling, scoring and MRR."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import InputError, VocabularyError
from .semantics import Triple


@dataclass
class TripleStore:
    entities: tuple
    relations: tuple
    train: list
    valid: list

    def __post_init__(self):
        ents, rels = set(self.entities), set(self.relations)
        for split in (self.train, self.valid):
            if len(set(split)) != len(split):
                raise InputError("duplicate triple within a split")
            for t in split:
                if t.subject not in ents or t.object not in ents or t.relation not in rels:
                    raise VocabularyError(f"triple {t} uses a label outside the vocabulary")

    @classmethod
    def from_triples(cls, triples: Sequence[Triple], valid_fraction: float = 0.2,
                     seed: int = 0) -> "TripleStore":
        """Deduplicate, shuffle with ``seed`` and split."""
        uniq = list(dict.fromkeys(triples))
        if not uniq:
            raise InputError("no triples")
        ents = sorted({t.subject for t in uniq} | {t.object for t in uniq})
        rels = sorted({t.relation for t in uniq})
        order = np.random.default_rng(seed).permutation(len(uniq))
        uniq = [uniq[i] for i in order]
        n_valid = int(round(valid_fraction * len(uniq)))
        return cls(tuple(ents), tuple(rels), uniq[n_valid:], uniq[:n_valid])


@dataclass
class TrainConfig:
    dim: int = 100
    lr: float = 0.0005
    batch_size: int = 10000
    negatives: int = 5
    temperature: float = 1.0
    margin: float = 0.0
    norm: int = 1
    max_epochs: int = 3000
    eval_every: int = 100
    patience: int = 5
    mrr_side: str = "both"

    def __post_init__(self):
        for name in ("dim", "lr", "batch_size", "negatives", "temperature", "eval_every", "patience"):
            if not getattr(self, name) > 0:
                raise InputError(f"{name} must be positive")
        if self.max_epochs < 0:
            raise InputError("max_epochs must be non-negative")
        if self.norm not in (1, 2):
            raise InputError("norm must be 1 or 2")


class EmbeddingModel:
    def __init__(self, entities: Sequence[str], relations: Sequence[str], E: np.ndarray,
                 R: np.ndarray, norm: int = 1):
        self.entities = tuple(entities)
        self.relations = tuple(relations)
        self.E = np.asarray(E, dtype=float)
        self.R = np.asarray(R, dtype=float)
        self.norm = norm
        self.ent_index = {e: i for i, e in enumerate(self.entities)}
        self.rel_index = {r: i for i, r in enumerate(self.relations)}
        if not (np.all(np.isfinite(self.E)) and np.all(np.isfinite(self.R))):
            raise InputError("embedding contains non-finite values")

    @property
    def dim(self) -> int:
        return self.E.shape[1]

    def entity(self, label: str) -> int:
        try:
            return self.ent_index[label]
        except KeyError:
            raise VocabularyError(f"unknown entity {label!r}") from None

    def relation(self, label: str) -> int:
        try:
            return self.rel_index[label]
        except KeyError:
            raise VocabularyError(f"unknown relation {label!r}") from None

    def copy(self) -> "EmbeddingModel":
        return EmbeddingModel(self.entities, self.relations, self.E.copy(), self.R.copy(), self.norm)

    def to_dict(self) -> dict:
        return {"norm": self.norm, "entities": list(self.entities), "relations": list(self.relations),
                "E": self.E.tolist(), "R": self.R.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "EmbeddingModel":
        return cls(d["entities"], d["relations"], np.array(d["E"]), np.array(d["R"]), d.get("norm", 1))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "EmbeddingModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _dist(diff: np.ndarray, norm: int) -> np.ndarray:
    if norm == 1:
        return np.abs(diff).sum(axis=-1)
    return np.sqrt((diff * diff).sum(axis=-1))


def score(model: EmbeddingModel, h: str, r: str, t: str) -> float:
    """Plausibility -||e_h + e_r - e_t||; zero is the maximum."""
    diff = model.E[model.entity(h)] + model.R[model.relation(r)] - model.E[model.entity(t)]
    return -float(_dist(diff, model.norm))


def score_tails(model: EmbeddingModel, h: str, r: str, tails: Sequence[str]) -> np.ndarray:
    idx = [model.entity(t) for t in tails]
    diff = model.E[model.entity(h)] + model.R[model.relation(r)] - model.E[idx]
    return -_dist(diff, model.norm)


def init_model(store: TripleStore, config: TrainConfig, rng: np.random.Generator) -> EmbeddingModel:
    bound = 6.0 / math.sqrt(config.dim)
    E = rng.uniform(-bound, bound, (len(store.entities), config.dim))
    R = rng.uniform(-bound, bound, (len(store.relations), config.dim))
    E /= np.linalg.norm(E, axis=1, keepdims=True)
    return EmbeddingModel(store.entities, store.relations, E, R, config.norm)


def _encode(model: EmbeddingModel, triples: Sequence[Triple]) -> np.ndarray:
    return np.array([(model.entity(t.subject), model.relation(t.relation), model.entity(t.object))
                     for t in triples], dtype=np.int64).reshape(-1, 3)


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def loss_and_grads(model: EmbeddingModel, batch: np.ndarray, neg: np.ndarray, config: TrainConfig):
    """Self-adversarial loss and its gradients.

    ``neg`` has shape (B, k, 3). Per positive:
    softplus(d_pos - margin) + sum_i w_i softplus(margin - d_neg_i) with
    w = softmax(temperature * score_neg), the weights held constant.
    """
    E, R = model.E, model.R
    h, r, t = batch[:, 0], batch[:, 1], batch[:, 2]
    diff_p = E[h] + R[r] - E[t]
    d_p = _dist(diff_p, model.norm)
    nh, nr, nt = neg[..., 0], neg[..., 1], neg[..., 2]
    diff_n = E[nh] + R[nr] - E[nt]
    d_n = _dist(diff_n, model.norm)
    z = -config.temperature * d_n
    w = np.exp(z - z.max(axis=1, keepdims=True))
    w /= w.sum(axis=1, keepdims=True)
    B = len(batch)
    loss = float((_softplus(d_p - config.margin) + (w * _softplus(config.margin - d_n)).sum(axis=1)).mean())

    g_dp = _sigmoid(d_p - config.margin) / B
    g_dn = -w * _sigmoid(config.margin - d_n) / B
    if model.norm == 1:
        u_p, u_n = np.sign(diff_p), np.sign(diff_n)
    else:
        u_p = diff_p / np.maximum(d_p[:, None], 1e-12)
        u_n = diff_n / np.maximum(d_n[..., None], 1e-12)
    gp = g_dp[:, None] * u_p
    gn = g_dn[..., None] * u_n
    gE = np.zeros_like(E)
    gR = np.zeros_like(R)
    np.add.at(gE, h, gp)
    np.add.at(gE, t, -gp)
    np.add.at(gR, r, gp)
    k = E.shape[1]
    np.add.at(gE, nh.ravel(), gn.reshape(-1, k))
    np.add.at(gE, nt.ravel(), -gn.reshape(-1, k))
    np.add.at(gR, nr.ravel(), gn.reshape(-1, k))
    return loss, gE, gR


def corrupt(batch: np.ndarray, n_entities: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """k corruptions per positive: head or tail (fair coin) replaced by a uniform entity."""
    neg = np.repeat(batch[:, None, :], k, axis=1)
    side = rng.integers(0, 2, size=neg.shape[:2]) * 2  # column 0 (head) or 2 (tail)
    repl = rng.integers(0, n_entities, size=neg.shape[:2])
    rows, cols = np.indices(neg.shape[:2])
    neg[rows, cols, side] = repl
    return neg


class _Adam:
    def __init__(self, shapes, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainResult:
    model: EmbeddingModel
    history: list  # (epoch, loss, valid_mrr or None)
    best_epoch: int
    best_mrr: Optional[float]


def train(store: TripleStore, config: Optional[TrainConfig] = None, rng_seed: int = 0,
          return_result: bool = False):
    """Adam on the self-adversarial loss; entities renormalised after each step.

    With a validation split the checkpoint with the best validation MRR
    (initialisation included) is returned; training stops after ``patience``
    evaluations without improvement.
    """
    config = config or TrainConfig()
    if not store.train:
        raise InputError("empty training split")
    rng = np.random.default_rng(rng_seed)
    model = init_model(store, config, rng)
    pos = _encode(model, store.train)
    valid = store.valid
    opt = _Adam([model.E.shape, model.R.shape], config.lr)
    history = []
    best, best_epoch, best_mrr, stale = model.copy(), 0, None, 0
    if valid:
        best_mrr = mrr(model, valid, config.mrr_side)
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(pos))
        ep_loss = 0.0
        for start in range(0, len(pos), config.batch_size):
            batch = pos[order[start:start + config.batch_size]]
            neg = corrupt(batch, len(model.entities), config.negatives, rng)
            loss, gE, gR = loss_and_grads(model, batch, neg, config)
            opt.step([model.E, model.R], [gE, gR])
            model.E /= np.linalg.norm(model.E, axis=1, keepdims=True)
            ep_loss += loss * len(batch)
        ep_loss /= len(pos)
        m = None
        if valid and epoch % config.eval_every == 0:
            m = mrr(model, valid, config.mrr_side)
            if m > best_mrr:
                best, best_epoch, best_mrr, stale = model.copy(), epoch, m, 0
            else:
                stale += 1
        history.append((epoch, ep_loss, m))
        if valid and stale >= config.patience:
            break
    if not valid:
        best, best_epoch = model, config.max_epochs
    if return_result:
        return TrainResult(best, history, best_epoch, best_mrr)
    return best


def _ranks(model: EmbeddingModel, triples: Sequence[Triple], side: str) -> np.ndarray:
    enc = _encode(model, triples)
    E, R = model.E, model.R
    out = []
    for h, r, t in enc:
        if side in ("tail", "both"):
            s = -_dist(E[h] + R[r] - E, model.norm)
            out.append(int(np.sum(s >= s[t])))
        if side in ("head", "both"):
            s = -_dist(E + R[r] - E[t], model.norm)
            out.append(int(np.sum(s >= s[h])))
    return np.array(out)


def mrr(model: EmbeddingModel, triples: Sequence[Triple], side: str = "both") -> float:
    """Raw mean reciprocal rank; ties count against the true entity."""
    if side not in ("head", "tail", "both"):
        raise InputError(f"unknown corruption side {side!r}")
    if not triples:
        raise InputError("empty evaluation set")
    return float(np.mean(1.0 / _ranks(model, triples, side)))


def mrr_from_scores(true_scores: np.ndarray, candidate_scores: Sequence[np.ndarray]) -> float:
    """MRR when scores are already computed; each candidate array includes the true one."""
    ranks = [np.sum(c >= s) for s, c in zip(true_scores, candidate_scores)]
    return float(np.mean(1.0 / np.array(ranks, dtype=float)))


def beats_mean_corruption(model: EmbeddingModel, triples: Sequence[Triple]) -> float:
    """Fraction of triples scoring above the mean score of all head and tail corruptions."""
    enc = _encode(model, triples)
    E, R = model.E, model.R
    wins = 0
    for h, r, t in enc:
        st = -_dist(E[h] + R[r] - E, model.norm)
        sh = -_dist(E + R[r] - E[t], model.norm)
        true = st[t]
        corr = np.concatenate([np.delete(st, t), np.delete(sh, h)])
        wins += true > corr.mean()
    return wins / len(enc)


def toy_corpus(seed: int = 0, n_triples: int = 200, n_groups: int = 10, group_size: int = 5,
               n_relations: int = 4) -> list:
    """Entities in ordered groups; relation r maps group g to group g + r + 1.

    The shift does not wrap around: a cyclic map has no translation model.
    """
    all_triples = []
    n_ent = n_groups * group_size
    for r in range(n_relations):
        for h in range(n_ent):
            g = h // group_size + r + 1
            if g >= n_groups:
                continue
            for j in range(group_size):
                all_triples.append(Triple(f"e{h}", f"r{r}", f"e{g * group_size + j}"))
    if n_triples > len(all_triples):
        raise InputError("toy corpus smaller than requested size")
    rng = np.random.default_rng(seed)
    pick = np.sort(rng.choice(len(all_triples), n_triples, replace=False))
    return [all_triples[i] for i in pick]


def toy_store(seed: int = 0, n_triples: int = 200) -> TripleStore:
    """Toy corpus split 80/20; the full entity set is kept in the vocabulary."""
    triples = toy_corpus(seed, n_triples)
    store = TripleStore.from_triples(triples, 0.2, seed)
    ents = tuple(f"e{i}" for i in range(50))
    return TripleStore(ents, store.relations, store.train, store.valid)


def hypothesis_corpus(frames: Sequence, labels: Sequence[str], ontology, min_ratio: float = 1.0) -> list:
    """Facts linking each hypothesis entity to the categories typical for it.

    ``vehicle_<H> REL_f c`` is emitted when category ``c`` occurs under ``H``
    at least ``min_ratio`` times as often as under a uniform split.
    """
    from .inference import hypothesis_subject

    triples = []
    for h in ontology.maneuvers:
        sel = [f for f, lab in zip(frames, labels) if lab == h]
        if not sel:
            continue
        for i, feat in enumerate(ontology.features):
            counts = {c: 0 for c in feat.categories}
            for f in sel:
                counts[f[i]] += 1
            for c, n in counts.items():
                if n / len(sel) >= min_ratio / len(feat.categories):
                    triples.append(Triple(hypothesis_subject(ontology, h), feat.relation, c))
    return triples


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
