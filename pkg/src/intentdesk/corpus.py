"""Dataset model, splitting, and the seeded synthetic multi-tenant corpus generator."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .catalog import ClientRegistry, Industry, IntentCatalog


@dataclass(frozen=True)
class LabeledExample:
    ticket_id: str
    client_id: str
    subject: str
    description: str
    gold_intent: int

    def __post_init__(self):
        if not self.subject and not self.description:
            raise ValueError(f"ticket {self.ticket_id}: subject and description both empty")

    @property
    def text(self) -> str:
        """Subject concatenated with description; the model input."""
        return f"{self.subject} {self.description}".strip()


@dataclass
class DatasetSplit:
    train: list[LabeledExample] = field(default_factory=list)
    validation: list[LabeledExample] = field(default_factory=list)
    test: list[LabeledExample] = field(default_factory=list)


def stratified_split(
    examples: Sequence[LabeledExample], validation_fraction: float, seed: int
) -> DatasetSplit:
    """Hold out `validation_fraction` of each intent class, preserving class proportions.

    Per-class validation counts are round(fraction * n_class), then nudged by
    +/-1 on the largest classes so the global total hits round(fraction * N).
    """
    if not (0 < validation_fraction < 1):
        raise ValueError("validation_fraction must be in (0, 1)")
    by_class: dict[int, list[LabeledExample]] = {}
    for ex in examples:
        by_class.setdefault(ex.gold_intent, []).append(ex)
    for intent, exs in by_class.items():
        if len(exs) < 2:
            raise ValueError(f"intent {intent} has {len(exs)} example(s); need >= 2")

    rng = np.random.default_rng(seed)
    total_target = round(validation_fraction * len(examples))
    counts = {c: int(round(validation_fraction * len(exs))) for c, exs in by_class.items()}
    # Keep every class in both sides where possible, then fix the global total.
    for c, exs in by_class.items():
        counts[c] = min(counts[c], len(exs) - 1)
    classes_by_size = sorted(by_class, key=lambda c: (-len(by_class[c]), c))
    i = 0
    while sum(counts.values()) != total_target and i < 10 * len(classes_by_size):
        c = classes_by_size[i % len(classes_by_size)]
        delta = 1 if sum(counts.values()) < total_target else -1
        if 0 <= counts[c] + delta <= len(by_class[c]) - 1:
            counts[c] += delta
        i += 1

    split = DatasetSplit()
    for c in sorted(by_class):
        exs = list(by_class[c])
        perm = rng.permutation(len(exs))
        n_val = counts[c]
        for j, p in enumerate(perm):
            (split.validation if j < n_val else split.train).append(exs[p])
    split.train.sort(key=lambda e: e.ticket_id)
    split.validation.sort(key=lambda e: e.ticket_id)
    return split


def industry_subset(
    split: DatasetSplit, industry: Industry, registry: ClientRegistry
) -> DatasetSplit:
    """Industry view of a split.

    Train/validation keep any example whose gold intent belongs to the industry,
    regardless of the client. Test additionally requires the example's client to
    be assigned to the industry.
    """
    valid = industry.intents

    def in_intents(ex):
        return ex.gold_intent in valid

    def client_assigned(ex):
        return ex.client_id in registry and registry.get(ex.client_id).industry == industry.name

    return DatasetSplit(
        train=[e for e in split.train if in_intents(e)],
        validation=[e for e in split.validation if in_intents(e)],
        test=[e for e in split.test if in_intents(e) and client_assigned(e)],
    )


def ood_split(
    examples: Sequence[LabeledExample],
    test_client_fraction: float = 0.106,
    validation_fraction: float = 0.1309,
    seed: int = 0,
) -> DatasetSplit:
    """Hold out entire clients as the test set, then stratify the rest.

    `test_client_fraction` is the target share of tickets contributed by the
    held-out clients; clients are drawn in shuffled order until the share is
    reached. The default validation fraction of the remainder targets overall
    proportions near 77.7 / 11.7 / 10.6.
    """
    clients = sorted({ex.client_id for ex in examples})
    if len(clients) < 3:
        raise ValueError("need at least 3 clients for an out-of-domain split")
    rng = np.random.default_rng(seed)
    order = [clients[i] for i in rng.permutation(len(clients))]
    sizes = {c: 0 for c in clients}
    for ex in examples:
        sizes[ex.client_id] += 1
    target = test_client_fraction * len(examples)
    held: set[str] = set()
    got = 0
    for c in order:
        if got >= target:
            break
        held.add(c)
        got += sizes[c]
    test = [ex for ex in examples if ex.client_id in held]
    rest = [ex for ex in examples if ex.client_id not in held]
    inner = stratified_split(rest, validation_fraction, seed)
    return DatasetSplit(train=inner.train, validation=inner.validation, test=test)


@dataclass(frozen=True)
class SynthesisConfig:
    """Knobs for the synthetic desk-scale corpus.

    Confusable intent pairs are the load-bearing feature: two intents in
    different industries share almost all keyword mass, so only the client's
    relevant-intents list can disambiguate their tickets. Ambiguous same-industry
    pairs are the second mechanism: textually identical twins where each client
    uses one twin heavily and the other at a share so small that it falls below
    every coverage cut short of 100%. Resolving a twin ticket requires keying on
    the client's list composition, and at full test coverage the rare twin's
    membership bit appears for the first time — exactly the kind of list
    addition that exact-list training never sees but noise-injected training
    does.
    """

    num_intents: int = 60
    num_industries: int = 3
    intents_per_industry: int = 20
    industry_overlap_fraction: float = 0.10
    clients_per_industry: int = 40
    tickets_per_client: tuple[int, int] = (240, 420)
    zipf_exponent: float = 1.15
    confusable_pair_fraction: float = 0.40
    confusable_shared_mass: float = 0.92
    ambiguous_pair_fraction: float = 0.20
    ambiguous_pair_rate: float = 1.0
    dominant_share: tuple[float, float] = (0.09, 0.16)
    subordinate_share: tuple[float, float] = (0.005, 0.009)
    dust_intents_per_client: int = 8
    dust_keyword_rate: float = 0.15
    keywords_per_intent: int = 8
    noise_vocab_size: int = 300
    keyword_token_rate: float = 0.5
    tokens_per_ticket: tuple[int, int] = (6, 12)
    client_intent_fraction: tuple[float, float] = (0.15, 0.35)
    seed: int = 0

    def __post_init__(self):
        if min(self.num_intents, self.num_industries, self.intents_per_industry,
               self.clients_per_industry, self.keywords_per_intent,
               self.noise_vocab_size) < 1:
            raise ValueError("all counts must be positive")
        if self.num_industries * self.intents_per_industry != self.num_intents:
            raise ValueError("num_intents must equal num_industries * intents_per_industry")
        for frac in (self.industry_overlap_fraction, self.confusable_pair_fraction):
            if not (0 <= frac <= 1):
                raise ValueError("fractions must lie in [0, 1]")
        if self.tickets_per_client[0] > self.tickets_per_client[1]:
            raise ValueError("tickets_per_client range inverted")
        if self.tokens_per_ticket[0] > self.tokens_per_ticket[1]:
            raise ValueError("tokens_per_ticket range inverted")


@dataclass
class CorpusBundle:
    catalog: IntentCatalog
    industries: list[Industry]
    registry: ClientRegistry
    examples: list[LabeledExample]
    confusable_pairs: list[tuple[int, int]]
    ambiguous_pairs: list[tuple[int, int]]  # textually identical same-industry twins
    keyword_dists: dict[int, tuple[list[str], np.ndarray]]


def _zipf_weights(n: int, exponent: float) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** exponent
    return w / w.sum()


def generate_corpus(config: SynthesisConfig) -> CorpusBundle:
    """Deterministic synthetic corpus: catalog, industries, clients, tickets."""
    rng = np.random.default_rng(config.seed)
    C = config.num_intents
    labels = tuple(f"intent_{i:03d}" for i in range(C))
    catalog = IntentCatalog(labels)

    per = config.intents_per_industry
    base_sets = [set(range(g * per, (g + 1) * per)) for g in range(config.num_industries)]

    # Confusable twins live in adjacent industries; pick them from each block's head
    # so they stay clear of the overlap borrowing below.
    n_pairs = int(round(config.confusable_pair_fraction * C / 2))
    n_pairs = min(n_pairs, per * config.num_industries // 2)
    pairs: list[tuple[int, int]] = []
    used: set[int] = set()
    slot = [0] * config.num_industries
    for t in range(n_pairs):
        ga = t % config.num_industries
        gb = (t + 1) % config.num_industries
        if slot[ga] >= per or slot[gb] >= per or ga == gb:
            break
        a = ga * per + slot[ga]
        slot[ga] += 1
        b = gb * per + slot[gb]
        slot[gb] += 1
        pairs.append((a, b))
        used.update((a, b))

    # Ambiguous same-industry pairs: textually identical twins, one dominant and
    # one small-share per client; kept out of the regular pool draw.
    n_amb = int(round(config.ambiguous_pair_fraction * C / 2))
    amb_pairs: list[tuple[int, int]] = []
    pairs_by_industry: dict[int, list[tuple[int, int]]] = {g: [] for g in range(config.num_industries)}
    for gi in range(config.num_industries):
        free = sorted(i for i in base_sets[gi] if i not in used)
        want = (n_amb // config.num_industries) + (1 if gi < n_amb % config.num_industries else 0)
        for j in range(want):
            if 2 * j + 1 >= len(free):
                break
            a, r = free[2 * j], free[2 * j + 1]
            amb_pairs.append((a, r))
            pairs_by_industry[gi].append((a, r))
            used.update((a, r))
    twin_ids = {i for p in amb_pairs for i in p}

    # Industry overlap: each industry also claims a few non-confusable intents
    # from the next block, so industry subsets are not disjoint.
    n_overlap = int(round(config.industry_overlap_fraction * per))
    industry_sets = [set(s) for s in base_sets]
    for gi in range(config.num_industries):
        donor = base_sets[(gi + 1) % config.num_industries]
        candidates = sorted(i for i in donor if i not in used)
        industry_sets[gi].update(candidates[:n_overlap])
    industries = [
        Industry(f"industry_{gi}", frozenset(industry_sets[gi]))
        for gi in range(config.num_industries)
    ]

    # Keyword vocabulary and per-intent sampling distribution over it.
    kw = config.keywords_per_intent
    keyword_dists: dict[int, tuple[list[str], np.ndarray]] = {}
    for i in range(C):
        words = [f"kw{i}_{j}" for j in range(kw)]
        keyword_dists[i] = (words, np.full(kw, 1.0 / kw))
    for (a, b), s in [(p, config.confusable_shared_mass) for p in pairs] + [
        (p, 1.0) for p in amb_pairs
    ]:
        n_shared = max(1, int(round(s * kw)))
        shared = [f"sh{a}_{b}_{j}" for j in range(n_shared)]
        n_unique = kw - n_shared
        for intent in (a, b):
            if n_unique == 0 or s >= 1.0:
                keyword_dists[intent] = (shared, np.full(len(shared), 1.0 / len(shared)))
                continue
            unique = [f"kw{intent}_{j}" for j in range(n_unique)]
            words = shared + unique
            probs = np.concatenate(
                [np.full(n_shared, s / n_shared), np.full(n_unique, (1 - s) / n_unique)]
            )
            keyword_dists[intent] = (words, probs / probs.sum())
    noise_vocab = [f"word{j}" for j in range(config.noise_vocab_size)]

    registry = ClientRegistry(catalog, industries)
    examples: list[LabeledExample] = []
    ticket_no = 0
    client_no = 0
    for gi, industry in enumerate(industries):
        pool = sorted(industry.intents)
        for _ in range(config.clients_per_industry):
            cid = f"client_{client_no:03d}"
            client_no += 1
            registry.register_client(cid, industry=industry.name)
            selectable = [i for i in pool if i not in twin_ids]
            lo, hi = config.client_intent_fraction
            n_intents = max(2, int(round(rng.uniform(lo, hi) * len(selectable))))
            chosen = rng.choice(len(selectable), size=min(n_intents, len(selectable)),
                                replace=False)
            client_intents = [selectable[i] for i in chosen]  # client-specific Zipf order
            weights = _zipf_weights(len(client_intents), config.zipf_exponent)
            # Each industry's ambiguous pairs: one twin dominant, one at a share
            # below every partial-coverage cut; orientation per client.
            extra: list[int] = []
            shares: list[float] = []
            for a, r in pairs_by_industry[gi]:
                if rng.random() >= config.ambiguous_pair_rate:
                    continue
                dom, sub = (a, r) if rng.random() < 0.5 else (r, a)
                extra += [dom, sub]
                shares.append(rng.uniform(*config.dominant_share))
                shares.append(rng.uniform(*config.subordinate_share))
            if extra:
                sh = np.array(shares)
                weights = np.concatenate([weights * (1.0 - sh.sum()), sh])
                client_intents = client_intents + extra

            # Misrouted "dust": single stray tickets under foreign intents with
            # contentless text. They sit below every partial coverage cut, so
            # only 100%-coverage lists pick up their membership bits.
            foreign = sorted(set(range(C)) - set(client_intents) - twin_ids
                             - industry_sets[gi])
            n_dust = min(config.dust_intents_per_client, len(foreign))
            dust = [foreign[i] for i in rng.choice(len(foreign), size=n_dust,
                                                   replace=False)]

            n_tickets = int(rng.integers(config.tickets_per_client[0],
                                         config.tickets_per_client[1] + 1))
            intent_draws = [client_intents[d] for d in
                            rng.choice(len(client_intents), size=n_tickets, p=weights)]
            for intent in intent_draws + dust:
                is_dust = intent in dust
                words, probs = keyword_dists[intent]
                n_tok = int(rng.integers(config.tokens_per_ticket[0],
                                         config.tokens_per_ticket[1] + 1))
                toks = []
                rate = config.dust_keyword_rate if is_dust else config.keyword_token_rate
                for _ in range(n_tok):
                    if rng.random() < rate:
                        toks.append(words[int(rng.choice(len(words), p=probs))])
                    else:
                        toks.append(noise_vocab[int(rng.integers(len(noise_vocab)))])
                n_sub = max(1, n_tok // 4)
                examples.append(
                    LabeledExample(
                        ticket_id=f"t{ticket_no:06d}",
                        client_id=cid,
                        subject=" ".join(toks[:n_sub]),
                        description=" ".join(toks[n_sub:]),
                        gold_intent=intent,
                    )
                )
                ticket_no += 1

    return CorpusBundle(catalog, industries, registry, examples, pairs, amb_pairs,
                        keyword_dists)


# ---------------------------------------------------------------------------
# File formats: UTF-8 JSON lines; gold intents cross files as label strings.

def save_examples(examples: Sequence[LabeledExample], catalog: IntentCatalog,
                  path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for ex in examples:
            f.write(json.dumps({
                "ticket_id": ex.ticket_id,
                "client_id": ex.client_id,
                "subject": ex.subject,
                "description": ex.description,
                "gold_intent": catalog.labels[ex.gold_intent],
            }, sort_keys=True) + "\n")


def load_examples(path: str | Path, catalog: IntentCatalog) -> list[LabeledExample]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        out.append(LabeledExample(
            ticket_id=rec["ticket_id"],
            client_id=rec["client_id"],
            subject=rec["subject"],
            description=rec["description"],
            gold_intent=catalog.index[rec["gold_intent"]],
        ))
    return out
