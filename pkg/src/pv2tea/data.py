"""Synthetic loosely-aligned image/text attribute datasets.

Images are grids of patch feature vectors. Every value id and every category
owns a random signature; foreground patches carry the product's category and
value signatures, background patches carry either another value's signature
(a distractor) or plain noise. Text is a bag of filler tokens that may or may
not mention the true value, and may mention a distractor value. Weak training
labels are corrupted toward the mentioned distractor, which reproduces the
textual bias the training objective is meant to counter.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1

PAD, CLS, CLS_Q, UNK = "[PAD]", "[CLS]", "[CLS-Q]", "[UNK]"
SPECIAL_TOKENS = (PAD, CLS, CLS_Q, UNK)
TEMPLATE_WORDS = ("what", "is", "the", "of", "?")
ATTRIBUTES = ("color", "pattern", "material", "shape")

_CATEGORY_NAMES = (
    "mattress", "balloon", "shirt", "mug", "sofa", "lamp", "backpack", "rug",
    "towel", "curtain", "pillow", "sneaker", "jacket", "umbrella",
)
# canonical name, alternate surface form
_VALUE_NAMES = (
    ("red", "crimson"), ("blue", "navy"), ("green", "olive"), ("white", "ivory"),
    ("black", "ebony"), ("yellow", "mustard"), ("pink", "rose"), ("purple", "violet"),
    ("orange", "tangerine"), ("brown", "chocolate"), ("grey", "gray"), ("beige", "tan"),
    ("gold", "golden"), ("silver", "metallic"), ("teal", "turquoise"), ("cream", "offwhite"),
)


class ValueType(str, Enum):
    SINGLE = "SINGLE"
    MULTIPLE = "MULTIPLE"


class GoldSource(str, Enum):
    TEXT = "TEXT"
    IMAGE = "IMAGE"


class DatasetFormatError(ValueError):
    """Raised when a dataset file cannot be parsed."""


@dataclass(eq=False)
class Sample:
    id: str
    patches: np.ndarray
    tokens: list[int]
    category_id: int
    weak_label: frozenset[int]
    gold_label: frozenset[int] | None = None
    gold_source: GoldSource | None = None
    noise_flag: bool = False

    def __post_init__(self):
        self.patches = np.asarray(self.patches, dtype=np.float64)
        self.tokens = [int(t) for t in self.tokens]
        self.weak_label = frozenset(int(v) for v in self.weak_label)
        if self.gold_label is not None:
            self.gold_label = frozenset(int(v) for v in self.gold_label)
        if self.gold_source is not None:
            self.gold_source = GoldSource(self.gold_source)
        if len(self.tokens) < 1:
            raise ValueError(f"sample {self.id}: empty token sequence")
        if not self.weak_label:
            raise ValueError(f"sample {self.id}: weak_label must be nonempty")
        if (self.gold_label is None) != (self.gold_source is None):
            raise ValueError(f"sample {self.id}: gold_source present iff gold_label present")

    def __eq__(self, other):
        if not isinstance(other, Sample):
            return NotImplemented
        return (
            self.id == other.id
            and self.patches.shape == other.patches.shape
            and np.array_equal(self.patches, other.patches)
            and self.tokens == other.tokens
            and self.category_id == other.category_id
            and self.weak_label == other.weak_label
            and self.gold_label == other.gold_label
            and self.gold_source == other.gold_source
            and self.noise_flag == other.noise_flag
        )

    @property
    def label(self) -> frozenset[int]:
        """Gold label when annotated, weak label otherwise."""
        return self.gold_label if self.gold_label is not None else self.weak_label


@dataclass
class DatasetConfig:
    n_samples: int = 1000
    n_categories: int = 4
    n_values: int = 8
    value_type: ValueType = ValueType.SINGLE
    vocab_size: int = 200
    P: int = 16
    d_img: int = 16
    T_max: int = 12
    frac_image_source: float = 0.3
    label_noise_rate: float = 0.2
    background_distractor_rate: float = 0.8
    seed: int = 0
    attribute: str = "color"
    test_fraction: float = 0.2
    foreground_fraction: float = 0.25
    text_distractor_rate: float = 0.4
    text_category_rate: float = 0.8
    jitter: float = 1.0
    noise_prefers_image_source: bool = True

    def __post_init__(self):
        self.value_type = ValueType(self.value_type)

    def validate(self) -> None:
        for name in ("frac_image_source", "label_noise_rate", "background_distractor_rate",
                     "test_fraction", "foreground_fraction", "text_distractor_rate", "text_category_rate"):
            rate = getattr(self, name)
            if not 0.0 <= rate <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {rate}")
        if self.n_values < 2:
            raise ValueError(f"n_values must be >= 2, got {self.n_values}")
        if self.P < 4:
            raise ValueError(f"P must be >= 4, got {self.P}")
        if self.n_categories < 1:
            raise ValueError("n_categories must be >= 1")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.d_img < 1:
            raise ValueError("d_img must be >= 1")
        if self.jitter < 0:
            raise ValueError("jitter must be >= 0")
        if self.attribute not in ATTRIBUTES:
            raise ValueError(f"attribute must be one of {ATTRIBUTES}, got {self.attribute!r}")
        max_true = 3 if self.value_type is ValueType.MULTIPLE else 1
        if self.value_type is ValueType.MULTIPLE and self.frac_image_source == 1.0 and self.n_values < 2:
            raise ValueError("MULTIPLE value type with frac_image_source=1 needs n_values >= 2")
        # true mentions + distractor + category name + one filler
        if self.T_max < max_true + 3:
            raise ValueError(f"T_max must be >= {max_true + 3} for value_type {self.value_type.value}")
        if self.label_noise_rate > 0 and self.n_values <= max_true:
            raise ValueError("label noise needs a value outside the true set; raise n_values")
        needed = len(build_vocabulary_tokens(self, filler=0)) + 1
        if self.vocab_size < needed:
            raise ValueError(f"vocab_size must be >= {needed} for this config, got {self.vocab_size}")

    def header(self) -> dict:
        return {
            "version": FORMAT_VERSION,
            "P": self.P,
            "d_img": self.d_img,
            "T_max": self.T_max,
            "C": self.n_categories,
            "V": self.n_values,
            "value_type": self.value_type.value,
        }


def category_names(n: int) -> list[str]:
    return [(_CATEGORY_NAMES[k] if k < len(_CATEGORY_NAMES) else f"category{k}") for k in range(n)]


def value_surfaces(n: int) -> list[tuple[str, str]]:
    return [(_VALUE_NAMES[k] if k < len(_VALUE_NAMES) else (f"value{k}", f"value{k}alt")) for k in range(n)]


def build_vocabulary_tokens(config: DatasetConfig, filler: int | None = None) -> list[str]:
    tokens = list(SPECIAL_TOKENS) + list(TEMPLATE_WORDS) + list(ATTRIBUTES)
    tokens += category_names(config.n_categories)
    for canonical, alt in value_surfaces(config.n_values):
        tokens += [canonical, alt]
    if filler is None:
        filler = config.vocab_size - len(tokens)
    tokens += [f"word{k}" for k in range(filler)]
    return tokens


@dataclass
class Vocabulary:
    """Token and value string tables plus the surface -> canonical synonym map."""

    tokens: list[str]
    values: list[str]
    synonyms: dict[str, str]
    attributes: list[str] = field(default_factory=lambda: list(ATTRIBUTES))
    categories: list[str] = field(default_factory=list)

    def __post_init__(self):
        self._token_ids = {t: i for i, t in enumerate(self.tokens)}
        self._value_ids = {v: i for i, v in enumerate(self.values)}
        for v in self.values:
            if self.synonyms.get(v, v) != v:
                raise ValueError(f"canonical value {v!r} must map to itself")
            self.synonyms[v] = v
        for surface, canonical in self.synonyms.items():
            if canonical not in self._value_ids:
                raise ValueError(f"synonym {surface!r} maps to unknown value {canonical!r}")

    def __len__(self):
        return len(self.tokens)

    def token_id(self, word: str) -> int:
        try:
            return self._token_ids[word]
        except KeyError:
            raise KeyError(f"unknown token {word!r}") from None

    def value_id(self, canonical: str) -> int:
        return self._value_ids[canonical]

    def surfaces_of(self, value_id: int) -> list[str]:
        canonical = self.values[value_id]
        return sorted(s for s, c in self.synonyms.items() if c == canonical)

    def surface_token_ids(self, value_id: int) -> list[int]:
        return [self._token_ids[s] for s in self.surfaces_of(value_id) if s in self._token_ids]

    def token_to_value(self) -> dict[int, int]:
        """Token id -> value id for every token that is a value surface form."""
        out = {}
        for surface, canonical in self.synonyms.items():
            if surface in self._token_ids:
                out[self._token_ids[surface]] = self._value_ids[canonical]
        return out

    def to_json(self) -> dict:
        return {
            "tokens": self.tokens,
            "values": self.values,
            "synonyms": dict(sorted(self.synonyms.items())),
            "attributes": self.attributes,
            "categories": self.categories,
        }

    @classmethod
    def from_json(cls, obj: dict) -> Vocabulary:
        return cls(
            tokens=list(obj["tokens"]),
            values=list(obj["values"]),
            synonyms=dict(obj["synonyms"]),
            attributes=list(obj.get("attributes", ATTRIBUTES)),
            categories=list(obj.get("categories", [])),
        )


def build_vocabulary(config: DatasetConfig) -> Vocabulary:
    surfaces = value_surfaces(config.n_values)
    synonyms = {}
    for canonical, alt in surfaces:
        synonyms[canonical] = canonical
        synonyms[alt] = canonical
    return Vocabulary(
        tokens=build_vocabulary_tokens(config),
        values=[c for c, _ in surfaces],
        synonyms=synonyms,
        attributes=list(ATTRIBUTES),
        categories=category_names(config.n_categories),
    )


def save_vocabulary(vocab: Vocabulary, path) -> None:
    Path(path).write_text(json.dumps(vocab.to_json(), indent=1) + "\n", encoding="utf-8")


def load_vocabulary(path) -> Vocabulary:
    return Vocabulary.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class GenerationTruth:
    """Generator-side bookkeeping that is not part of the sample file format."""

    true_values: dict[str, frozenset[int]]
    foreground: dict[str, tuple[int, ...]]
    n_image_source_test: int
    n_noisy_train: int


@dataclass
class _Signatures:
    values: np.ndarray
    categories: np.ndarray
    foreground: np.ndarray


def _signatures(config: DatasetConfig) -> _Signatures:
    rng = np.random.default_rng([config.seed, 0])
    d = config.d_img
    return _Signatures(
        values=rng.standard_normal((config.n_values, d)),
        categories=0.6 * rng.standard_normal((config.n_categories, d)),
        foreground=0.6 * rng.standard_normal(d),
    )


def _exact_subset(rng, n: int, rate: float, prefer=None) -> np.ndarray:
    """Boolean mask selecting exactly round(rate * n) of n items.

    Items flagged in ``prefer`` are drawn first.
    """
    order = rng.permutation(n)
    if prefer is not None:
        order = np.concatenate([order[prefer[order]], order[~prefer[order]]])
    mask = np.zeros(n, dtype=bool)
    mask[order[: int(round(rate * n))]] = True
    return mask


def _make_sample(config, vocab, sigs, sample_id, rng, *, image_source, noisy, is_test):
    V, P = config.n_values, config.P
    multiple = config.value_type is ValueType.MULTIPLE
    category = int(rng.integers(config.n_categories))
    k = int(rng.integers(1, 4)) if multiple else 1
    true_values = frozenset(int(v) for v in rng.choice(V, size=min(k, V - 1 if noisy else V), replace=False))
    others = [v for v in range(V) if v not in true_values]

    n_fg = min(P, max(1, int(round(config.foreground_fraction * P))))
    fg_idx = np.sort(rng.choice(P, size=n_fg, replace=False))
    bg_idx = np.setdiff1d(np.arange(P), fg_idx)
    n_distract = int(round(config.background_distractor_rate * len(bg_idx))) if others else 0
    distract_idx = rng.choice(bg_idx, size=n_distract, replace=False) if n_distract else np.array([], int)

    patches = config.jitter * rng.standard_normal((P, config.d_img))
    ordered = sorted(true_values)
    for j, p in enumerate(fg_idx):
        patches[p] += sigs.foreground + sigs.categories[category] + sigs.values[ordered[j % len(ordered)]]
    for p in distract_idx:
        patches[p] += sigs.values[others[int(rng.integers(len(others)))]]

    # text: filler words plus value mentions
    n_filler_vocab = config.vocab_size - len(build_vocabulary_tokens(config, filler=0))
    filler_start = len(vocab) - n_filler_vocab
    mentions = []
    if not image_source:
        for v in ordered:
            surfaces = vocab.surface_token_ids(v)
            mentions.append(surfaces[int(rng.integers(len(surfaces)))])
    distractor = None
    if others and (noisy or rng.random() < config.text_distractor_rate):
        distractor = others[int(rng.integers(len(others)))]
        surfaces = vocab.surface_token_ids(distractor)
        mentions.append(surfaces[int(rng.integers(len(surfaces)))])
    if rng.random() < config.text_category_rate:
        mentions.append(vocab.token_id(vocab.categories[category]))
    length = int(rng.integers(len(mentions) + 1, config.T_max + 1))
    tokens = list(filler_start + rng.integers(n_filler_vocab, size=length - len(mentions)))
    for tok in mentions:
        tokens.insert(int(rng.integers(len(tokens) + 1)), tok)

    weak = frozenset([distractor]) if noisy else true_values
    sample = Sample(
        id=sample_id,
        patches=patches,
        tokens=tokens,
        category_id=category,
        weak_label=weak,
        gold_label=true_values if is_test else None,
        gold_source=(GoldSource.IMAGE if image_source else GoldSource.TEXT) if is_test else None,
        noise_flag=bool(noisy),
    )
    return sample, true_values, tuple(int(p) for p in fg_idx)


def generate_dataset_with_truth(config: DatasetConfig):
    """Like :func:`generate_dataset` but also returns generator bookkeeping."""
    config.validate()
    vocab = build_vocabulary(config)
    sigs = _signatures(config)
    n_test = int(round(config.test_fraction * config.n_samples))
    n_train = config.n_samples - n_test

    plan_rng = np.random.default_rng([config.seed, 1])
    train_image = _exact_subset(plan_rng, n_train, config.frac_image_source)
    # a text-based labeler errs where the true value is absent from the text
    train_noisy = _exact_subset(plan_rng, n_train, config.label_noise_rate,
                                prefer=train_image if config.noise_prefers_image_source else None)
    test_image = _exact_subset(plan_rng, n_test, config.frac_image_source)

    children = np.random.SeedSequence([config.seed, 2]).spawn(config.n_samples)
    truth = GenerationTruth({}, {}, int(test_image.sum()), int(train_noisy.sum()))
    train, test = [], []
    for i in range(config.n_samples):
        is_test = i >= n_train
        j = i - n_train if is_test else i
        sid = f"{'test' if is_test else 'train'}-{j:06d}"
        sample, true_values, fg = _make_sample(
            config, vocab, sigs, sid, np.random.default_rng(children[i]),
            image_source=bool(test_image[j] if is_test else train_image[j]),
            noisy=False if is_test else bool(train_noisy[j]),
            is_test=is_test,
        )
        truth.true_values[sid] = true_values
        truth.foreground[sid] = fg
        (test if is_test else train).append(sample)
    return train, test, truth


def generate_dataset(config: DatasetConfig) -> tuple[list[Sample], list[Sample]]:
    """Generate deterministic (train, test) splits for ``config``."""
    train, test, _ = generate_dataset_with_truth(config)
    return train, test


def _sample_to_json(s: Sample) -> dict:
    obj = {
        "id": s.id,
        "patches": s.patches.tolist(),
        "tokens": s.tokens,
        "category_id": s.category_id,
        "weak_label": sorted(s.weak_label),
    }
    if s.gold_label is not None:
        obj["gold_label"] = sorted(s.gold_label)
        obj["gold_source"] = s.gold_source.value
    obj["noise_flag"] = s.noise_flag
    return obj


def save_dataset(samples, path, header: dict) -> None:
    """Write ``samples`` as JSONL with ``header`` on the first line."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for s in samples:
            fh.write(json.dumps(_sample_to_json(s)) + "\n")


def read_header(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    if not first.strip():
        raise DatasetFormatError(f"{path}: empty file (missing header line)")
    try:
        return json.loads(first)
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{path}: line 1: malformed header ({exc.msg})") from None


def load_dataset(path) -> list[Sample]:
    """Read a JSONL dataset written by :func:`save_dataset`."""
    samples = []
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetFormatError(f"{path}: missing header line")
    header = None
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"{path}: line {lineno}: malformed JSON ({exc.msg})") from None
        if header is None:
            header = obj
            if header.get("version") != FORMAT_VERSION:
                raise DatasetFormatError(f"{path}: line 1: unsupported version {header.get('version')!r}")
            continue
        try:
            sample = Sample(
                id=obj["id"],
                patches=obj["patches"],
                tokens=obj["tokens"],
                category_id=obj["category_id"],
                weak_label=obj["weak_label"],
                gold_label=obj.get("gold_label"),
                gold_source=obj.get("gold_source"),
                noise_flag=bool(obj.get("noise_flag", False)),
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise DatasetFormatError(f"{path}: line {lineno}: invalid sample ({exc})") from None
        if sample.patches.shape != (header["P"], header["d_img"]):
            raise DatasetFormatError(
                f"{path}: line {lineno}: patch grid {sample.patches.shape} does not match "
                f"header ({header['P']}, {header['d_img']})"
            )
        if len(sample.tokens) > header["T_max"]:
            raise DatasetFormatError(f"{path}: line {lineno}: {len(sample.tokens)} tokens exceed T_max={header['T_max']}")
        samples.append(sample)
    return samples


def config_to_dict(config: DatasetConfig) -> dict:
    d = asdict(config)
    d["value_type"] = config.value_type.value
    return d
