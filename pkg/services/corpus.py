import os
from dataclasses import dataclass
from enum import IntEnum
from typing import List, Sequence, Tuple

import numpy as np

from services.hashing import MASK, PAD, HashScheme, bloom_digest, hash_entity
from utils.artifact import read_artifact, write_artifact
from utils.errors import ArtifactError
from utils.log import logger
from utils.rng import SeedLike, derive_seed, make_rng

EXAMPLES_MAGIC = b"SBEX"
EXAMPLES_VERSION = 1

MASK_PROBABILITY = 0.8
RANDOM_PROBABILITY = 0.1


class Perturbation(IntEnum):
    MASKED = 0
    RANDOM = 1
    UNCHANGED = 2


@dataclass(frozen=True)
class Page:
    entities: np.ndarray

    def __len__(self) -> int:
        return int(self.entities.size)


@dataclass
class MaskedExample:
    """A hashed segment with masked positions and their true hash tokens.

    ``input_tokens`` is the Bloom digest (length m*n, layout [i][j]) after
    perturbation; ``targets[r]`` holds the m local tokens of the entity at
    ``target_positions[r]``.
    """

    m: int
    input_tokens: np.ndarray
    target_positions: np.ndarray
    targets: np.ndarray
    original_ids: np.ndarray
    perturbations: np.ndarray

    @property
    def n_positions(self) -> int:
        return self.input_tokens.size // self.m

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MaskedExample):
            return NotImplemented
        return self.m == other.m and all(
            np.array_equal(getattr(self, name), getattr(other, name))
            for name in ("input_tokens", "target_positions", "targets", "original_ids", "perturbations")
        )


@dataclass
class Batch:
    """Fixed-length batch: PAD-filled tokens, a validity mask and flattened targets.

    ``rows[r] = (example index, entity position)`` for every masked position,
    aligned with ``targets[r]`` (m local tokens) and ``original_ids[r]``.
    """

    tokens: np.ndarray
    valid: np.ndarray
    rows: np.ndarray
    targets: np.ndarray
    original_ids: np.ndarray
    n_examples: int


def load_corpus(path: str, n_entities: int = None) -> List[Page]:
    """One page per line, whitespace-separated non-negative entity ids."""
    pages = []
    try:
        with open(path, "r", encoding="utf-8") as f:
            for line_no, line in enumerate(f, start=1):
                fields = line.split()
                if not fields:
                    logger.warning(f"{path}:{line_no}: skipping blank line")
                    continue
                try:
                    entities = np.array([int(x) for x in fields], dtype=np.int64)
                except ValueError as e:
                    raise ArtifactError(f"{path}:{line_no}: not an integer entity id ({e})") from e
                if entities.min() < 0:
                    raise ArtifactError(f"{path}:{line_no}: negative entity id")
                if n_entities is not None and entities.max() >= n_entities:
                    raise ArtifactError(f"{path}:{line_no}: entity id {entities.max()} >= vocabulary size {n_entities}")
                pages.append(Page(entities))
    except OSError as e:
        raise ArtifactError(f"cannot read corpus {path}: {e}") from e
    logger.info(f"loaded {len(pages)} pages from {path}")
    return pages


def save_corpus(path: str, pages: Sequence[Page]) -> None:
    folder = os.path.dirname(path)
    try:
        if folder:
            os.makedirs(folder, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for page in pages:
                f.write(" ".join(str(int(e)) for e in page.entities) + "\n")
    except OSError as e:
        raise ArtifactError(f"cannot write corpus {path}: {e}") from e


def load_vocab(path: str) -> List[str]:
    """Sidecar entity names; line number (from 0) is the entity id."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            return [line.rstrip("\n") for line in f]
    except OSError as e:
        raise ArtifactError(f"cannot read vocabulary {path}: {e}") from e


def split_train_test(pages: Sequence[Page], test_frac: float = 0.1, seed: SeedLike = 0) -> Tuple[List[Page], List[Page]]:
    if not 0 <= test_frac < 1:
        raise ValueError(f"test_frac must be in [0, 1), got {test_frac}")
    n_test = int(np.floor(len(pages) * test_frac + 0.5))
    if test_frac > 0 and len(pages) > 1:
        n_test = max(n_test, 1)
    held_out = set(make_rng(seed).permutation(len(pages))[:n_test].tolist())
    train = [p for i, p in enumerate(pages) if i not in held_out]
    test = [p for i, p in enumerate(pages) if i in held_out]
    return train, test


def entity_frequencies(pages: Sequence[Page], n_entities: int) -> np.ndarray:
    counts = np.zeros(n_entities, dtype=np.int64)
    for page in pages:
        np.add.at(counts, page.entities, 1)
    return counts


def cut_segment(page: Page, n_max: int = 32, seed: SeedLike = 0) -> np.ndarray:
    if len(page) == 0:
        raise ValueError("cannot cut a segment from an empty page")
    length = min(n_max, len(page))
    start = int(make_rng(seed).integers(0, len(page) - length + 1))
    return page.entities[start : start + length].copy()


def masked_count(n: int, mask_rate: float) -> int:
    # Round half up, never fewer than one.
    return max(1, min(n, int(np.floor(mask_rate * n + 0.5))))


def _targets(scheme: HashScheme, segment: np.ndarray, positions: np.ndarray) -> np.ndarray:
    return scheme.forward[:, segment[positions]].T.copy()


def make_masked_example(segment: Sequence[int], scheme: HashScheme, mask_rate: float = 0.15, seed: SeedLike = 0) -> MaskedExample:
    segment = np.asarray(segment, dtype=np.int64)
    if segment.size == 0:
        raise ValueError("cannot mask an empty segment")
    rng = make_rng(seed)
    n, m = segment.size, scheme.m

    count = masked_count(n, mask_rate)
    positions = np.sort(rng.choice(n, size=count, replace=False))
    draws = rng.random(count)
    replacements = rng.integers(0, scheme.n_entities, size=count)

    perturbations = np.full(count, Perturbation.UNCHANGED, dtype=np.uint8)
    perturbations[draws < MASK_PROBABILITY + RANDOM_PROBABILITY] = Perturbation.RANDOM
    perturbations[draws < MASK_PROBABILITY] = Perturbation.MASKED

    # Perturb whole entities: all m tokens of a position come from one source.
    tokens = bloom_digest(scheme, segment).reshape(n, m)
    mask_tokens = scheme.special_tokens(MASK)
    for r, position in enumerate(positions):
        if perturbations[r] == Perturbation.MASKED:
            tokens[position] = mask_tokens
        elif perturbations[r] == Perturbation.RANDOM:
            tokens[position] = hash_entity(scheme, int(replacements[r]))

    return MaskedExample(
        m=m,
        input_tokens=tokens.reshape(-1),
        target_positions=positions.astype(np.int64),
        targets=_targets(scheme, segment, positions),
        original_ids=segment[positions],
        perturbations=perturbations,
    )


def make_eval_example(segment: Sequence[int], scheme: HashScheme, seed: SeedLike = 0) -> MaskedExample:
    """Hold out exactly one uniformly chosen entity, always replaced by MASK."""
    segment = np.asarray(segment, dtype=np.int64)
    if segment.size == 0:
        raise ValueError("cannot mask an empty segment")
    n, m = segment.size, scheme.m
    positions = np.array([int(make_rng(seed).integers(0, n))], dtype=np.int64)
    tokens = bloom_digest(scheme, segment).reshape(n, m)
    tokens[positions[0]] = scheme.special_tokens(MASK)
    return MaskedExample(
        m=m,
        input_tokens=tokens.reshape(-1),
        target_positions=positions,
        targets=_targets(scheme, segment, positions),
        original_ids=segment[positions],
        perturbations=np.array([Perturbation.MASKED], dtype=np.uint8),
    )


def make_eval_set(pages: Sequence[Page], scheme: HashScheme, n_max: int = 32, seed: int = 0) -> List[MaskedExample]:
    """One held-out entity from one random segment of every page."""
    examples = []
    for index, page in enumerate(pages):
        rng = np.random.default_rng(derive_seed(seed, index))
        examples.append(make_eval_example(cut_segment(page, n_max, rng), scheme, rng))
    return examples


def collate(examples: Sequence[MaskedExample], scheme: HashScheme, n_positions: int) -> Batch:
    m = scheme.m
    tokens = np.tile(scheme.special_tokens(PAD), (len(examples), n_positions))
    valid = np.zeros((len(examples), n_positions * m), dtype=bool)
    rows, targets, original_ids = [], [], []
    for b, example in enumerate(examples):
        length = example.input_tokens.size
        if example.m != m or length > n_positions * m:
            raise ValueError(f"example {b} (m={example.m}, {length} tokens) does not fit n={n_positions}, m={m}")
        tokens[b, :length] = example.input_tokens
        valid[b, :length] = True
        rows.append(np.stack([np.full(example.target_positions.size, b), example.target_positions], axis=1))
        targets.append(example.targets)
        original_ids.append(example.original_ids)
    return Batch(
        tokens=tokens,
        valid=valid,
        rows=np.concatenate(rows).astype(np.int64) if rows else np.zeros((0, 2), dtype=np.int64),
        targets=np.concatenate(targets).astype(np.int64) if targets else np.zeros((0, m), dtype=np.int64),
        original_ids=np.concatenate(original_ids).astype(np.int64) if original_ids else np.zeros(0, dtype=np.int64),
        n_examples=len(examples),
    )


def save_examples(path: str, examples: Sequence[MaskedExample]) -> None:
    if not examples:
        raise ValueError("refusing to write an empty example cache")
    m = examples[0].m
    token_lengths = [e.input_tokens.size for e in examples]
    target_lengths = [e.target_positions.size for e in examples]
    arrays = {
        "token_offsets": np.concatenate(([0], np.cumsum(token_lengths))).astype("<i8"),
        "tokens": np.concatenate([e.input_tokens for e in examples]).astype("<i8"),
        "target_offsets": np.concatenate(([0], np.cumsum(target_lengths))).astype("<i8"),
        "target_positions": np.concatenate([e.target_positions for e in examples]).astype("<i8"),
        "targets": np.concatenate([e.targets for e in examples]).astype("<i8"),
        "original_ids": np.concatenate([e.original_ids for e in examples]).astype("<i8"),
        "perturbations": np.concatenate([e.perturbations for e in examples]).astype("u1"),
    }
    write_artifact(path, EXAMPLES_MAGIC, EXAMPLES_VERSION, {"kind": "masked_examples", "m": m, "count": len(examples)}, arrays)
    logger.info(f"wrote {len(examples)} examples to {path}")


def load_examples(path: str) -> List[MaskedExample]:
    manifest, arrays = read_artifact(path, EXAMPLES_MAGIC, EXAMPLES_VERSION)
    m = int(manifest["m"])
    tok, tgt = arrays["token_offsets"], arrays["target_offsets"]
    examples = []
    for i in range(int(manifest["count"])):
        a, b = tgt[i], tgt[i + 1]
        examples.append(
            MaskedExample(
                m=m,
                input_tokens=arrays["tokens"][tok[i] : tok[i + 1]].astype(np.int64),
                target_positions=arrays["target_positions"][a:b].astype(np.int64),
                targets=arrays["targets"][a:b].astype(np.int64).reshape(-1, m),
                original_ids=arrays["original_ids"][a:b].astype(np.int64),
                perturbations=arrays["perturbations"][a:b].astype(np.uint8),
            )
        )
    return examples
