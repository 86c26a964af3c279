"""The fixed vocabulary of the referral grammar."""

from __future__ import annotations

from dataclasses import dataclass, field

PAD = "[PAD]"
MASK = "[MASK]"

# class name -> (footprint x, footprint y, height) in meters. Heights are
# spaced 0.15 m apart so per-point height statistics separate the classes.
CLASS_SIZES: dict[str, tuple[float, float, float]] = {
    "bin": (0.3, 0.3, 0.30),
    "monitor": (0.5, 0.2, 0.45),
    "box": (0.5, 0.5, 0.60),
    "bed": (2.0, 1.4, 0.75),
    "table": (1.2, 0.8, 0.90),
    "chair": (0.5, 0.5, 1.05),
    "sofa": (1.8, 0.9, 1.20),
    "plant": (0.4, 0.4, 1.35),
    "cabinet": (0.8, 0.5, 1.50),
    "lamp": (0.3, 0.3, 1.65),
    "shelf": (1.0, 0.35, 1.80),
    "door": (0.9, 0.15, 1.95),
}
CLASSES = tuple(CLASS_SIZES)

COLORS: dict[str, tuple[float, float, float]] = {
    "red": (0.85, 0.15, 0.15),
    "green": (0.15, 0.7, 0.2),
    "blue": (0.15, 0.25, 0.85),
    "yellow": (0.9, 0.85, 0.15),
    "white": (0.95, 0.95, 0.95),
    "black": (0.08, 0.08, 0.08),
    "brown": (0.5, 0.3, 0.12),
    "gray": (0.5, 0.5, 0.5),
}
COLOR_NAMES = tuple(COLORS)

SYNONYMS: tuple[tuple[str, ...], ...] = (
    ("chair", "seat"),
    ("table", "counter"),
    ("sofa", "couch"),
    ("lamp", "light"),
    ("cabinet", "cupboard"),
    ("bed", "bunk"),
    ("door", "doorway"),
    ("shelf", "bookcase"),
    ("plant", "flower"),
    ("monitor", "screen"),
    ("bin", "trashcan"),
    ("box", "crate"),
    ("red", "crimson"),
    ("gray", "grey"),
    ("black", "dark"),
    ("near", "beside", "by"),
    ("facing", "viewing"),
)

FUNCTION_WORDS = ("the", "on", "left", "right", "near", "beside", "by", "facing", "viewing")


@dataclass
class Vocabulary:
    """Token strings <-> dense ids. ``[PAD]`` is 0 and ``[MASK]`` is 1."""

    words: list[str]
    synonym_groups: tuple[tuple[str, ...], ...] = SYNONYMS
    ids: dict[str, int] = field(init=False)
    _group_of: dict[int, tuple[int, ...]] = field(init=False, repr=False)
    _canonical_class: dict[int, str] = field(init=False, repr=False)

    def __post_init__(self):
        self.ids = {w: i for i, w in enumerate(self.words)}
        if len(self.ids) != len(self.words):
            raise ValueError("duplicate vocabulary entries")
        self._group_of = {}
        for group in self.synonym_groups:
            gids = tuple(self.ids[w] for w in group)
            for g in gids:
                self._group_of[g] = gids
        self._canonical_class = {self.ids[c]: c for c in CLASSES}
        for group in self.synonym_groups:
            if group[0] in CLASS_SIZES:
                for w in group[1:]:
                    self._canonical_class[self.ids[w]] = group[0]

    def __len__(self) -> int:
        return len(self.words)

    @property
    def pad_id(self) -> int:
        return self.ids[PAD]

    @property
    def mask_id(self) -> int:
        return self.ids[MASK]

    def encode(self, words: list[str]) -> list[int]:
        return [self.ids[w] for w in words]

    def decode(self, ids) -> list[str]:
        return [self.words[int(i)] for i in ids]

    def synonyms(self, token_id: int) -> tuple[int, ...]:
        """Other members of the token's synonym group (empty if none)."""
        return tuple(t for t in self._group_of.get(int(token_id), ()) if t != token_id)

    def is_class_noun(self, token_id: int) -> bool:
        return int(token_id) in self._canonical_class


def build_vocabulary() -> Vocabulary:
    words = [PAD, MASK]
    for w in FUNCTION_WORDS + COLOR_NAMES + CLASSES:
        if w not in words:
            words.append(w)
    for group in SYNONYMS:
        for w in group:
            if w not in words:
                words.append(w)
    return Vocabulary(words)


VOCAB = build_vocabulary()
