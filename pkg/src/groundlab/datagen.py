"""Procedural scenes and template referrals with exact supervision.

A scene is a square room of axis-aligned boxes sampled as point clouds. One
"focus" class is repeated to create same-class distractors; every other
instance has a class of its own, so it can serve as an unambiguous anchor.

Referrals come from four templates::

    bare       the <class>
    attribute  the <color> <class>
    relation   the <class> near the <anchor>
    view       facing the <anchor> the <class> on the <left|right>

The target is computed geometrically and then re-checked by
:func:`resolve_referral`, an independent evaluator that parses the words back
into a predicate and enumerates every satisfying instance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import rng as seeds
from .vocab import CLASS_SIZES, CLASSES, COLOR_NAMES, COLORS, VOCAB, Vocabulary

TEMPLATE_KINDS = ("bare", "attribute", "relation", "view")
# ties closer than this are ambiguous (meters)
TIE_TOLERANCE = 1e-6
EASY_MAX_DISTRACTORS = 2
MAX_DISTRACTORS = 6


class SceneGenerationError(ValueError):
    """The requested scene cannot be built (e.g. the room is too small)."""


class AmbiguousReferral(ValueError):
    """No unambiguous referral of the requested template exists in the scene."""


@dataclass(frozen=True)
class GenConfig:
    min_instances: int = 3
    max_instances: int = 8
    hard_ratio: float = 0.5
    room_size: float = 6.0
    points_per_instance: int = 24
    floor_points: int = 32
    point_jitter: float = 0.02
    color_noise: float = 0.03
    size_jitter: float = 0.1
    height_jitter: float = 0.03
    min_gap: float = 0.1
    placement_tries: int = 200
    placement_restarts: int = 20
    referrals_per_scene: int = 4
    mix_bare: float = 0.1
    mix_attribute: float = 0.3
    mix_relation: float = 0.3
    mix_view: float = 0.3
    # extra separation demanded beyond the tie tolerance, so targets are learnable
    relation_margin: float = 0.3
    view_margin: float = 0.3

    def __post_init__(self):
        if not 1 <= self.min_instances <= self.max_instances:
            raise ValueError("need 1 <= min_instances <= max_instances")
        if self.max_instances > len(CLASSES) + MAX_DISTRACTORS:
            raise ValueError(f"max_instances too large for {len(CLASSES)} classes")
        if not 0.0 <= self.hard_ratio <= 1.0:
            raise ValueError("hard_ratio must be in [0, 1]")
        if min(self.template_mix().values()) < 0 or sum(self.template_mix().values()) <= 0:
            raise ValueError("template mix weights must be non-negative with a positive sum")

    def template_mix(self) -> dict[str, float]:
        return {k: getattr(self, f"mix_{k}") for k in TEMPLATE_KINDS}

    @classmethod
    def keys(cls) -> set[str]:
        return {f.name for f in fields(cls)}


@dataclass
class Scene:
    scene_id: str
    points: np.ndarray          # (N, 6): x, y, z, r, g, b
    instance_masks: np.ndarray  # (K, N) of 0/1
    instance_class: np.ndarray  # (K,) index into CLASSES
    instance_color: np.ndarray  # (K,) index into COLOR_NAMES
    centroids: np.ndarray       # (K, 3) bounding-box centers
    mean_colors: np.ndarray     # (K, 3)

    @property
    def num_instances(self) -> int:
        return self.instance_masks.shape[0]

    def class_counts(self) -> dict[int, int]:
        vals, counts = np.unique(self.instance_class, return_counts=True)
        return {int(v): int(c) for v, c in zip(vals, counts)}

    def distractors(self, instance: int) -> int:
        return int(np.sum(self.instance_class == self.instance_class[instance])) - 1


@dataclass
class Referral:
    scene_id: str
    tokens: list[int]
    span: list[int]
    target: int
    kind: str
    difficulty: str
    view_dependent: bool
    n_distractors: int
    referral_id: str = ""
    anchor: int = -1
    extra: dict = field(default_factory=dict, repr=False)

    def words(self, vocab: Vocabulary = VOCAB) -> list[str]:
        return vocab.decode(self.tokens)


# --------------------------------------------------------------------------
# scenes
# --------------------------------------------------------------------------

def instance_geometry(points: np.ndarray, masks: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Bounding-box centers and mean colors of each instance."""
    k = masks.shape[0]
    centroids = np.empty((k, 3))
    colors = np.empty((k, 3))
    for i in range(k):
        member = points[masks[i] > 0]
        if len(member) == 0:
            raise SceneGenerationError(f"instance {i} has no points")
        centroids[i] = (member[:, :3].min(axis=0) + member[:, :3].max(axis=0)) / 2.0
        colors[i] = member[:, 3:].mean(axis=0)
    return centroids, colors


def _place_boxes(rng: np.random.Generator, sizes: list[np.ndarray], cfg: GenConfig) -> np.ndarray:
    """Rejection-sample non-overlapping footprints, largest first, with restarts."""
    half_room = cfg.room_size / 2.0
    for idx, size in enumerate(sizes):
        if size[0] / 2.0 > half_room or size[1] / 2.0 > half_room:
            raise SceneGenerationError(f"box {idx} ({size[0]:.2f} x {size[1]:.2f} m) exceeds room")
    order = sorted(range(len(sizes)), key=lambda i: -sizes[i][0] * sizes[i][1])
    for _ in range(cfg.placement_restarts):
        centers: dict[int, np.ndarray] = {}
        for idx in order:
            hx, hy = sizes[idx][0] / 2.0, sizes[idx][1] / 2.0
            for _ in range(cfg.placement_tries):
                c = np.array([rng.uniform(-half_room + hx, half_room - hx),
                              rng.uniform(-half_room + hy, half_room - hy)])
                if all(abs(c[0] - oc[0]) >= hx + sizes[j][0] / 2.0 + cfg.min_gap
                       or abs(c[1] - oc[1]) >= hy + sizes[j][1] / 2.0 + cfg.min_gap
                       for j, oc in centers.items()):
                    centers[idx] = c
                    break
            else:
                break
        if len(centers) == len(sizes):
            return np.array([centers[i] for i in range(len(sizes))])
    raise SceneGenerationError(
        f"could not place {len(sizes)} boxes in a {cfg.room_size} m room "
        f"({cfg.placement_restarts} restarts x {cfg.placement_tries} tries)"
    )


def _scene_layout(rng: np.random.Generator, cfg: GenConfig) -> tuple[list[int], list[int]]:
    """Class ids and color ids for each instance, in random order."""
    hard = rng.random() < cfg.hard_ratio
    if hard:
        if cfg.max_instances < EASY_MAX_DISTRACTORS + 2:
            raise SceneGenerationError(
                f"hard scenes need >= {EASY_MAX_DISTRACTORS + 2} instances, "
                f"max_instances={cfg.max_instances}"
            )
        k = int(rng.integers(max(cfg.min_instances, EASY_MAX_DISTRACTORS + 2), cfg.max_instances + 1))
        lo, hi = EASY_MAX_DISTRACTORS + 2, MAX_DISTRACTORS + 1
    else:
        k = int(rng.integers(cfg.min_instances, cfg.max_instances + 1))
        lo, hi = 1, EASY_MAX_DISTRACTORS + 1
    hi = min(hi, k - 1) if k - 1 >= lo else min(hi, k)
    n_focus = int(rng.integers(lo, hi + 1))
    n_other = k - n_focus
    if n_other > len(CLASSES) - 1:
        raise SceneGenerationError(f"{n_other} unique classes needed, only {len(CLASSES) - 1} left")
    picked = rng.permutation(len(CLASSES))
    focus, others = int(picked[0]), [int(c) for c in picked[1:1 + n_other]]
    classes = [focus] * n_focus + others
    colors = [int(c) for c in rng.integers(0, len(COLOR_NAMES), size=k)]
    order = rng.permutation(k)
    return [classes[i] for i in order], [colors[i] for i in order]


def latin_hypercube(rng: np.random.Generator, m: int, dims: int = 3) -> np.ndarray:
    """``m`` points in the unit cube, one per stratum along every axis.

    Stratifying keeps the per-instance spread of the sample close to that of
    the box, so pooled shape features barely depend on the draw.
    """
    strata = np.column_stack([rng.permutation(m) for _ in range(dims)])
    return (strata + rng.random((m, dims))) / m


def generate_scene(config: GenConfig, seed: int, scene_id: str = "scene") -> Scene:
    """Build one scene; identical ``(config, seed)`` give identical scenes."""
    rng = seeds.derive(seed, "scene")
    classes, colors = _scene_layout(rng, config)
    sizes = []
    for c in classes:
        sx, sy, h = CLASS_SIZES[CLASSES[c]]
        fx, fy = rng.uniform(1 - config.size_jitter, 1 + config.size_jitter, size=2)
        fh = rng.uniform(1 - config.height_jitter, 1 + config.height_jitter)
        if rng.random() < 0.5:
            sx, sy = sy, sx
        sizes.append(np.array([sx * fx, sy * fy, h * fh]))
    centers = _place_boxes(rng, sizes, config)

    m = config.points_per_instance
    chunks, owner = [], []
    for i, (size, center, color) in enumerate(zip(sizes, centers, colors)):
        lo = np.array([center[0] - size[0] / 2, center[1] - size[1] / 2, 0.0])
        xyz = lo + latin_hypercube(rng, m) * size + rng.normal(0.0, config.point_jitter, (m, 3))
        base = np.asarray(COLORS[COLOR_NAMES[color]]) + rng.normal(0.0, config.color_noise, 3)
        rgb = np.clip(base + rng.normal(0.0, config.color_noise, (m, 3)), 0.0, 1.0)
        chunks.append(np.hstack([xyz, rgb]))
        owner += [i] * m
    if config.floor_points:
        half = config.room_size / 2.0
        f = config.floor_points
        xyz = np.column_stack([rng.uniform(-half, half, f), rng.uniform(-half, half, f),
                               rng.normal(0.0, config.point_jitter, f)])
        rgb = np.clip(0.6 + rng.normal(0.0, config.color_noise, (f, 3)), 0.0, 1.0)
        chunks.append(np.hstack([xyz, rgb]))
        owner += [-1] * f
    points = np.vstack(chunks)
    owner = np.asarray(owner)
    k = len(classes)
    masks = (owner[None, :] == np.arange(k)[:, None]).astype(np.float64)
    centroids, mean_colors = instance_geometry(points, masks)
    return Scene(scene_id, points, masks, np.asarray(classes, dtype=np.int64),
                 np.asarray(colors, dtype=np.int64), centroids, mean_colors)


def rotate_scene(scene: Scene, angle: float) -> Scene:
    """Rotate about the vertical axis through the room center; colors unchanged."""
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    pts = scene.points.copy()
    pts[:, :3] = pts[:, :3] @ rot.T
    centroids, mean_colors = instance_geometry(pts, scene.instance_masks)
    return replace(scene, points=pts, centroids=centroids, mean_colors=mean_colors)


# --------------------------------------------------------------------------
# referrals
# --------------------------------------------------------------------------

def split_labels(referral: Referral, scene: Scene) -> tuple[str, bool]:
    """(difficulty, view_dependent) recomputed from the scene's class counts."""
    n = scene.distractors(referral.target)
    return ("easy" if n <= EASY_MAX_DISTRACTORS else "hard"), referral.kind == "view"


def scene_difficulty(scene: Scene) -> str:
    """"hard" when some class has more than the easy number of distractors."""
    worst = max(scene.class_counts().values()) - 1
    return "easy" if worst <= EASY_MAX_DISTRACTORS else "hard"


def left_scores(centroids: np.ndarray, members: list[int], anchor: int) -> np.ndarray:
    """Signed leftness of each member for a viewer facing the anchor.

    The viewer stands at the room center looking horizontally at the anchor;
    the score is the z component of facing x (member - anchor), positive on
    the left. Rotating the room about its center leaves the scores unchanged.
    """
    facing = centroids[anchor, :2]
    norm = np.hypot(*facing)
    if norm < TIE_TOLERANCE:
        raise AmbiguousReferral("anchor stands at the room center")
    facing = facing / norm
    rel = centroids[members, :2] - centroids[anchor, :2]
    return facing[0] * rel[:, 1] - facing[1] * rel[:, 0]


def _words_for(kind: str, cls: int, color: int = -1, anchor_cls: int = -1, side: str = ""):
    name = CLASSES[cls]
    if kind == "bare":
        return ["the", name], [0, 1]
    if kind == "attribute":
        return ["the", COLOR_NAMES[color], name], [0, 1, 1]
    if kind == "relation":
        return ["the", name, "near", "the", CLASSES[anchor_cls]], [0, 1, 0, 0, 0]
    if kind == "view":
        return (["facing", "the", CLASSES[anchor_cls], "the", name, "on", "the", side],
                [0, 0, 0, 0, 1, 0, 0, 0])
    raise ValueError(f"unknown template kind {kind!r}")


def _candidates(scene: Scene, kind: str, cfg: GenConfig) -> list[tuple]:
    """All (target, anchor, color, side) choices that pass the learnability margins."""
    counts = scene.class_counts()
    unique = [i for i in range(scene.num_instances) if counts[int(scene.instance_class[i])] == 1]
    out = []
    if kind == "bare":
        out = [(i, -1, -1, "") for i in unique]
    elif kind == "attribute":
        for i in range(scene.num_instances):
            same = (scene.instance_class == scene.instance_class[i]) & (scene.instance_color == scene.instance_color[i])
            if same.sum() == 1:
                out.append((i, -1, int(scene.instance_color[i]), ""))
    else:
        for cls, n in sorted(counts.items()):
            if n < 2:
                continue
            members = [int(i) for i in np.flatnonzero(scene.instance_class == cls)]
            for a in unique:
                if kind == "relation":
                    d = np.linalg.norm(scene.centroids[members] - scene.centroids[a], axis=1)
                    order = np.argsort(d, kind="stable")
                    if d[order[1]] - d[order[0]] >= max(cfg.relation_margin, TIE_TOLERANCE):
                        out.append((members[order[0]], a, -1, ""))
                else:
                    try:
                        s = left_scores(scene.centroids, members, a)
                    except AmbiguousReferral:
                        continue
                    # every member must sit clearly off the line of sight
                    if np.min(np.abs(s)) < max(cfg.view_margin, TIE_TOLERANCE):
                        continue
                    for side, on_side in (("left", s > 0), ("right", s < 0)):
                        if on_side.sum() == 1:
                            out.append((members[int(np.argmax(on_side))], a, -1, side))
    return out


def generate_referral(scene: Scene, template_kind: str, seed: int,
                      config: GenConfig = GenConfig(), vocab: Vocabulary = VOCAB) -> Referral:
    """Draw one unambiguous referral of the given template for ``scene``."""
    if template_kind not in TEMPLATE_KINDS:
        raise ValueError(f"unknown template kind {template_kind!r}")
    options = _candidates(scene, template_kind, config)
    if not options:
        raise AmbiguousReferral(f"scene {scene.scene_id} has no unambiguous {template_kind} referral")
    rng = seeds.derive(seed, "referral")
    target, anchor, color, side = options[int(rng.integers(len(options)))]
    cls = int(scene.instance_class[target])
    anchor_cls = int(scene.instance_class[anchor]) if anchor >= 0 else -1
    words, span = _words_for(template_kind, cls, color, anchor_cls, side)
    tokens = vocab.encode(words)
    resolved = resolve_referral(scene, words)
    if resolved != [target]:
        raise AssertionError(
            f"predicate check failed for {' '.join(words)!r}: expected [{target}], got {resolved}"
        )
    n = scene.distractors(target)
    ref = Referral(scene.scene_id, tokens, span, target, template_kind, "", False, n, anchor=anchor)
    ref.difficulty, ref.view_dependent = split_labels(ref, scene)
    return ref


def resolve_referral(scene: Scene, words: list[str]) -> list[int]:
    """Every instance satisfying the referral's predicate, by direct enumeration.

    Parses canonical template words; ties within :data:`TIE_TOLERANCE` count
    as satisfying, so an unambiguous referral resolves to exactly one index.
    """
    class_of = {name: i for i, name in enumerate(CLASSES)}
    color_of = {name: i for i, name in enumerate(COLOR_NAMES)}
    k = scene.num_instances
    members = lambda name: [i for i in range(k) if int(scene.instance_class[i]) == class_of[name]]

    def lone(name):
        found = members(name)
        return found[0] if len(found) == 1 else None

    if words[0] == "facing":
        anchor = lone(words[2])
        cands = members(words[4])
        if anchor is None or len(cands) < 2:
            return []
        ax, ay = scene.centroids[anchor][0], scene.centroids[anchor][1]
        length = math.hypot(ax, ay)
        if length < TIE_TOLERANCE:
            return []
        out = []
        for i in cands:
            rx, ry = scene.centroids[i][0] - ax, scene.centroids[i][1] - ay
            cross = (ax * ry - ay * rx) / length
            if (cross if words[7] == "left" else -cross) > -TIE_TOLERANCE:
                out.append(i)
        return out
    if len(words) == 5 and words[2] == "near":
        anchor = lone(words[4])
        cands = members(words[1])
        if anchor is None or not cands:
            return []
        dist = {i: math.dist(scene.centroids[i], scene.centroids[anchor]) for i in cands}
        best = min(dist.values())
        return [i for i in cands if dist[i] - best <= TIE_TOLERANCE]
    if len(words) == 3:
        return [i for i in members(words[2]) if int(scene.instance_color[i]) == color_of[words[1]]]
    if len(words) == 2:
        return members(words[1])
    raise ValueError(f"unparseable referral {' '.join(words)!r}")


def augment_text(referral: Referral, seed: int, mask_p: float = 0.2, synonym_p: float = 0.3,
                 vocab: Vocabulary = VOCAB) -> Referral:
    """Mask the target nouns (prob ``mask_p``), then swap in synonyms word by word.

    Positions never move, so the span is carried over unchanged.
    """
    rng = seeds.derive(seed, "augment")
    tokens = list(referral.tokens)
    nouns = [i for i, t in enumerate(tokens) if referral.span[i] and vocab.is_class_noun(t)]
    masked = rng.random() < mask_p
    if masked:
        for i in nouns:
            tokens[i] = vocab.mask_id
    draws = rng.random(len(tokens))
    picks = rng.random(len(tokens))
    for i, t in enumerate(tokens):
        syn = vocab.synonyms(t)
        if syn and draws[i] < synonym_p:
            tokens[i] = syn[int(picks[i] * len(syn))]
    return replace(referral, tokens=tokens, span=list(referral.span))


# --------------------------------------------------------------------------
# corpora
# --------------------------------------------------------------------------

@dataclass
class Corpus:
    scenes: dict[str, Scene]
    referrals: list[Referral]

    def by_scene(self) -> dict[str, list[Referral]]:
        groups: dict[str, list[Referral]] = {}
        for r in self.referrals:
            groups.setdefault(r.scene_id, []).append(r)
        return groups

    def __len__(self) -> int:
        return len(self.referrals)


def _pick_kind(rng: np.random.Generator, mix: dict[str, float]) -> str:
    kinds = list(mix)
    w = np.array([mix[k] for k in kinds], dtype=np.float64)
    return kinds[int(rng.choice(len(kinds), p=w / w.sum()))]


def scene_referrals(scene: Scene, config: GenConfig, seed: int, count: int) -> list[Referral]:
    """Up to ``count`` referrals for one scene, kinds drawn from the template mix."""
    out = []
    mix = config.template_mix()
    for j in range(count):
        rng = seeds.derive(seed, "kind", j)
        for attempt in range(20):
            kind = _pick_kind(rng, mix)
            try:
                ref = generate_referral(scene, kind, seeds.derive_int(seed, "ref", j, attempt), config)
            except AmbiguousReferral:
                continue
            ref.referral_id = f"{scene.scene_id}/{j}"
            out.append(ref)
            break
    return out


def generate_corpus(config: GenConfig, seed: int, count: int, split: str = "train") -> Corpus:
    """``count`` referrals over as many scenes as needed.

    Scene ``i`` and its referrals use seeds derived from ``(seed, split, i)``
    only, so any subset can be regenerated independently.
    """
    scenes: dict[str, Scene] = {}
    referrals: list[Referral] = []
    i = 0
    while len(referrals) < count:
        sid = f"{split}-{i:05d}"
        scene = generate_scene(config, seeds.derive_int(seed, split, "scene", i), sid)
        want = min(config.referrals_per_scene, count - len(referrals))
        refs = scene_referrals(scene, config, seeds.derive_int(seed, split, "refs", i), want)
        if refs:
            scenes[sid] = scene
            referrals.extend(refs)
        i += 1
        if i > 50 * count + 100:
            raise SceneGenerationError("generator keeps producing scenes without valid referrals")
    return Corpus(scenes, referrals)
