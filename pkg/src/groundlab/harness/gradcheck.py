"""End-to-end finite-difference check of the total loss gradient."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .. import rng as seeds
from .. import tensor as T
from ..datagen import GenConfig, generate_scene, scene_referrals
from ..model import GroundingModel, collate
from .config import RunConfig


@dataclass
class GradcheckReport:
    passed: bool
    max_rel_error: float
    worst_parameter: str
    tolerance: float
    seconds: float
    errors: dict[str, float] = field(default_factory=dict)
    failed: list[str] = field(default_factory=list)
    kinks: int = 0

    def to_dict(self) -> dict:
        return {
            "passed": self.passed, "max_rel_error": self.max_rel_error,
            "worst_parameter": self.worst_parameter, "tolerance": self.tolerance,
            "seconds": self.seconds, "failed": self.failed, "kinks": self.kinks, "errors": self.errors,
        }


# Central differences in float64 carry ~1e-10 absolute roundoff at step 1e-5;
# gradients below this floor are compared in absolute terms.
ABS_FLOOR = 1e-5
MAX_REDRAWS = 5


def _rel(a: np.ndarray, n: np.ndarray) -> float:
    scale = max(float(np.linalg.norm(a)), float(np.linalg.norm(n)), ABS_FLOOR)
    diff = float(np.linalg.norm(a - n))
    return diff / scale


def gradcheck_problem(config: RunConfig, seed: int):
    """A tiny scene with three referrals of different lengths (so padding is exercised)."""
    gen = GenConfig(min_instances=3, max_instances=4, hard_ratio=0.0, points_per_instance=6,
                    floor_points=4, referrals_per_scene=3, mix_bare=1, mix_attribute=1,
                    mix_relation=1, mix_view=1)
    for attempt in range(100):
        scene = generate_scene(gen, seeds.derive_int(seed, "gc-scene", attempt), "gradcheck")
        refs = scene_referrals(scene, gen, seeds.derive_int(seed, "gc-refs", attempt), 3)
        if len(refs) == 3 and len({len(r.tokens) for r in refs}) > 1:
            return scene, collate(refs, scene)
    raise RuntimeError("could not build a gradcheck problem")


def gradcheck(config: RunConfig, seed: int | None = None, tol: float = 1e-4, step: float = 1e-5,
              samples: int = 3, model: GroundingModel | None = None) -> GradcheckReport:
    """Compare analytic and central-difference gradients for every parameter tensor.

    Each tensor is probed at its ``samples`` largest-gradient entries, at
    ``samples`` random entries, and along one random direction. The error of a
    tensor is the worst of the relative norm error over the probed entries and
    the relative error of the directional derivative.

    A probe that disagrees with the analytic value is repeated at half the
    step. If the two differences disagree with each other, the step straddles
    a ReLU or norm kink, where a central difference is not a derivative; the
    probe is then redrawn at another entry (or direction) and counted in
    ``kinks``. A wrong backward rule gives consistent differences and fails.
    Frozen parameters are checked like any other.
    """
    if config.d > 16:
        raise ValueError(f"gradcheck wants a small model (d <= 16), got d={config.d}")
    seed = config.seed if seed is None else seed
    start = time.perf_counter()
    scene, batch = gradcheck_problem(config, seed)
    model = model or GroundingModel(config)
    weights = config.loss_weights()

    def loss() -> T.Tensor:
        out = model.forward(model.encode_scene(scene), batch)
        return model.losses(out, scene.centroids, batch, weights).total

    model.zero_grad()
    T.backward(loss())

    def value() -> float:
        with T.no_grad():
            return loss().item()

    def slope(p: T.Tensor, delta: np.ndarray, h: float) -> float:
        base = p.data.copy()
        p.data = base + h * delta
        up = value()
        p.data = base - h * delta
        down = value()
        p.data = base
        return (up - down) / (2 * h)

    def probe(p: T.Tensor, delta: np.ndarray, analytic: float) -> float | None:
        """Central difference along ``delta``; None when a kink lies inside the step."""
        n = slope(p, delta, step)
        if _rel(np.array([analytic]), np.array([n])) < tol:
            return n
        # disagreement: trust the difference only if halving the step reproduces it
        if _rel(np.array([n]), np.array([slope(p, delta, step / 2)])) > tol / 10:
            return None
        return n

    rng = seeds.derive(seed, "gradcheck")
    errors: dict[str, float] = {}
    kinks = 0
    for name, p in model.named_parameters():
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        ga = analytic.reshape(-1)
        top = np.argsort(-np.abs(ga), kind="stable")[:samples]
        rand = rng.choice(ga.size, size=min(samples, ga.size), replace=False)
        queue = [int(i) for i in np.unique(np.concatenate([top, rand]))]
        spare = [int(i) for i in rng.permutation(ga.size) if i not in queue]
        got_a, got_n = [], []
        while queue:
            i = queue.pop(0)
            delta = np.zeros(ga.size)
            delta[i] = 1.0
            n = probe(p, delta.reshape(p.shape), ga[i])
            if n is None:
                kinks += 1
                if spare:
                    queue.append(spare.pop(0))
                continue
            got_a.append(ga[i])
            got_n.append(n)
        err = _rel(np.array(got_a), np.array(got_n)) if got_a else 0.0
        for _ in range(MAX_REDRAWS):
            direction = rng.normal(size=p.shape)
            a = float((analytic * direction).sum())
            n = probe(p, direction, a)
            if n is not None:
                err = max(err, _rel(np.array([a]), np.array([n])))
                break
            kinks += 1
        errors[name] = err
    worst = max(errors, key=errors.get)
    failed = [n for n, e in errors.items() if not e < tol]
    return GradcheckReport(
        passed=not failed, max_rel_error=errors[worst], worst_parameter=worst, tolerance=tol,
        seconds=time.perf_counter() - start, errors=errors, failed=failed, kinks=kinks,
    )
