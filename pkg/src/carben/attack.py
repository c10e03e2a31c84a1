"""Composite adversarial attack engine.

Per-component projected gradient ascent on cross-entropy in a given order:
for each sweep, each component in turn runs T gradient steps while all
other components stay fixed. The gradient for a component is obtained by
backpropagating the model loss to the composed image and pulling it back
through the transforms applied after that component.

Steps are greedy: a step is accepted only if it does not decrease the
loss; otherwise the step size is halved (up to 3 times) and then skipped.
This makes the recorded loss trace non-decreasing and every run fully
deterministic.

Order strategies: fixed (the canonical Linf -> Hue -> Saturation ->
Brightness -> Contrast -> Rotation order restricted to the enabled set),
random (seeded permutation), exhaustive (all permutations, first success
wins, otherwise maximal final loss with lexicographic tie-break).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from . import classifier, transforms
from .classifier import ModelWeights, PredictionResult, SplitMix64
from .transforms import DEFAULT_BOUNDS, DEFAULT_EPSILON, Kind, LinfDelta, ParamBounds

MAX_HALVINGS = 3

STRATEGIES = ("fixed", "random", "exhaustive")


@dataclass(frozen=True)
class AttackConfig:
    enabled: tuple[Kind, ...] = tuple(transforms.CANONICAL_ORDER)
    bounds: dict[Kind, ParamBounds] = field(default_factory=lambda: dict(DEFAULT_BOUNDS))
    epsilon: float = DEFAULT_EPSILON
    steps: int = 10
    step_fraction: float = 0.2
    sweeps: int = 1
    early_stop: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.sweeps < 1:
            raise ValueError("sweeps must be >= 1")
        if not 0 < self.step_fraction <= 1:
            raise ValueError("step_fraction must be in (0, 1]")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if len(set(self.enabled)) != len(self.enabled):
            raise ValueError("enabled kinds must be unique")
        object.__setattr__(self, "enabled", tuple(self.enabled))


@dataclass
class AttackResult:
    adversarial: np.ndarray
    chain: list[tuple[Kind, object]]
    order: tuple[Kind, ...]
    success: bool
    loss_trace: list[float]
    model_queries: int
    final_prediction: PredictionResult | None = None
    snapshots: list[tuple[np.ndarray, PredictionResult]] | None = None

    @property
    def final_loss(self) -> float:
        return self.loss_trace[-1]


def canonical_order(enabled) -> tuple[Kind, ...]:
    return tuple(sorted(enabled))


def _state_chain(order, params, delta, epsilon):
    chain = []
    for kind in order:
        if kind is Kind.LINF:
            chain.append((kind, LinfDelta(delta.copy(), epsilon)))
        else:
            chain.append((kind, params[kind]))
    return chain


def _intermediates(image, chain):
    """Images before/after each chain stage: [x0, x1, ..., xn]."""
    imgs = [image]
    for kind, param in chain:
        imgs.append(transforms.apply(kind, imgs[-1], param))
    return imgs


def composite_attack(
    weights: ModelWeights,
    image: np.ndarray,
    label: int,
    config: AttackConfig,
    order: tuple[Kind, ...] | None = None,
    capture: bool = False,
) -> AttackResult:
    """Run the full per-component PGD attack in the given order."""
    x0 = np.asarray(image, dtype=np.float32)
    if order is None:
        order = canonical_order(config.enabled)
    order = tuple(order)
    if sorted(order) != sorted(config.enabled):
        raise ValueError("order must be a permutation of the enabled kinds")

    params = {k: config.bounds[k].identity for k in order if k is not Kind.LINF}
    delta = np.zeros_like(x0) if Kind.LINF in order else None

    queries = 0
    loss0, pred0, probs0 = classifier.predict_loss(weights, x0, label)
    queries += 1
    cur_loss = loss0
    cur_pred = pred0
    cur_probs = probs0
    loss_trace = [cur_loss]
    snapshots = []
    if capture:
        snapshots.append((x0.copy(), _as_prediction(probs0, label)))

    stop = config.early_stop and cur_pred != label

    if not stop:
        for _ in range(config.sweeps):
            for pos, kind in enumerate(order):
                cur_loss, cur_pred, cur_probs, delta, q = _optimize_component(
                    weights, x0, label, config, order, pos, kind, params, delta, cur_loss
                )
                queries += q
                loss_trace.append(cur_loss)
                if capture:
                    snapshots.append(
                        (transforms.compose(x0, _state_chain(order, params, delta, config.epsilon)),
                         _as_prediction(cur_probs, label))
                    )
                if config.early_stop and cur_pred != label:
                    stop = True
                    break
            if stop:
                break

    chain = _state_chain(order, params, delta, config.epsilon)
    adv = transforms.compose(x0, chain)
    final = _as_prediction(cur_probs, label)
    return AttackResult(
        adversarial=adv,
        chain=chain,
        order=order,
        success=final.predicted_label != label,
        loss_trace=loss_trace,
        model_queries=queries,
        final_prediction=final,
        snapshots=snapshots if capture else None,
    )


def _as_prediction(probs: np.ndarray, label: int) -> PredictionResult:
    pred = int(probs.argmax())
    return PredictionResult(probs, pred, float(probs[pred]), pred == label)


def _optimize_component(weights, x0, label, config, order, pos, kind, params, delta, cur_loss):
    """T greedy PGD steps on one component; returns updated state."""
    queries = 0
    cur_pred, cur_probs = None, None
    for _ in range(config.steps):
        chain = _state_chain(order, params, delta, config.epsilon)
        imgs = _intermediates(x0, chain)
        loss, grad = classifier.loss_and_input_grad(weights, imgs[-1], label)
        queries += 1
        cur_loss = max(cur_loss, loss)  # identical up to float noise
        u = grad
        for j in range(len(order) - 1, pos, -1):
            u = transforms.vjp_image(order[j], imgs[j], chain[j][1], u)
        x_in = imgs[pos]

        if kind is Kind.LINF:
            g = transforms.vjp_image(Kind.LINF, x_in, LinfDelta(delta, config.epsilon), u)
            step = config.step_fraction * config.epsilon
            direction = np.sign(g).astype(np.float32)
        else:
            b = config.bounds[kind]
            g = transforms.param_grad(kind, x_in, params[kind], u)
            step = config.step_fraction * (b.hi - b.lo)
            direction = g

        accepted = False
        for _ in range(MAX_HALVINGS + 1):
            if kind is Kind.LINF:
                cand = np.clip(delta + step * direction, -config.epsilon, config.epsilon)
                cand = np.clip(cand, -x_in, 1.0 - x_in).astype(np.float32)
                new_chain = _state_chain(order, params, delta, config.epsilon)
                new_chain[pos] = (Kind.LINF, LinfDelta(cand, config.epsilon))
            else:
                b = config.bounds[kind]
                cand = b.clip(params[kind] + step * direction)
                new_chain = _state_chain(order, params, delta, config.epsilon)
                new_chain[pos] = (kind, cand)
            composed = transforms.compose(x0, new_chain)
            new_loss, new_pred, new_probs = classifier.predict_loss(weights, composed, label)
            queries += 1
            if new_loss >= cur_loss:
                if kind is Kind.LINF:
                    delta = cand
                else:
                    params[kind] = cand
                cur_loss, cur_pred, cur_probs = new_loss, new_pred, new_probs
                accepted = True
                break
            step /= 2.0
        if not accepted:
            break  # state unchanged; further identical steps would also fail

    if cur_probs is None:
        # No step was ever accepted (or T=0): evaluate the current state once.
        composed = transforms.compose(x0, _state_chain(order, params, delta, config.epsilon))
        cur_loss2, cur_pred, cur_probs = classifier.predict_loss(weights, composed, label)
        queries += 1
        cur_loss = max(cur_loss, cur_loss2)
    return cur_loss, cur_pred, cur_probs, delta, queries


def single_attack(weights, image, label, kind: Kind, config: AttackConfig) -> AttackResult:
    """composite_attack restricted to one component."""
    cfg = replace(config, enabled=(kind,))
    return composite_attack(weights, image, label, cfg, order=(kind,))


def order_search(weights, image, label, config: AttackConfig, strategy: str):
    """Pick an attack order per strategy and run the attack.

    exhaustive enumerates permutations in canonical-lexicographic sequence,
    returns the first successful order, else the maximal-final-loss order.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; use one of {STRATEGIES}")
    enabled = canonical_order(config.enabled)
    if strategy == "fixed":
        order = enabled
        return order, composite_attack(weights, image, label, config, order)
    if strategy == "random":
        rng = SplitMix64(config.seed)
        order = list(enabled)
        rng.shuffle(order)
        order = tuple(order)
        return order, composite_attack(weights, image, label, config, order)
    best = None
    total_queries = 0
    for perm in itertools.permutations(enabled):
        result = composite_attack(weights, image, label, config, perm)
        total_queries += result.model_queries
        if result.success:
            result.model_queries = total_queries
            return perm, result
        if best is None or result.final_loss > best[1].final_loss:
            best = (perm, result)
    best[1].model_queries = total_queries
    return best


def order_grid(weights, image, label, config: AttackConfig, orders):
    """Per-order optimization snapshots: (order, images, predictions) rows.

    Each row has len(order)+1 cells; the first cell is the clean image.
    """
    rows = []
    cfg = replace(config, early_stop=False)
    for order in orders:
        result = composite_attack(weights, image, label, cfg, tuple(order), capture=True)
        images = [img for img, _ in result.snapshots]
        preds = [p for _, p in result.snapshots]
        rows.append((tuple(order), images, preds))
    return rows


def check_budgets(result: AttackResult, config: AttackConfig) -> bool:
    """Independent post-hoc budget checker for a finished attack."""
    for kind, param in result.chain:
        if kind is Kind.LINF:
            if float(np.abs(param.delta).max()) > config.epsilon + 1e-7:
                return False
        else:
            b = config.bounds[kind]
            if not b.lo - 1e-9 <= float(param) <= b.hi + 1e-9:
                return False
    return True


def adversarial_batch_perturb(config: AttackConfig | None = None):
    """Cheap 1-sweep composite perturbation callback for attack-in-the-loop training."""
    base = config or AttackConfig(steps=1, sweeps=1)
    cheap = replace(base, steps=min(base.steps, 1) or 1, sweeps=1)

    def perturb(batch, labels, weights):
        out = np.empty_like(batch)
        for i in range(batch.shape[0]):
            res = composite_attack(weights, batch[i].astype(np.float32), int(labels[i]), cheap)
            out[i] = res.adversarial
        return out

    return perturb
