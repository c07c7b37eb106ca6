import math
import logging
from typing import Callable, List, Optional

import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, model_validator

from dlove.data.image import Image, Watermark
from dlove.nets.perceptual import perceptual_distance, pyramid_for
from dlove.utils.enums import AttackLoss, Objective, WatermarkKind
from dlove.utils.exceptions import AttackDivergedError, ConfigError, ShapeMismatchError
from dlove.utils.models import AttackConfig, SuccessPolicy

logger = logging.getLogger(__name__)

# (1, C, H, W) images -> (1, N) logits or (1, C, H, W) watermark images
DecoderFn = Callable[[torch.Tensor], torch.Tensor]


class Perturbation(BaseModel):
    """
    H×W×C additive perturbation with every entry in [-epsilon, epsilon]
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    delta: torch.Tensor
    epsilon: float

    @model_validator(mode='after')
    def validate_bound(self):
        if self.delta.numel() and float(self.delta.abs().max()) > self.epsilon:
            raise ShapeMismatchError(f"Perturbation exceeds its limit {self.epsilon}.")

        return self

    @property
    def linf(self) -> float:
        return float(self.delta.abs().max()) if self.delta.numel() else 0.0


class CraftResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    perturbation: Perturbation
    loss_trace: List[float]
    iterations: int
    reached: bool


def representable_bound(epsilon: float, dtype: torch.dtype) -> float:
    """Largest value of `dtype` that does not exceed epsilon."""
    bound = torch.tensor(epsilon, dtype=dtype)
    if float(bound) > epsilon:
        bound = torch.nextafter(bound, torch.zeros_like(bound))

    return float(bound)


def clip_perturbation(delta: torch.Tensor, epsilon: float) -> torch.Tensor:
    bound = representable_bound(epsilon=epsilon, dtype=delta.dtype)

    return delta.clamp(-bound, bound)


def attack_loss(loss: AttackLoss, prediction: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    if loss == AttackLoss.l1:
        return F.l1_loss(prediction, target)

    return F.mse_loss(prediction, target)


def decoded_value(kind: WatermarkKind, output: torch.Tensor) -> torch.Tensor:
    """γ: bit probabilities for bit decoders, raw pixels for image decoders."""
    return torch.sigmoid(output) if kind == WatermarkKind.bits else output


def target_tensor(watermark: Watermark, like: torch.Tensor) -> torch.Tensor:
    return watermark.as_target(dtype=like.dtype).reshape(like.shape)


def objective_value(output: torch.Tensor, alpha: Optional[Watermark], beta: Watermark, loss: AttackLoss,
                    objective: Objective) -> torch.Tensor:
    gamma = decoded_value(beta.kind, output)
    beta_target = target_tensor(beta, gamma)
    if objective == Objective.blackbox:
        return attack_loss(loss, gamma, beta_target)

    alpha_target = target_tensor(alpha, gamma)
    if objective == Objective.algorithm_literal:
        return attack_loss(loss, beta_target, gamma) - attack_loss(loss, beta_target, alpha_target)

    return attack_loss(loss, gamma, beta_target) - attack_loss(loss, gamma, alpha_target)


def perturbed_input(image: torch.Tensor, delta: torch.Tensor, clamp_pixels: bool) -> torch.Tensor:
    perturbed = image + delta
    return perturbed.clamp(0.0, 1.0) if clamp_pixels else perturbed


def crafting_objective(decoder: DecoderFn, image: torch.Tensor, delta: torch.Tensor, alpha: Optional[Watermark],
                       beta: Watermark, cfg: AttackConfig) -> torch.Tensor:
    """Objective of one iteration at the (1, C, H, W) host `image` perturbed by `delta`."""
    output = decoder(perturbed_input(image, delta, cfg.clamp_pixels))[0]

    return objective_value(output=output, alpha=alpha, beta=beta, loss=cfg.loss, objective=cfg.objective)


def matches_target(output: torch.Tensor, beta: Watermark, policy: SuccessPolicy) -> bool:
    """Whether one decoder output already decodes to β under the success predicate."""
    if beta.kind == WatermarkKind.bits:
        return bool(torch.equal((output.detach() > 0).to(torch.int64).flatten(), beta.bits.to(torch.int64)))

    estimate = output.detach().clamp(0.0, 1.0).double().unsqueeze(0)
    target = beta.image.to_batch().double()
    pyramid = pyramid_for(seed=policy.pyramid_seed, channels=target.shape[1], dtype=torch.float64)
    with torch.no_grad():
        distance = float(perceptual_distance(estimate, target, pyramid)[0])

    x = estimate.flatten() - estimate.mean()
    y = target.flatten() - target.mean()
    norm = float(x.norm() * y.norm())
    cosine = float(x @ y) / norm if norm > 0 else float(torch.equal(estimate, target))

    return distance < policy.image_success_threshold and cosine >= policy.image_success_cosine


def craft(decoder: DecoderFn, W: Image, alpha: Optional[Watermark], beta: Watermark,
          cfg: AttackConfig) -> CraftResult:
    """
    Crafting loop: δ starts at zero; each iteration decodes W + δ, stops once it decodes to β, otherwise
    takes one Adam step on δ and clips it to [-ε, ε].

    loss_trace holds the objective at every evaluated δ, the final one included.
    """
    if cfg.objective != Objective.blackbox and alpha is None:
        raise ConfigError(f"Objective '{cfg.objective.value}' needs the original watermark.")
    if alpha is not None and alpha.kind != beta.kind:
        raise ShapeMismatchError("Original and target watermarks differ in kind.")

    image = W.to_batch()
    delta = torch.zeros_like(image, requires_grad=True)
    optimizer = torch.optim.Adam([delta], lr=cfg.learning_rate)
    trace: List[float] = []
    iterations = 0
    reached = False

    while True:
        output = decoder(perturbed_input(image, delta, cfg.clamp_pixels))[0]
        if beta.kind == WatermarkKind.bits and output.shape != beta.bits.shape:
            raise ShapeMismatchError(f"Decoder emits {tuple(output.shape)} logits for a {beta.size}-bit target.")
        value = objective_value(output=output, alpha=alpha, beta=beta, loss=cfg.loss, objective=cfg.objective)
        if not math.isfinite(float(value)):
            raise AttackDivergedError(f"Crafting objective became {float(value)} at iteration {iterations}.")
        trace.append(float(value))

        if iterations % cfg.check_every == 0 or iterations == cfg.max_iter:
            reached = matches_target(output=output, beta=beta, policy=cfg.success)
            if reached and cfg.early_exit:
                break
        if iterations == cfg.max_iter:
            break

        gradient, = torch.autograd.grad(value, delta)
        delta.grad = gradient
        optimizer.step()
        with torch.no_grad():
            delta.copy_(clip_perturbation(delta, cfg.epsilon))
        iterations += 1

    logger.debug("Crafting stopped after %d iterations (objective %.6f -> %.6f, reached=%s)",
                 iterations, trace[0], trace[-1], reached)
    perturbation = Perturbation(delta=delta.detach()[0].permute(1, 2, 0).contiguous(), epsilon=cfg.epsilon)

    return CraftResult(perturbation=perturbation, loss_trace=trace, iterations=iterations, reached=reached)
