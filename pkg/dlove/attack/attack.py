import logging
from typing import Callable, List, Optional, Tuple

import torch
from pydantic import BaseModel, ConfigDict

from dlove.attack.craft import (CraftResult, Perturbation, attack_loss, craft, decoded_value, matches_target,
                                target_tensor)
from dlove.data.image import Image, Watermark, adapt, quantize
from dlove.metrics.quality import lpips_proxy
from dlove.metrics.watermark import ber, cosine_similarity
from dlove.nets.pipeline import Pipeline, check_image, check_watermark, decode
from dlove.surrogate.pairs import BitMapping, to_surrogate_bits
from dlove.utils.enums import Objective, WatermarkKind
from dlove.utils.exceptions import ConfigError, WatermarkKindError
from dlove.utils.models import AttackConfig, MetricRecord, SuccessPolicy

logger = logging.getLogger(__name__)


class AttackResult(BaseModel):
    """
    Outcome of one attack on one image.

    `delta` is kept at the resolution it was crafted at. For a black-box attack through a surrogate with
    another input shape that is the surrogate's shape, and `attacked` is the clamped W + δ brought back to
    the target's shape rather than W + δ itself.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    attacked: Image
    delta: Perturbation
    extracted: Watermark
    success: bool
    removal: bool
    iterations_used: int
    attempts: int = 1
    loss_trace: List[float]
    metrics: Optional[MetricRecord] = None
    epsilon_used: float
    alpha_beta_cosine: Optional[float] = None
    ber_alpha: Optional[float] = None
    surrogate_success: Optional[bool] = None


def window(watermark: Watermark, size: int) -> Watermark:
    return Watermark.from_bits(watermark.bits[:size])


def adjudicate(extracted: Watermark, alpha: Watermark, beta: Watermark,
               policy: SuccessPolicy) -> Tuple[bool, bool]:
    """
    Bits: success iff extracted equals β exactly, removal iff BER to α reaches the threshold.
    Images: success iff close to β in perceptual distance and cosine, removal iff the cosine to α drops.
    """
    if not (extracted.kind == alpha.kind == beta.kind):
        raise WatermarkKindError("Extracted, original and target watermarks must share one kind.")

    if extracted.kind == WatermarkKind.bits:
        success = extracted.equals(beta)
        removal = ber(extracted, alpha) >= policy.removal_threshold

        return success, removal

    distance = lpips_proxy(extracted.image, beta.image, pyramid_seed=policy.pyramid_seed)
    success = (distance < policy.image_success_threshold
               and cosine_similarity(extracted, beta) >= policy.image_success_cosine)
    removal = cosine_similarity(extracted, alpha) < policy.image_removal_cosine

    return success, removal


def adjudicate_window(extracted: Watermark, alpha: Watermark, beta: Watermark, policy: SuccessPolicy,
                      mapping: Optional[BitMapping] = None) -> Tuple[bool, bool]:
    """adjudicate restricted to the bits a shared surrogate actually attacks."""
    if mapping is None:
        return adjudicate(extracted=extracted, alpha=alpha, beta=beta, policy=policy)

    return adjudicate(extracted=window(extracted, mapping.window), alpha=window(alpha, mapping.window),
                      beta=window(beta, mapping.window), policy=policy)


def escalation_schedule(cfg: AttackConfig) -> List[float]:
    if cfg.escalation is None:
        return [cfg.epsilon]

    steps = cfg.escalation.steps
    ratio = cfg.escalation.epsilon_max / cfg.epsilon
    schedule = [cfg.epsilon * ratio ** (index / (steps - 1)) for index in range(steps - 1)]

    return schedule + [cfg.escalation.epsilon_max]


def escalate(attack_fn: Callable[[AttackConfig], AttackResult], cfg: AttackConfig) -> AttackResult:
    """Retries with geometrically growing ε until success; iterations and attempts accumulate."""
    if cfg.escalation is None:
        raise ConfigError("Escalation needs an escalation section in the attack config.")

    iterations, attempts = 0, 0
    result = None
    for epsilon in escalation_schedule(cfg):
        result = attack_fn(cfg.model_copy(update={'epsilon': epsilon, 'escalation': None}))
        iterations += result.iterations_used
        attempts += 1
        if result.success:
            break
        logger.debug("Attack failed at epsilon %.4f, escalating", epsilon)

    return result.model_copy(update={'iterations_used': iterations, 'attempts': attempts})


def _deliver(W: Image, craft_result: CraftResult) -> Image:
    return Image.from_batch(W.to_batch() + craft_result.perturbation.delta.permute(2, 0, 1).unsqueeze(0))


def _verify(target: Pipeline, attacked: Image, cfg: AttackConfig) -> Watermark:
    return decode(pipeline=target, image=quantize(attacked) if cfg.quantize_before_verify else attacked)


def _comparison(extracted: Watermark, alpha: Watermark, beta: Watermark) -> Tuple[float, Optional[float]]:
    ber_alpha = ber(extracted, alpha) if extracted.kind == WatermarkKind.bits else None

    return cosine_similarity(alpha, beta), ber_alpha


def attack_whitebox(target: Pipeline, W: Image, alpha: Watermark, beta: Watermark,
                    cfg: AttackConfig) -> AttackResult:
    check_image(pipeline=target, image=W)
    check_watermark(profile=target.profile, watermark=alpha)
    check_watermark(profile=target.profile, watermark=beta)
    if cfg.escalation is not None:
        return escalate(lambda attempt: attack_whitebox(target, W, alpha, beta, attempt), cfg)
    if cfg.objective == Objective.blackbox:
        cfg = cfg.model_copy(update={'objective': Objective.whitebox_full})

    crafted = craft(decoder=target.decode_batch, W=W, alpha=alpha, beta=beta, cfg=cfg)
    attacked = _deliver(W, crafted)
    extracted = _verify(target=target, attacked=attacked, cfg=cfg)
    success, removal = adjudicate(extracted=extracted, alpha=alpha, beta=beta, policy=cfg.success)
    alpha_beta_cosine, ber_alpha = _comparison(extracted, alpha, beta)

    return AttackResult(attacked=attacked, delta=crafted.perturbation, extracted=extracted, success=success,
                        removal=removal, iterations_used=crafted.iterations, loss_trace=crafted.loss_trace,
                        epsilon_used=cfg.epsilon, alpha_beta_cosine=alpha_beta_cosine, ber_alpha=ber_alpha)


def attack_blackbox(surrogate: Pipeline, target: Pipeline, W: Image, beta: Watermark, cfg: AttackConfig,
                    alpha: Optional[Watermark] = None, mapping: Optional[BitMapping] = None) -> AttackResult:
    """
    Transfer attack: δ is crafted against the surrogate decoder at its resolution, the attacked image is
    brought back to the target's resolution and adjudicated on the target decoder only.

    Without α the target's decode of the unattacked image stands in for it. With a BitMapping the
    surrogate carries a capped watermark and adjudication covers the mapped window.
    """
    check_image(pipeline=target, image=W)
    check_watermark(profile=target.profile, watermark=beta)
    if alpha is None:
        alpha = decode(pipeline=target, image=W)
    check_watermark(profile=target.profile, watermark=alpha)
    if cfg.escalation is not None:
        return escalate(lambda attempt: attack_blackbox(surrogate, target, W, beta, attempt, alpha, mapping), cfg)
    cfg = cfg.model_copy(update={'objective': Objective.blackbox})

    surrogate_beta, surrogate_alpha = beta, alpha
    if mapping is not None:
        surrogate_beta = Watermark.from_bits(to_surrogate_bits(beta.bits, mapping))
        surrogate_alpha = Watermark.from_bits(to_surrogate_bits(alpha.bits, mapping))
    check_watermark(profile=surrogate.profile, watermark=surrogate_beta)

    host = adapt(image=W, shape=surrogate.profile.cover_shape)
    crafted = craft(decoder=surrogate.decode_batch, W=host, alpha=None, beta=surrogate_beta, cfg=cfg)
    attacked_host = _deliver(host, crafted)

    with torch.no_grad():
        gamma = decoded_value(surrogate_beta.kind, surrogate.decode_batch(host.to_batch())[0])
        constant = float(attack_loss(cfg.loss, gamma, target_tensor(surrogate_alpha, gamma)))
    logger.debug("Combined transfer objective %.6f (crafted %.6f + unattacked term %.6f)",
                 crafted.loss_trace[-1] + constant, crafted.loss_trace[-1], constant)

    with torch.no_grad():
        surrogate_output = surrogate.decode_batch(attacked_host.to_batch())[0]
    surrogate_success = matches_target(output=surrogate_output, beta=surrogate_beta, policy=cfg.success)
    attacked = adapt(image=attacked_host, shape=target.profile.cover_shape)
    extracted = _verify(target=target, attacked=attacked, cfg=cfg)
    success, removal = adjudicate_window(extracted=extracted, alpha=alpha, beta=beta, policy=cfg.success,
                                         mapping=mapping)
    alpha_beta_cosine, ber_alpha = _comparison(extracted, alpha, beta)

    return AttackResult(attacked=attacked, delta=crafted.perturbation, extracted=extracted, success=success,
                        removal=removal, iterations_used=crafted.iterations, loss_trace=crafted.loss_trace,
                        epsilon_used=cfg.epsilon, alpha_beta_cosine=alpha_beta_cosine, ber_alpha=ber_alpha,
                        surrogate_success=surrogate_success)
