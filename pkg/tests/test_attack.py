import pytest
import torch

from conftest import make_profile
from dlove.attack.attack import (AttackResult, adjudicate, adjudicate_window, attack_blackbox, attack_whitebox,
                                 escalate, escalation_schedule)
from dlove.attack.craft import Perturbation
from dlove.data.image import Image, Watermark, adapt
from dlove.nets.pipeline import build_pipeline
from dlove.surrogate.finetune import common_profile
from dlove.surrogate.pairs import bit_mapping
from dlove.utils.enums import Objective
from dlove.utils.exceptions import ConfigError, ShapeMismatchError, WatermarkKindError
from dlove.utils.models import AttackConfig, CommonSurrogateSpec, Escalation, SuccessPolicy

POLICY = SuccessPolicy()


def _result(epsilon: float, success: bool, iterations: int) -> AttackResult:
    image = Image.constant(0.5, (4, 4, 1))

    return AttackResult(attacked=image, delta=Perturbation(delta=torch.zeros(4, 4, 1), epsilon=epsilon),
                        extracted=Watermark.from_bits([int(success)]), success=success, removal=success,
                        iterations_used=iterations, loss_trace=[0.0], epsilon_used=epsilon)


@pytest.mark.parametrize('extracted, success, removal', [
    ([0, 1, 1, 1], True, True),
    ([1, 1, 1, 0], False, True),
    ([1, 1, 1, 1], False, False),
    ([0, 0, 0, 0], False, True),
])
def test_adjudicate_bits(bits, extracted, success, removal):
    assert adjudicate(extracted=bits(*extracted), alpha=bits(1, 1, 1, 1), beta=bits(0, 1, 1, 1),
                      policy=POLICY) == (success, removal)


def test_adjudicate_images():
    picture = Image(pixels=torch.rand(8, 8, 3, generator=torch.Generator().manual_seed(1)))
    beta = Watermark.from_image(picture)
    alpha = Watermark.from_image(Image(pixels=1.0 - picture.pixels))

    assert adjudicate(extracted=beta, alpha=alpha, beta=beta, policy=POLICY) == (True, True)
    assert adjudicate(extracted=alpha, alpha=alpha, beta=beta, policy=POLICY) == (False, False)


def test_adjudicate_needs_one_kind(bits):
    image = Watermark.from_image(Image.constant(0.5, (8, 8, 1)))

    with pytest.raises(WatermarkKindError):
        adjudicate(extracted=image, alpha=bits(1), beta=bits(0), policy=POLICY)


def test_adjudicate_window_ignores_bits_outside_the_window(bits):
    spec = CommonSurrogateSpec(io_shape=(8, 8, 3), wm_bits=2, member_targets=[make_profile(bits=4)])
    mapping = bit_mapping(spec=spec, member=spec.member_targets[0])

    assert adjudicate_window(extracted=bits(0, 1, 1, 1), alpha=bits(1, 1, 0, 0), beta=bits(0, 1, 0, 0),
                             policy=POLICY, mapping=mapping) == (True, True)


def test_escalation_schedule_is_geometric():
    cfg = AttackConfig(epsilon=0.01, escalation=Escalation(epsilon_max=0.16, steps=3))

    assert escalation_schedule(cfg) == pytest.approx([0.01, 0.04, 0.16])
    assert escalation_schedule(AttackConfig(epsilon=0.02)) == [0.02]


def test_escalation_accumulates_attempts():
    cfg = AttackConfig(epsilon=0.01, escalation=Escalation(epsilon_max=0.16, steps=3))
    seen = []

    def attempt(step: AttackConfig) -> AttackResult:
        seen.append(step.epsilon)
        assert step.escalation is None
        return _result(epsilon=step.epsilon, success=step.epsilon >= 0.03, iterations=10)

    result = escalate(attempt, cfg)

    assert result.success
    assert result.attempts == 2
    assert result.iterations_used == 20
    assert result.epsilon_used == pytest.approx(0.04)
    assert seen == pytest.approx([0.01, 0.04])


def test_escalation_reports_last_failure():
    cfg = AttackConfig(epsilon=0.01, escalation=Escalation(epsilon_max=0.16, steps=4))

    result = escalate(lambda step: _result(epsilon=step.epsilon, success=False, iterations=5), cfg)

    assert not result.success
    assert result.attempts == 4
    assert result.epsilon_used == pytest.approx(0.16)


def test_escalate_needs_schedule():
    with pytest.raises(ConfigError):
        escalate(lambda step: _result(step.epsilon, True, 1), AttackConfig(epsilon=0.1))


def test_escalation_limit_below_epsilon():
    with pytest.raises(ConfigError):
        AttackConfig(epsilon=0.2, escalation=Escalation(epsilon_max=0.1))


def test_whitebox_overwrites_single_pixel(single_pixel_pipeline, pixel_image, bits):
    W = pixel_image(0.6)
    result = attack_whitebox(target=single_pixel_pipeline, W=W, alpha=bits(1), beta=bits(0),
                             cfg=AttackConfig(epsilon=0.3, learning_rate=0.01, max_iter=1000))

    assert result.success
    assert result.removal
    assert result.extracted.bit_list() == [0]
    assert float(result.attacked.pixels[0, 0, 0]) <= 0.5
    assert float((result.attacked.pixels - W.pixels).abs().max()) <= 0.3 + 1e-12
    assert result.alpha_beta_cosine == pytest.approx(-1.0)
    assert result.ber_alpha == 1.0
    assert result.attempts == 1


def test_whitebox_escalates_after_failure(single_pixel_pipeline, pixel_image, bits):
    cfg = AttackConfig(epsilon=0.05, learning_rate=0.01, max_iter=200,
                       escalation=Escalation(epsilon_max=0.4, steps=3))

    result = attack_whitebox(target=single_pixel_pipeline, W=pixel_image(0.6), alpha=bits(1), beta=bits(0),
                             cfg=cfg)

    assert result.success
    assert result.attempts == 2
    assert result.iterations_used > 200
    assert result.epsilon_used == pytest.approx(0.05 * 8 ** 0.5)


@pytest.mark.parametrize('epsilon, succeeds', [(0.05, False), (0.1, None), (0.3, True)])
def test_objective_variants_agree_on_outcome(single_pixel_pipeline, pixel_image, bits, epsilon, succeeds):
    outcomes = []
    for objective in (Objective.whitebox_full, Objective.algorithm_literal):
        cfg = AttackConfig(epsilon=epsilon, learning_rate=0.01, max_iter=1000, objective=objective)
        result = attack_whitebox(target=single_pixel_pipeline, W=pixel_image(0.6), alpha=bits(1), beta=bits(0),
                                 cfg=cfg)
        outcomes.append((result.success, result.removal, result.extracted.bit_list()))

    assert outcomes[0] == outcomes[1]
    # 0.1 sits on the decision boundary, where only agreement is asserted
    if succeeds is not None:
        assert outcomes[0][0] == succeeds


def test_whitebox_rejects_wrong_image(single_pixel_pipeline, pixel_image, bits):
    with pytest.raises(ShapeMismatchError):
        attack_whitebox(target=single_pixel_pipeline, W=pixel_image(0.6, shape=(8, 8, 1)), alpha=bits(1),
                        beta=bits(0), cfg=AttackConfig(epsilon=0.1))


def test_blackbox_transfers_between_matching_decoders(single_pixel_pipeline, pixel_image, bits):
    target = build_pipeline(profile=single_pixel_pipeline.profile, seed=0).double()
    target.decoder = single_pixel_pipeline.decoder

    result = attack_blackbox(surrogate=single_pixel_pipeline, target=target, W=pixel_image(0.6), beta=bits(0),
                             cfg=AttackConfig(epsilon=0.3, learning_rate=0.01, max_iter=1000))

    assert result.surrogate_success
    assert result.success
    assert result.removal
    assert result.attempts == 1


def test_blackbox_through_shared_surrogate(tiny_pipeline, bits):
    spec = CommonSurrogateSpec(io_shape=(16, 16, 3), wm_bits=3, member_targets=[tiny_pipeline.profile])
    surrogate = build_pipeline(profile=common_profile(spec), seed=1)
    mapping = bit_mapping(spec=spec, member=tiny_pipeline.profile)
    W = Image(pixels=torch.rand(8, 8, 1, dtype=torch.float64, generator=torch.Generator().manual_seed(2)))

    result = attack_blackbox(surrogate=surrogate, target=tiny_pipeline, W=W, beta=bits(0, 1),
                             cfg=AttackConfig(epsilon=0.1, max_iter=20), alpha=bits(1, 1), mapping=mapping)

    assert result.attacked.shape == (8, 8, 1)
    assert result.extracted.size == 2
    assert result.delta.delta.shape == (16, 16, 3)
    assert isinstance(result.surrogate_success, bool)
    assert result.success == result.extracted.equals(bits(0, 1))


def test_blackbox_delta_lives_at_the_surrogate_resolution(tiny_pipeline, bits):
    spec = CommonSurrogateSpec(io_shape=(16, 16, 3), wm_bits=3, member_targets=[tiny_pipeline.profile])
    surrogate = build_pipeline(profile=common_profile(spec), seed=1)
    W = Image(pixels=torch.rand(8, 8, 1, dtype=torch.float64, generator=torch.Generator().manual_seed(4)))

    result = attack_blackbox(surrogate=surrogate, target=tiny_pipeline, W=W, beta=bits(0, 1),
                             cfg=AttackConfig(epsilon=0.1, max_iter=10), alpha=bits(1, 1),
                             mapping=bit_mapping(spec=spec, member=tiny_pipeline.profile))

    host = adapt(image=W, shape=(16, 16, 3))
    perturbed = Image.from_batch(host.to_batch() + result.delta.delta.permute(2, 0, 1).unsqueeze(0))
    assert result.delta.delta.shape == (16, 16, 3)
    assert torch.equal(result.attacked.pixels, adapt(image=perturbed, shape=(8, 8, 1)).pixels)
