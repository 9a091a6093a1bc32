"""Trainable-interval fake quantization with three-phase knowledge distillation."""

from qkd._core import (
    cross_entropy,
    default_config_json,
    evaluate_checkpoint,
    gen_synthetic,
    init_activation_interval,
    init_weight_interval,
    kl_divergence,
    pretrain,
    quantize_backward,
    quantize_dequantize,
    run_experiment,
    softened_posterior,
    student_kd_loss,
    teacher_kd_loss,
)

__all__ = [
    "cross_entropy",
    "default_config_json",
    "evaluate_checkpoint",
    "gen_synthetic",
    "init_activation_interval",
    "init_weight_interval",
    "kl_divergence",
    "pretrain",
    "quantize_backward",
    "quantize_dequantize",
    "run_experiment",
    "softened_posterior",
    "student_kd_loss",
    "teacher_kd_loss",
]
