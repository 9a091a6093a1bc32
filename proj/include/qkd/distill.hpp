#pragma once

#include <vector>

#include "qkd/autograd.hpp"
#include "qkd/tensor.hpp"

namespace qkd {

// Temperature-softened class posterior, rows of a [batch x m] logit tensor:
//   p_i = exp(z_i / T) / sum_j exp(z_j / T),
// computed through max-subtracted log-space.
Tensor softened_posterior(const Tensor& logits, double temperature);
ag::Value softened_posterior(const ag::Value& logits, double temperature);

// Mean over the batch of -log p_y(z; 1). Cross-entropy always runs at T = 1.
ag::Value cross_entropy(const ag::Value& logits, const std::vector<int>& labels);

// Mean over the batch of KL(p(z_from; T) || p(z_to; T)).
ag::Value kl_divergence(const ag::Value& z_from, const ag::Value& z_to, double temperature);
double mean_kl(const Tensor& z_from, const Tensor& z_to, double temperature);

// Distillation objectives. The opposite network's logits are detached, so
// no gradient crosses between the two networks:
//   student: CE(z_S, y) + T^2 * KL(z_T || z_S; T)
//   teacher: CE(z_T, y) + T^2 * KL(z_S || z_T; T)
// `kl_weight` scales the KL term on top of T^2 (1 in normal training).
ag::Value student_kd_loss(const ag::Value& z_student, const ag::Value& z_teacher,
                          const std::vector<int>& labels, double temperature,
                          double kl_weight = 1.0);
ag::Value teacher_kd_loss(const ag::Value& z_teacher, const ag::Value& z_student,
                          const std::vector<int>& labels, double temperature,
                          double kl_weight = 1.0);

// Activation-distillation term: mean squared error between the regressed
// student featuremap and the (detached) teacher featuremap. The regressor
// weight is a linear map [Ds x Dt] for 2-d features or a 1x1 convolution
// [Ot x Cs x 1 x 1] for 4-d featuremaps.
ag::Value activation_distill_loss(const ag::Value& student_featuremap,
                                  const ag::Value& teacher_featuremap,
                                  const ag::Value& regressor_weight);

}  // namespace qkd
