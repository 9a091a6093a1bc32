#include "qkd/distill.hpp"

#include <cmath>

#include "qkd/error.hpp"

namespace qkd {

namespace {

void check_temperature(double t) {
  if (!(t > 0.0)) throw ContractError("temperature must be positive, got " + std::to_string(t));
}

void check_logit_pair(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || !a.same_shape(b)) {
    throw ContractError("logit tensors must be 2-d with matching shapes, got " +
                        shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  }
}

// Row-wise log-softmax of z / T, plain-tensor path.
Tensor log_softened(const Tensor& z, double t) {
  const std::size_t n = z.dim(0), m = z.dim(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    double mx = z[i * m] / t;
    for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, z[i * m + j] / t);
    double lse = 0.0;
    for (std::size_t j = 0; j < m; ++j) lse += std::exp(z[i * m + j] / t - mx);
    lse = std::log(lse) + mx;
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = z[i * m + j] / t - lse;
  }
  return out;
}

}  // namespace

Tensor softened_posterior(const Tensor& logits, double temperature) {
  check_temperature(temperature);
  if (logits.ndim() != 2) throw ContractError("softened_posterior: expects 2-d logits");
  Tensor out = log_softened(logits, temperature);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(out[i]);
  return out;
}

ag::Value softened_posterior(const ag::Value& logits, double temperature) {
  check_temperature(temperature);
  return ag::exp(ag::log_softmax(ag::scale(logits, 1.0 / temperature)));
}

ag::Value cross_entropy(const ag::Value& logits, const std::vector<int>& labels) {
  return ag::nll(ag::log_softmax(logits), labels);
}

ag::Value kl_divergence(const ag::Value& z_from, const ag::Value& z_to, double temperature) {
  check_temperature(temperature);
  check_logit_pair(z_from.tensor(), z_to.tensor());
  const double batch = static_cast<double>(z_from.tensor().dim(0));
  ag::Value ls_from = ag::log_softmax(ag::scale(z_from, 1.0 / temperature));
  ag::Value ls_to = ag::log_softmax(ag::scale(z_to, 1.0 / temperature));
  ag::Value p_from = ag::exp(ls_from);
  ag::Value terms = ag::mul(p_from, ag::sub(ls_from, ls_to));
  return ag::scale(ag::sum(terms), 1.0 / batch);
}

double mean_kl(const Tensor& z_from, const Tensor& z_to, double temperature) {
  check_temperature(temperature);
  check_logit_pair(z_from, z_to);
  const std::size_t n = z_from.dim(0), m = z_from.dim(1);
  Tensor lf = log_softened(z_from, temperature);
  Tensor lt = log_softened(z_to, temperature);
  double acc = 0.0;
  for (std::size_t i = 0; i < n * m; ++i) acc += std::exp(lf[i]) * (lf[i] - lt[i]);
  return acc / static_cast<double>(n);
}

ag::Value student_kd_loss(const ag::Value& z_student, const ag::Value& z_teacher,
                          const std::vector<int>& labels, double temperature, double kl_weight) {
  ag::Value ce = cross_entropy(z_student, labels);
  ag::Value kl = kl_divergence(ag::detach(z_teacher), z_student, temperature);
  return ag::add(ce, ag::scale(kl, kl_weight * temperature * temperature));
}

ag::Value teacher_kd_loss(const ag::Value& z_teacher, const ag::Value& z_student,
                          const std::vector<int>& labels, double temperature, double kl_weight) {
  ag::Value ce = cross_entropy(z_teacher, labels);
  ag::Value kl = kl_divergence(ag::detach(z_student), z_teacher, temperature);
  return ag::add(ce, ag::scale(kl, kl_weight * temperature * temperature));
}

ag::Value activation_distill_loss(const ag::Value& student_featuremap,
                                  const ag::Value& teacher_featuremap,
                                  const ag::Value& regressor_weight) {
  const Tensor& fs = student_featuremap.tensor();
  const Tensor& ft = teacher_featuremap.tensor();
  ag::Value regressed;
  if (fs.ndim() == 2 && regressor_weight.tensor().ndim() == 2) {
    regressed = ag::matmul(student_featuremap, regressor_weight);
  } else if (fs.ndim() == 4 && regressor_weight.tensor().ndim() == 4) {
    regressed = ag::conv2d(student_featuremap, regressor_weight, 1, 0);
  } else {
    throw ContractError("activation_distill_loss: featuremap/regressor rank mismatch");
  }
  if (!regressed.tensor().same_shape(ft)) {
    throw ContractError("activation_distill_loss: regressed shape " +
                        shape_to_string(regressed.shape()) + " does not match teacher featuremap " +
                        shape_to_string(ft.shape()));
  }
  ag::Value diff = ag::sub(regressed, ag::detach(teacher_featuremap));
  return ag::scale(ag::sum(ag::mul(diff, diff)), 1.0 / static_cast<double>(ft.size()));
}

}  // namespace qkd
