#include "qkd/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace qkd {
namespace ag {

namespace {

NodePtr make_node(Tensor value, std::vector<NodePtr> inputs,
                  std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->inputs = std::move(inputs);
  for (const auto& in : n->inputs) {
    if (in->requires_grad) {
      n->requires_grad = true;
      break;
    }
  }
  if (n->requires_grad) n->backprop = std::move(backprop);
  return n;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
  }
}

}  // namespace

Value constant(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  return Value(n);
}

Value leaf(Parameter& p) {
  auto n = std::make_shared<Node>();
  n->value = p.value;
  n->requires_grad = true;
  n->param = &p;
  return Value(n);
}

Value detach(const Value& v) { return constant(v.tensor()); }

Value matmul(const Value& a, const Value& b) {
  const Tensor& ta = a.tensor();
  const Tensor& tb = b.tensor();
  if (ta.ndim() != 2 || tb.ndim() != 2) {
    throw DimensionError("matmul: expects 2-d operands, got " + shape_to_string(ta.shape()) +
                         " and " + shape_to_string(tb.shape()));
  }
  const std::size_t m = ta.dim(0), k = ta.dim(1), k2 = tb.dim(0), n = tb.dim(1);
  if (k != k2) {
    throw DimensionError("matmul: inner dimensions disagree, " + shape_to_string(ta.shape()) +
                         " x " + shape_to_string(tb.shape()));
  }
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += ta[i * k + t] * tb[t * n + j];
      out[i * n + j] = acc;
    }
  }
  return Value(make_node(std::move(out), {a.node(), b.node()}, [m, k, n](Node& self) {
    const Tensor& A = self.inputs[0]->value;
    const Tensor& B = self.inputs[1]->value;
    Tensor& dA = self.inputs[0]->grad;
    Tensor& dB = self.inputs[1]->grad;
    const Tensor& up = self.grad;
    // dA = up * B^T, dB = A^T * up
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t t = 0; t < k; ++t) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += up[i * n + j] * B[t * n + j];
        dA[i * k + t] += acc;
      }
    }
    for (std::size_t t = 0; t < k; ++t) {
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < m; ++i) acc += A[i * k + t] * up[i * n + j];
        dB[t * n + j] += acc;
      }
    }
  }));
}

Value conv2d(const Value& x, const Value& w, int stride, int padding) {
  const Tensor& tx = x.tensor();
  const Tensor& tw = w.tensor();
  if (tx.ndim() != 4 || tw.ndim() != 4) {
    throw DimensionError("conv2d: expects NCHW input and OCKK weights");
  }
  if (stride < 1) throw ContractError("conv2d: stride must be >= 1");
  if (padding < 0) throw ContractError("conv2d: padding must be >= 0");
  const std::size_t N = tx.dim(0), C = tx.dim(1), H = tx.dim(2), W = tx.dim(3);
  const std::size_t O = tw.dim(0), Cw = tw.dim(1), KH = tw.dim(2), KW = tw.dim(3);
  if (C != Cw) {
    throw DimensionError("conv2d: channel mismatch, input has " + std::to_string(C) +
                         ", kernel expects " + std::to_string(Cw));
  }
  if (KH > H + 2 * static_cast<std::size_t>(padding) ||
      KW > W + 2 * static_cast<std::size_t>(padding)) {
    throw DimensionError("conv2d: kernel larger than padded input");
  }
  const std::size_t OH = (H + 2 * padding - KH) / stride + 1;
  const std::size_t OW = (W + 2 * padding - KW) / stride + 1;

  Tensor out({N, O, OH, OW});
  const auto xi = [&](std::size_t n, std::size_t c, std::size_t h, std::size_t ww) {
    return ((n * C + c) * H + h) * W + ww;
  };
  const auto wi = [&](std::size_t o, std::size_t c, std::size_t u, std::size_t v) {
    return ((o * C + c) * KH + u) * KW + v;
  };
  const auto oi = [&](std::size_t n, std::size_t o, std::size_t i, std::size_t j) {
    return ((n * O + o) * OH + i) * OW + j;
  };
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t o = 0; o < O; ++o) {
      for (std::size_t i = 0; i < OH; ++i) {
        for (std::size_t j = 0; j < OW; ++j) {
          double acc = 0.0;
          for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t u = 0; u < KH; ++u) {
              const long hh = static_cast<long>(i) * stride + static_cast<long>(u) - padding;
              if (hh < 0 || hh >= static_cast<long>(H)) continue;
              for (std::size_t v = 0; v < KW; ++v) {
                const long ww = static_cast<long>(j) * stride + static_cast<long>(v) - padding;
                if (ww < 0 || ww >= static_cast<long>(W)) continue;
                acc += tx[xi(n, c, hh, ww)] * tw[wi(o, c, u, v)];
              }
            }
          }
          out[oi(n, o, i, j)] = acc;
        }
      }
    }
  }
  return Value(make_node(
      std::move(out), {x.node(), w.node()}, [N, C, H, W, O, KH, KW, OH, OW, stride, padding](Node& self) {
        const Tensor& X = self.inputs[0]->value;
        const Tensor& Wt = self.inputs[1]->value;
        Tensor& dX = self.inputs[0]->grad;
        Tensor& dW = self.inputs[1]->grad;
        const Tensor& up = self.grad;
        const auto xi = [&](std::size_t n, std::size_t c, std::size_t h, std::size_t ww) {
          return ((n * C + c) * H + h) * W + ww;
        };
        const auto wi = [&](std::size_t o, std::size_t c, std::size_t u, std::size_t v) {
          return ((o * C + c) * KH + u) * KW + v;
        };
        const auto oi = [&](std::size_t n, std::size_t o, std::size_t i, std::size_t j) {
          return ((n * O + o) * OH + i) * OW + j;
        };
        for (std::size_t n = 0; n < N; ++n) {
          for (std::size_t o = 0; o < O; ++o) {
            for (std::size_t i = 0; i < OH; ++i) {
              for (std::size_t j = 0; j < OW; ++j) {
                const double g = up[oi(n, o, i, j)];
                if (g == 0.0) continue;
                for (std::size_t c = 0; c < C; ++c) {
                  for (std::size_t u = 0; u < KH; ++u) {
                    const long hh = static_cast<long>(i) * stride + static_cast<long>(u) - padding;
                    if (hh < 0 || hh >= static_cast<long>(H)) continue;
                    for (std::size_t v = 0; v < KW; ++v) {
                      const long ww = static_cast<long>(j) * stride + static_cast<long>(v) - padding;
                      if (ww < 0 || ww >= static_cast<long>(W)) continue;
                      dX[xi(n, c, hh, ww)] += g * Wt[wi(o, c, u, v)];
                      dW[wi(o, c, u, v)] += g * X[xi(n, c, hh, ww)];
                    }
                  }
                }
              }
            }
          }
        }
      }));
}

Value relu(const Value& x) {
  Tensor out = x.tensor();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
  return Value(make_node(std::move(out), {x.node()}, [](Node& self) {
    const Tensor& in = self.inputs[0]->value;
    Tensor& dx = self.inputs[0]->grad;
    for (std::size_t i = 0; i < in.size(); ++i) {
      if (in[i] > 0.0) dx[i] += self.grad[i];
    }
  }));
}

Value add(const Value& a, const Value& b) {
  check_same_shape(a.tensor(), b.tensor(), "add");
  Tensor out = a.tensor();
  out.add_(b.tensor());
  return Value(make_node(std::move(out), {a.node(), b.node()}, [](Node& self) {
    self.inputs[0]->grad.add_(self.grad);
    self.inputs[1]->grad.add_(self.grad);
  }));
}

Value sub(const Value& a, const Value& b) {
  check_same_shape(a.tensor(), b.tensor(), "sub");
  Tensor out = a.tensor();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.tensor()[i];
  return Value(make_node(std::move(out), {a.node(), b.node()}, [](Node& self) {
    self.inputs[0]->grad.add_(self.grad);
    Tensor& db = self.inputs[1]->grad;
    for (std::size_t i = 0; i < db.size(); ++i) db[i] -= self.grad[i];
  }));
}

Value mul(const Value& a, const Value& b) {
  check_same_shape(a.tensor(), b.tensor(), "mul");
  Tensor out = a.tensor();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.tensor()[i];
  return Value(make_node(std::move(out), {a.node(), b.node()}, [](Node& self) {
    const Tensor& A = self.inputs[0]->value;
    const Tensor& B = self.inputs[1]->value;
    Tensor& da = self.inputs[0]->grad;
    Tensor& db = self.inputs[1]->grad;
    for (std::size_t i = 0; i < A.size(); ++i) {
      da[i] += self.grad[i] * B[i];
      db[i] += self.grad[i] * A[i];
    }
  }));
}

Value scale(const Value& x, double s) {
  Tensor out = x.tensor();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= s;
  return Value(make_node(std::move(out), {x.node()}, [s](Node& self) {
    Tensor& dx = self.inputs[0]->grad;
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += self.grad[i] * s;
  }));
}

Value add_bias(const Value& x, const Value& b) {
  const Tensor& tx = x.tensor();
  const Tensor& tb = b.tensor();
  if (tb.ndim() != 1) throw DimensionError("add_bias: bias must be 1-d");
  Tensor out = tx;
  if (tx.ndim() == 2) {
    const std::size_t N = tx.dim(0), D = tx.dim(1);
    if (tb.dim(0) != D) throw DimensionError("add_bias: bias length mismatch");
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t d = 0; d < D; ++d) out[n * D + d] += tb[d];
    return Value(make_node(std::move(out), {x.node(), b.node()}, [N, D](Node& self) {
      self.inputs[0]->grad.add_(self.grad);
      Tensor& db = self.inputs[1]->grad;
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t d = 0; d < D; ++d) db[d] += self.grad[n * D + d];
    }));
  }
  if (tx.ndim() == 4) {
    const std::size_t N = tx.dim(0), C = tx.dim(1), HW = tx.dim(2) * tx.dim(3);
    if (tb.dim(0) != C) throw DimensionError("add_bias: bias length mismatch");
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < HW; ++i) out[(n * C + c) * HW + i] += tb[c];
    return Value(make_node(std::move(out), {x.node(), b.node()}, [N, C, HW](Node& self) {
      self.inputs[0]->grad.add_(self.grad);
      Tensor& db = self.inputs[1]->grad;
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t i = 0; i < HW; ++i) db[c] += self.grad[(n * C + c) * HW + i];
    }));
  }
  throw DimensionError("add_bias: input must be 2-d or 4-d");
}

Value channel_affine(const Value& x, const Value& s, const Value& b) {
  const Tensor& tx = x.tensor();
  const Tensor& ts = s.tensor();
  const Tensor& tb = b.tensor();
  if (ts.ndim() != 1 || tb.ndim() != 1 || ts.dim(0) != tb.dim(0)) {
    throw DimensionError("channel_affine: scale/bias must be 1-d of equal length");
  }
  std::size_t N, C, HW;
  if (tx.ndim() == 4) {
    N = tx.dim(0), C = tx.dim(1), HW = tx.dim(2) * tx.dim(3);
  } else if (tx.ndim() == 2) {
    N = tx.dim(0), C = tx.dim(1), HW = 1;
  } else {
    throw DimensionError("channel_affine: input must be 2-d or 4-d");
  }
  if (ts.dim(0) != C) throw DimensionError("channel_affine: channel count mismatch");
  Tensor out = tx;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < HW; ++i) {
        double& v = out[(n * C + c) * HW + i];
        v = v * ts[c] + tb[c];
      }
  return Value(make_node(std::move(out), {x.node(), s.node(), b.node()}, [N, C, HW](Node& self) {
    const Tensor& X = self.inputs[0]->value;
    const Tensor& S = self.inputs[1]->value;
    Tensor& dx = self.inputs[0]->grad;
    Tensor& ds = self.inputs[1]->grad;
    Tensor& db = self.inputs[2]->grad;
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < HW; ++i) {
          const std::size_t k = (n * C + c) * HW + i;
          dx[k] += self.grad[k] * S[c];
          ds[c] += self.grad[k] * X[k];
          db[c] += self.grad[k];
        }
  }));
}

Value global_avg_pool(const Value& x) {
  const Tensor& tx = x.tensor();
  if (tx.ndim() != 4) throw DimensionError("global_avg_pool: expects NCHW input");
  const std::size_t N = tx.dim(0), C = tx.dim(1), HW = tx.dim(2) * tx.dim(3);
  Tensor out({N, C});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      double acc = 0.0;
      for (std::size_t i = 0; i < HW; ++i) acc += tx[(n * C + c) * HW + i];
      out[n * C + c] = acc / static_cast<double>(HW);
    }
  return Value(make_node(std::move(out), {x.node()}, [N, C, HW](Node& self) {
    Tensor& dx = self.inputs[0]->grad;
    const double inv = 1.0 / static_cast<double>(HW);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c) {
        const double g = self.grad[n * C + c] * inv;
        for (std::size_t i = 0; i < HW; ++i) dx[(n * C + c) * HW + i] += g;
      }
  }));
}

Value log_softmax(const Value& z) {
  const Tensor& tz = z.tensor();
  if (tz.ndim() != 2) throw DimensionError("log_softmax: expects a 2-d batch of logits");
  const std::size_t N = tz.dim(0), M = tz.dim(1);
  Tensor out({N, M});
  for (std::size_t n = 0; n < N; ++n) {
    double mx = tz[n * M];
    for (std::size_t j = 1; j < M; ++j) mx = std::max(mx, tz[n * M + j]);
    double lse = 0.0;
    for (std::size_t j = 0; j < M; ++j) lse += std::exp(tz[n * M + j] - mx);
    lse = std::log(lse) + mx;
    for (std::size_t j = 0; j < M; ++j) out[n * M + j] = tz[n * M + j] - lse;
  }
  return Value(make_node(std::move(out), {z.node()}, [N, M](Node& self) {
    Tensor& dz = self.inputs[0]->grad;
    for (std::size_t n = 0; n < N; ++n) {
      double gsum = 0.0;
      for (std::size_t j = 0; j < M; ++j) gsum += self.grad[n * M + j];
      for (std::size_t j = 0; j < M; ++j) {
        dz[n * M + j] += self.grad[n * M + j] - std::exp(self.value[n * M + j]) * gsum;
      }
    }
  }));
}

Value exp(const Value& x) {
  Tensor out = x.tensor();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(out[i]);
  return Value(make_node(std::move(out), {x.node()}, [](Node& self) {
    Tensor& dx = self.inputs[0]->grad;
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += self.grad[i] * self.value[i];
  }));
}

Value sum(const Value& x) {
  double acc = 0.0;
  for (std::size_t i = 0; i < x.tensor().size(); ++i) acc += x.tensor()[i];
  return Value(make_node(Tensor::scalar(acc), {x.node()}, [](Node& self) {
    Tensor& dx = self.inputs[0]->grad;
    const double g = self.grad[0];
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g;
  }));
}

Value nll(const Value& log_probs, const std::vector<int>& labels) {
  const Tensor& lp = log_probs.tensor();
  if (lp.ndim() != 2) throw DimensionError("nll: expects 2-d log-probabilities");
  const std::size_t N = lp.dim(0), M = lp.dim(1);
  if (labels.size() != N) throw DimensionError("nll: label count does not match batch size");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= M) {
      throw ContractError("nll: label " + std::to_string(y) + " out of range [0," +
                          std::to_string(M) + ")");
    }
  }
  double acc = 0.0;
  for (std::size_t n = 0; n < N; ++n) acc -= lp[n * M + labels[n]];
  acc /= static_cast<double>(N);
  return Value(make_node(Tensor::scalar(acc), {log_probs.node()}, [N, M, labels](Node& self) {
    Tensor& dlp = self.inputs[0]->grad;
    const double g = self.grad[0] / static_cast<double>(N);
    for (std::size_t n = 0; n < N; ++n) dlp[n * M + labels[n]] -= g;
  }));
}

void backward(const Value& root) {
  if (!root.defined()) throw ContractError("backward: undefined root");
  if (root.tensor().size() != 1) {
    throw ContractError("backward: root must be scalar, got shape " +
                        shape_to_string(root.shape()));
  }
  // Iterative DFS postorder; each node enters the order exactly once.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next].get();
      ++next;
      if (seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : order) n->grad = Tensor::zeros_like(n->value);
  root.node()->grad.fill(1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->requires_grad && n->backprop) n->backprop(*n);
  }
  for (Node* n : order) {
    if (n->param) n->param->grad.add_(n->grad);
  }
}

}  // namespace ag
}  // namespace qkd
