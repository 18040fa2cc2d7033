#include "riiu/grad.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "riiu/error.hpp"

namespace riiu::ad {

NodeId Tape::push(std::vector<double> value, std::function<void(Tape&, NodeId)> backward) {
  Node n;
  n.grad.assign(value.size(), 0.0);
  n.value = std::move(value);
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

double Tape::scalar(NodeId id) const {
  if (nodes_[id].value.size() != 1) throw ShapeError("Tape::scalar: node is not scalar");
  return nodes_[id].value[0];
}

NodeId Tape::constant(std::span<const double> v) {
  return push(std::vector<double>(v.begin(), v.end()), nullptr);
}

NodeId Tape::scalar_constant(double v) { return push({v}, nullptr); }

NodeId Tape::matvec(const Matrix& w, Matrix* dw, NodeId x) {
  const auto& xv = nodes_[x].value;
  if (w.cols() != xv.size()) throw ShapeError("Tape::matvec: w.cols != x.dim");
  if (dw && (dw->rows() != w.rows() || dw->cols() != w.cols()))
    throw ShapeError("Tape::matvec: gradient slot shape");
  std::vector<double> out(w.rows());
  for (std::size_t i = 0; i < w.rows(); ++i) {
    auto row = w.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) s += row[j] * xv[j];
    out[i] = s;
  }
  const Matrix* wp = &w;
  return push(std::move(out), [wp, dw, x](Tape& t, NodeId self) {
    const auto& g = t.node(self).grad;
    auto& gx = t.node(x).grad;
    const auto& xv = t.node(x).value;
    for (std::size_t i = 0; i < wp->rows(); ++i) {
      const double gi = g[i];
      if (gi == 0.0) continue;
      auto row = wp->row(i);
      for (std::size_t j = 0; j < row.size(); ++j) gx[j] += row[j] * gi;
      if (dw) {
        auto drow = dw->row(i);
        for (std::size_t j = 0; j < drow.size(); ++j) drow[j] += gi * xv[j];
      }
    }
  });
}

NodeId Tape::add_bias(NodeId x, const Vector& b, Vector* db) {
  auto out = nodes_[x].value;
  if (out.size() != b.dim()) throw ShapeError("Tape::add_bias: dim mismatch");
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return push(std::move(out), [x, db](Tape& t, NodeId self) {
    const auto& g = t.node(self).grad;
    auto& gx = t.node(x).grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      gx[i] += g[i];
      if (db) (*db)[i] += g[i];
    }
  });
}

NodeId Tape::add(NodeId a, NodeId b) {
  auto out = nodes_[a].value;
  const auto& bv = nodes_[b].value;
  if (out.size() != bv.size()) throw ShapeError("Tape::add: dim mismatch");
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return push(std::move(out), [a, b](Tape& t, NodeId self) {
    const auto& g = t.node(self).grad;
    auto& ga = t.node(a).grad;
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    auto& gb = t.node(b).grad;
    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
  });
}

NodeId Tape::mul(NodeId a, NodeId b) {
  auto out = nodes_[a].value;
  const auto& bv = nodes_[b].value;
  if (out.size() != bv.size()) throw ShapeError("Tape::mul: dim mismatch");
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return push(std::move(out), [a, b](Tape& t, NodeId self) {
    const auto& g = t.node(self).grad;
    const auto& av = t.node(a).value;
    const auto& bv = t.node(b).value;
    auto& ga = t.node(a).grad;
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    auto& gb = t.node(b).grad;
    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
  });
}

NodeId Tape::scale(NodeId a, double s) {
  auto out = nodes_[a].value;
  for (double& v : out) v *= s;
  return push(std::move(out), [a, s](Tape& t, NodeId self) {
    const auto& g = t.node(self).grad;
    auto& ga = t.node(a).grad;
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

NodeId Tape::one_minus(NodeId a) {
  auto out = nodes_[a].value;
  for (double& v : out) v = 1.0 - v;
  return push(std::move(out), [a](Tape& t, NodeId self) {
    const auto& g = t.node(self).grad;
    auto& ga = t.node(a).grad;
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] -= g[i];
  });
}

NodeId Tape::mask(NodeId a, std::span<const double> m) {
  auto out = nodes_[a].value;
  if (out.size() != m.size()) throw ShapeError("Tape::mask: dim mismatch");
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= m[i];
  return push(std::move(out), [a, mv = std::vector<double>(m.begin(), m.end())](Tape& t,
                                                                               NodeId self) {
    const auto& g = t.node(self).grad;
    auto& ga = t.node(a).grad;
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += mv[i] * g[i];
  });
}

NodeId Tape::gelu(NodeId a) {
  auto out = nodes_[a].value;
  for (double& v : out) v = riiu::gelu(v);
  return push(std::move(out), [a](Tape& t, NodeId self) {
    const auto& g = t.node(self).grad;
    const auto& av = t.node(a).value;
    auto& ga = t.node(a).grad;
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * riiu::gelu_grad(av[i]);
  });
}

NodeId Tape::tanh(NodeId a) {
  auto out = nodes_[a].value;
  for (double& v : out) v = std::tanh(v);
  return push(std::move(out), [a](Tape& t, NodeId self) {
    const auto& g = t.node(self).grad;
    const auto& y = t.node(self).value;
    auto& ga = t.node(a).grad;
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

NodeId Tape::sigmoid(NodeId a) {
  auto out = nodes_[a].value;
  for (double& v : out) v = riiu::sigmoid(v);
  return push(std::move(out), [a](Tape& t, NodeId self) {
    const auto& g = t.node(self).grad;
    const auto& y = t.node(self).value;
    auto& ga = t.node(a).grad;
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

NodeId Tape::concat(std::span<const NodeId> parts) {
  std::vector<double> out;
  for (NodeId p : parts) out.insert(out.end(), nodes_[p].value.begin(), nodes_[p].value.end());
  return push(std::move(out),
              [ids = std::vector<NodeId>(parts.begin(), parts.end())](Tape& t, NodeId self) {
                const auto& g = t.node(self).grad;
                std::size_t offset = 0;
                for (NodeId p : ids) {
                  auto& gp = t.node(p).grad;
                  for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offset + i];
                  offset += gp.size();
                }
              });
}

NodeId Tape::slice(NodeId a, std::size_t offset, std::size_t length) {
  const auto& av = nodes_[a].value;
  if (offset + length > av.size()) throw ShapeError("Tape::slice: out of range");
  std::vector<double> out(av.begin() + static_cast<std::ptrdiff_t>(offset),
                          av.begin() + static_cast<std::ptrdiff_t>(offset + length));
  return push(std::move(out), [a, offset](Tape& t, NodeId self) {
    const auto& g = t.node(self).grad;
    auto& ga = t.node(a).grad;
    for (std::size_t i = 0; i < g.size(); ++i) ga[offset + i] += g[i];
  });
}

NodeId Tape::mean(std::span<const NodeId> parts) {
  if (parts.empty()) throw ShapeError("Tape::mean: no inputs");
  const std::size_t d = nodes_[parts.front()].value.size();
  std::vector<double> out(d, 0.0);
  for (NodeId p : parts) {
    if (nodes_[p].value.size() != d) throw ShapeError("Tape::mean: unequal widths");
    for (std::size_t i = 0; i < d; ++i) out[i] += nodes_[p].value[i];
  }
  const double inv = 1.0 / static_cast<double>(parts.size());
  for (double& v : out) v *= inv;
  return push(std::move(out), [ids = std::vector<NodeId>(parts.begin(), parts.end()), inv](
                                  Tape& t, NodeId self) {
    const auto& g = t.node(self).grad;
    for (NodeId p : ids) {
      auto& gp = t.node(p).grad;
      for (std::size_t i = 0; i < g.size(); ++i) gp[i] += inv * g[i];
    }
  });
}

NodeId Tape::log_softmax_at(NodeId logits, std::size_t index) {
  const auto& z = nodes_[logits].value;
  if (index >= z.size()) throw ShapeError("Tape::log_softmax_at: index out of range");
  const double zmax = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - zmax);
  const double lse = zmax + std::log(sum);
  return push({z[index] - lse}, [logits, index, lse](Tape& t, NodeId self) {
    const double g = t.node(self).grad[0];
    const auto& z = t.node(logits).value;
    auto& gz = t.node(logits).grad;
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double p = std::exp(z[i] - lse);
      gz[i] += g * ((i == index ? 1.0 : 0.0) - p);
    }
  });
}

NodeId Tape::linearized_scalar(NodeId input, double value, Vector gradient) {
  if (gradient.dim() != nodes_[input].value.size())
    throw ShapeError("Tape::linearized_scalar: gradient width");
  return push({value}, [input, grad = std::move(gradient)](Tape& t, NodeId self) {
    const double g = t.node(self).grad[0];
    auto& gi = t.node(input).grad;
    for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += g * grad[i];
  });
}

NodeId Tape::weighted_sum(std::span<const NodeId> scalars, std::span<const double> weights) {
  if (scalars.size() != weights.size()) throw ShapeError("Tape::weighted_sum: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    if (nodes_[scalars[i]].value.size() != 1)
      throw ShapeError("Tape::weighted_sum: non-scalar term");
    s += weights[i] * nodes_[scalars[i]].value[0];
  }
  return push({s}, [ids = std::vector<NodeId>(scalars.begin(), scalars.end()),
                    w = std::vector<double>(weights.begin(), weights.end())](Tape& t,
                                                                            NodeId self) {
    const double g = t.node(self).grad[0];
    for (std::size_t i = 0; i < ids.size(); ++i) t.node(ids[i]).grad[0] += g * w[i];
  });
}

void Tape::backward(NodeId loss) {
  if (loss >= nodes_.size()) throw std::out_of_range("Tape::backward: unknown node");
  if (nodes_[loss].value.size() != 1) throw ShapeError("Tape::backward: loss must be scalar");
  for (auto& n : nodes_) std::fill(n.grad.begin(), n.grad.end(), 0.0);
  nodes_[loss].grad[0] = 1.0;
  for (std::size_t i = loss + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward) continue;
    if (std::all_of(n.grad.begin(), n.grad.end(), [](double g) { return g == 0.0; })) continue;
    n.backward(*this, static_cast<NodeId>(i));
  }
}

// Optimiser ------------------------------------------------------------------

double global_norm(std::span<const TensorView> grads) {
  double s = 0.0;
  for (const auto& g : grads)
    for (double v : g.data) s += v * v;
  return std::sqrt(s);
}

double clip_global_norm(std::span<const TensorView> grads, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clip_global_norm: max_norm must be > 0");
  const double norm = global_norm(grads);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (const auto& g : grads)
      for (double& v : g.data) v *= factor;
  }
  return norm;
}

AdamState::AdamState(std::span<const TensorView> params, AdamConfig cfg) : cfg_(cfg) {
  for (const auto& p : params) {
    first_.emplace_back(p.data.size(), 0.0);
    second_.emplace_back(p.data.size(), 0.0);
  }
}

void AdamState::update(std::span<const TensorView> params, std::span<const TensorView> grads,
                       double lr) {
  if (!(lr > 0.0)) throw std::invalid_argument("Adam: lr must be positive");
  if (params.size() != first_.size() || grads.size() != first_.size())
    throw ShapeError("Adam: tensor count mismatch");
  for (std::size_t k = 0; k < params.size(); ++k)
    if (params[k].data.size() != first_[k].size() || grads[k].data.size() != first_[k].size())
      throw ShapeError("Adam: tensor shape mismatch for " + params[k].name);

  ++step_;
  const double t = static_cast<double>(step_);
  const double correction1 = 1.0 - std::pow(cfg_.beta1, t);
  const double correction2 = 1.0 - std::pow(cfg_.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k].data;
    auto g = grads[k].data;
    auto& m = first_[k];
    auto& v = second_[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = m[i] / correction1;
      const double vhat = v[i] / correction2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.epsilon);
    }
  }
}

}  // namespace riiu::ad
