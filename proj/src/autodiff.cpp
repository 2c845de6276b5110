#include "xmodal/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "xmodal/error.hpp"

namespace xmodal {

namespace {

#ifndef NDEBUG
void debug_check_finite(const Tensor& t, const char* where) {
  if (!t.all_finite()) fail(ErrorKind::domain, std::string("non-finite values produced by ") + where);
}
#else
void debug_check_finite(const Tensor&, const char*) {}
#endif

Tape& common_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) fail(ErrorKind::validation, "vars recorded on different tapes");
  return a.tape();
}

void add_into(Tensor& dst, const Tensor& src) {
  double* d = dst.data();
  const double* s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    fail(ErrorKind::dimension, std::string(what) + " shape mismatch: " + shape_string(a.shape()) +
                                   " vs " + shape_string(b.shape()));
  }
}

void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) {
    fail(ErrorKind::dimension,
         std::string(what) + " expects a matrix, got " + shape_string(t.shape()));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Parameter / ParameterSet

Parameter::Parameter(std::string name, Tensor value)
    : name_(std::move(name)), value_(std::move(value)), grad_(value_.shape()) {}

void Parameter::assign(const Tensor& value) {
  if (value.shape() != value_.shape()) {
    fail(ErrorKind::dimension, "parameter " + name_ + " expects shape " +
                                   shape_string(value_.shape()) + ", got " +
                                   shape_string(value.shape()));
  }
  value_ = value;
}

void Parameter::zero_grad() { std::fill(grad_.values().begin(), grad_.values().end(), 0.0); }

Parameter& ParameterSet::add(const std::string& name, Tensor value) {
  if (index_.contains(name)) fail(ErrorKind::validation, "duplicate parameter name " + name);
  index_.emplace(name, params_.size());
  params_.push_back(std::make_unique<Parameter>(name, std::move(value)));
  return *params_.back();
}

Parameter* ParameterSet::find(const std::string& name) noexcept {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : params_[it->second].get();
}

const Parameter* ParameterSet::find(const std::string& name) const noexcept {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : params_[it->second].get();
}

Parameter& ParameterSet::at(const std::string& name) {
  if (auto* p = find(name)) return *p;
  fail(ErrorKind::index, "no parameter named " + name);
}

const Parameter& ParameterSet::at(const std::string& name) const {
  if (const auto* p = find(name)) return *p;
  fail(ErrorKind::index, "no parameter named " + name);
}

std::size_t ParameterSet::total_size() const noexcept {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value().size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

// ---------------------------------------------------------------------------
// Tape

const Tensor& Var::value() const { return tape_->value(id_); }
const Tensor& Var::grad() const { return tape_->grad(id_); }

Var Tape::constant(Tensor value) {
  debug_check_finite(value, "constant");
  nodes_.push_back(Node{std::move(value), {}, {}, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
  Node node{p.value(), {}, {}, record_};
  if (record_) {
    node.backward = [param = &p](Tape&, const Tensor& g) { add_into(param->grad(), g); };
  }
  nodes_.push_back(std::move(node));
  param_nodes_.emplace(&p, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Tape::push(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
  return push(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
              std::move(backward));
}

Var Tape::push(Tensor value, std::span<const Var> inputs, Backward backward) {
  debug_check_finite(value, "forward op");
  bool needs = false;
  if (record_) {
    for (const Var& v : inputs) needs = needs || nodes_[v.id()].requires_grad;
  }
  Node node{std::move(value), {}, {}, needs};
  if (needs) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(Var v, const Tensor& g) {
  Node& n = nodes_[v.id()];
  if (!n.requires_grad) return;
  if (n.grad.empty()) {
    n.grad = g;
  } else {
    add_into(n.grad, g);
  }
}

void Tape::accumulate(Var v, Tensor&& g) {
  Node& n = nodes_[v.id()];
  if (!n.requires_grad) return;
  if (n.grad.empty()) {
    n.grad = std::move(g);
  } else {
    add_into(n.grad, g);
  }
}

void Tape::backward(Var root) {
  if (&root.tape() != this) fail(ErrorKind::validation, "backward root from another tape");
  if (!record_) fail(ErrorKind::validation, "backward on a non-recording tape");
  Node& r = nodes_[root.id()];
  if (r.value.size() != 1) {
    fail(ErrorKind::dimension, "backward root must be a scalar, got " + shape_string(r.value.shape()));
  }
  if (!r.requires_grad) return;
  r.grad = Tensor(r.value.shape(), 1.0);
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
    debug_check_finite(n.grad, "backward op");
    n.backward(*this, n.grad);
  }
}

// ---------------------------------------------------------------------------
// Ops

Var matmul(Var a, Var b) {
  Tape& t = common_tape(a, b);
  return t.push(ops::matmul(a.value(), b.value()), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) t.accumulate(a, ops::matmul_nt(g, b.value()));
    if (t.requires_grad(b)) t.accumulate(b, ops::matmul_tn(a.value(), g));
  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = common_tape(a, b);
  return t.push(ops::matmul_nt(a.value(), b.value()), {a, b}, [a, b](Tape& t, const Tensor& g) {
    // out = a bᵀ: da = g b, db = gᵀ a
    if (t.requires_grad(a)) t.accumulate(a, ops::matmul(g, b.value()));
    if (t.requires_grad(b)) t.accumulate(b, ops::matmul_tn(g, a.value()));
  });
}

Var transpose(Var a) {
  return a.tape().push(ops::transpose(a.value()), {a}, [a](Tape& t, const Tensor& g) {
    t.accumulate(a, ops::transpose(g));
  });
}

Var add(Var a, Var b) {
  Tape& t = common_tape(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  add_into(out, b.value());
  return t.push(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  Tape& t = common_tape(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return t.push(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    if (t.requires_grad(b)) {
      Tensor neg = g;
      for (auto& v : neg.values()) v = -v;
      t.accumulate(b, std::move(neg));
    }
  });
}

Var scale(Var a, double s) {
  Tensor out = a.value();
  for (auto& v : out.values()) v *= s;
  return a.tape().push(std::move(out), {a}, [a, s](Tape& t, const Tensor& g) {
    Tensor d = g;
    for (auto& v : d.values()) v *= s;
    t.accumulate(a, std::move(d));
  });
}

Var add_bias(Var x, Var bias) {
  Tape& t = common_tape(x, bias);
  require_matrix(x.value(), "add_bias");
  const std::size_t n = x.value().rows(), d = x.value().cols();
  if (bias.value().size() != d) {
    fail(ErrorKind::dimension, "bias " + shape_string(bias.value().shape()) +
                                   " does not match columns of " + shape_string(x.value().shape()));
  }
  Tensor out = x.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) += bias.value()[j];
  return t.push(std::move(out), {x, bias}, [x, bias, n, d](Tape& t, const Tensor& g) {
    t.accumulate(x, g);
    if (t.requires_grad(bias)) {
      Tensor db(bias.value().shape());
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) db[j] += g.at(i, j);
      t.accumulate(bias, std::move(db));
    }
  });
}

Var gelu(Var x) {
  Tensor out = x.value();
  for (auto& v : out.values()) v = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
  return x.tape().push(std::move(out), {x}, [x](Tape& t, const Tensor& g) {
    Tensor d = g;
    const Tensor& xv = x.value();
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double z = xv[i];
      const double cdf = 0.5 * (1.0 + std::erf(z * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * z * z);
      d[i] *= cdf + z * pdf;
    }
    t.accumulate(x, std::move(d));
  });
}

Var reshape(Var x, Shape shape) {
  Shape original = x.value().shape();
  return x.tape().push(x.value().reshaped(std::move(shape)), {x},
                       [x, original](Tape& t, const Tensor& g) {
                         t.accumulate(x, g.reshaped(original));
                       });
}

Var masked_softmax(Var scores, std::span<const std::uint8_t> allowed) {
  const Tensor& s = scores.value();
  require_matrix(s, "masked_softmax");
  const std::size_t n = s.rows(), m = s.cols();
  std::vector<std::uint8_t> mask(allowed.begin(), allowed.end());
  if (!mask.empty() && mask.size() != n * m) {
    fail(ErrorKind::dimension, "mask of " + std::to_string(mask.size()) +
                                   " entries for scores " + shape_string(s.shape()));
  }
  Tensor out(s.shape());
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t visible = m;
    if (!mask.empty()) {
      visible = static_cast<std::size_t>(
          std::count_if(mask.begin() + i * m, mask.begin() + (i + 1) * m, [](auto v) { return v != 0; }));
    }
    if (visible == 0) {
      fail(ErrorKind::degenerate_mask, "attention row " + std::to_string(i) + " has every key masked");
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j) {
      const double v = s.at(i, j) + ((mask.empty() || mask[i * m + j]) ? 0.0 : -1e9);
      out.at(i, j) = v;
      mx = std::max(mx, v);
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double e = std::exp(out.at(i, j) - mx);
      out.at(i, j) = e;
      sum += e;
    }
    for (std::size_t j = 0; j < m; ++j) {
      out.at(i, j) = (mask.empty() || mask[i * m + j]) ? out.at(i, j) / sum : 0.0;
    }
  }
  auto y = std::make_shared<Tensor>(out);
  return scores.tape().push(std::move(out), {scores}, [scores, y](Tape& t, const Tensor& g) {
    const std::size_t n = y->rows(), m = y->cols();
    Tensor d({n, m});
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += g.at(i, j) * y->at(i, j);
      for (std::size_t j = 0; j < m; ++j) d.at(i, j) = y->at(i, j) * (g.at(i, j) - dot);
    }
    t.accumulate(scores, std::move(d));
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Tape& t = common_tape(x, gain);
  common_tape(x, bias);
  const Tensor& xv = x.value();
  const std::size_t d = xv.shape().back();
  Tensor out = ops::layer_norm(xv, gain.value(), bias.value(), eps);
  const std::size_t rows = xv.size() / d;
  // Cache normalized activations and inverse std for the backward pass.
  auto xhat = std::make_shared<Tensor>(xv.shape());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    for (std::size_t j = 0; j < d; ++j) (*xhat)[r * d + j] = (xr[j] - mean) * inv;
  }
  return t.push(std::move(out), {x, gain, bias},
                [x, gain, bias, xhat, inv_std, d, rows](Tape& t, const Tensor& g) {
                  const Tensor& gv = gain.value();
                  if (t.requires_grad(gain) || t.requires_grad(bias)) {
                    Tensor dg(gain.value().shape()), db(bias.value().shape());
                    for (std::size_t r = 0; r < rows; ++r) {
                      for (std::size_t j = 0; j < d; ++j) {
                        dg[j] += g[r * d + j] * (*xhat)[r * d + j];
                        db[j] += g[r * d + j];
                      }
                    }
                    t.accumulate(gain, std::move(dg));
                    t.accumulate(bias, std::move(db));
                  }
                  if (t.requires_grad(x)) {
                    Tensor dx(x.value().shape());
                    const double inv_d = 1.0 / static_cast<double>(d);
                    for (std::size_t r = 0; r < rows; ++r) {
                      double sum_dy = 0.0, sum_dy_xhat = 0.0;
                      for (std::size_t j = 0; j < d; ++j) {
                        const double dy = g[r * d + j] * gv[j];
                        sum_dy += dy;
                        sum_dy_xhat += dy * (*xhat)[r * d + j];
                      }
                      for (std::size_t j = 0; j < d; ++j) {
                        const double dy = g[r * d + j] * gv[j];
                        dx[r * d + j] = (*inv_std)[r] *
                                        (dy - inv_d * sum_dy - (*xhat)[r * d + j] * inv_d * sum_dy_xhat);
                      }
                    }
                    t.accumulate(x, std::move(dx));
                  }
                });
}

Var cross_entropy(Var logits, std::span<const int> targets, std::optional<int> ignore_index) {
  const Tensor& z = logits.value();
  require_matrix(z, "cross_entropy");
  const std::size_t n = z.rows(), v = z.cols();
  if (targets.size() != n) {
    fail(ErrorKind::dimension, "cross_entropy got " + std::to_string(targets.size()) +
                                   " targets for logits " + shape_string(z.shape()));
  }
  std::vector<int> tgt(targets.begin(), targets.end());
  auto probs = std::make_shared<Tensor>(z.shape());
  std::size_t count = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (ignore_index && tgt[i] == *ignore_index) continue;
    if (tgt[i] < 0 || static_cast<std::size_t>(tgt[i]) >= v) {
      fail(ErrorKind::index, "target " + std::to_string(tgt[i]) + " outside [0, " +
                                 std::to_string(v) + ")");
    }
    double mx = z.at(i, 0);
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, z.at(i, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < v; ++j) sum += std::exp(z.at(i, j) - mx);
    const double lse = mx + std::log(sum);
    total += lse - z.at(i, static_cast<std::size_t>(tgt[i]));
    for (std::size_t j = 0; j < v; ++j) probs->at(i, j) = std::exp(z.at(i, j) - lse);
    ++count;
  }
  if (count == 0) fail(ErrorKind::empty_sequence, "cross_entropy with no scored positions");
  const double inv = 1.0 / static_cast<double>(count);
  return logits.tape().push(
      Tensor::scalar(total / static_cast<double>(count)), {logits},
      [logits, tgt = std::move(tgt), probs, ignore_index, inv](Tape& t, const Tensor& g) {
        const std::size_t n = probs->rows(), v = probs->cols();
        Tensor d({n, v});
        const double s = g[0] * inv;
        for (std::size_t i = 0; i < n; ++i) {
          if (ignore_index && tgt[i] == *ignore_index) continue;
          for (std::size_t j = 0; j < v; ++j) d.at(i, j) = probs->at(i, j) * s;
          d.at(i, static_cast<std::size_t>(tgt[i])) -= s;
        }
        t.accumulate(logits, std::move(d));
      });
}

Var binary_cross_entropy_with_weights(Var logits, const Tensor& targets, const Tensor& pos_weight) {
  const Tensor& z = logits.value();
  require_matrix(z, "binary_cross_entropy_with_weights");
  require_same_shape(z, targets, "binary_cross_entropy_with_weights");
  const std::size_t n = z.rows(), c = z.cols();
  if (pos_weight.size() != c) {
    fail(ErrorKind::dimension, "pos_weight " + shape_string(pos_weight.shape()) +
                                   " does not match " + std::to_string(c) + " classes");
  }
  for (std::size_t j = 0; j < c; ++j) {
    if (!(pos_weight[j] > 0.0)) fail(ErrorKind::validation, "pos_weight must be strictly positive");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      const double zi = z.at(i, j), ti = targets.at(i, j);
      total += pos_weight[j] * ti * ops::softplus(-zi) + (1.0 - ti) * ops::softplus(zi);
    }
  }
  const double inv = 1.0 / static_cast<double>(n * c);
  return logits.tape().push(
      Tensor::scalar(total / static_cast<double>(n * c)), {logits},
      [logits, targets, pos_weight, inv](Tape& t, const Tensor& g) {
        const Tensor& z = logits.value();
        Tensor d(z.shape());
        const std::size_t n = z.rows(), c = z.cols();
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < c; ++j) {
            const double zi = z.at(i, j), ti = targets.at(i, j);
            const double sig = 1.0 / (1.0 + std::exp(-zi));
            // d/dz softplus(z) = σ(z); d/dz softplus(−z) = −σ(−z) = σ(z) − 1
            d.at(i, j) = g[0] * inv * (pos_weight[j] * ti * (sig - 1.0) + (1.0 - ti) * sig);
          }
        }
        t.accumulate(logits, std::move(d));
      });
}

Var mean_pool(Var x, std::size_t valid_length) {
  const Tensor& xv = x.value();
  require_matrix(xv, "mean_pool");
  const std::size_t n = xv.rows(), d = xv.cols();
  if (valid_length == 0) fail(ErrorKind::empty_sequence, "mean_pool over an empty sequence");
  if (valid_length > n) {
    fail(ErrorKind::index, "mean_pool valid length " + std::to_string(valid_length) +
                               " exceeds " + std::to_string(n) + " rows");
  }
  Tensor out({d});
  for (std::size_t i = 0; i < valid_length; ++i)
    for (std::size_t j = 0; j < d; ++j) out[j] += xv.at(i, j);
  const double inv = 1.0 / static_cast<double>(valid_length);
  for (auto& v : out.values()) v *= inv;
  return x.tape().push(std::move(out), {x}, [x, valid_length, inv](Tape& t, const Tensor& g) {
    Tensor dx(x.value().shape());
    const std::size_t d = dx.cols();
    for (std::size_t i = 0; i < valid_length; ++i)
      for (std::size_t j = 0; j < d; ++j) dx.at(i, j) = g[j] * inv;
    t.accumulate(x, std::move(dx));
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) fail(ErrorKind::empty_sequence, "concat_rows of nothing");
  Tape& t = parts.front().tape();
  const std::size_t d = parts.front().value().cols();
  std::size_t n = 0;
  for (const Var& p : parts) {
    common_tape(parts.front(), p);
    require_matrix(p.value(), "concat_rows");
    if (p.value().cols() != d) fail(ErrorKind::dimension, "concat_rows column mismatch");
    n += p.value().rows();
  }
  Tensor out({n, d});
  std::size_t offset = 0;
  for (const Var& p : parts) {
    std::copy(p.value().data(), p.value().data() + p.value().size(), out.data() + offset);
    offset += p.value().size();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return t.push(std::move(out), parts, [inputs](Tape& t, const Tensor& g) {
    std::size_t offset = 0;
    for (const Var& p : inputs) {
      const std::size_t sz = p.value().size();
      if (t.requires_grad(p)) {
        Tensor d(p.value().shape(), std::vector<double>(g.data() + offset, g.data() + offset + sz));
        t.accumulate(p, std::move(d));
      }
      offset += sz;
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) fail(ErrorKind::empty_sequence, "concat_cols of nothing");
  Tape& t = parts.front().tape();
  const std::size_t n = parts.front().value().rows();
  std::size_t d = 0;
  for (const Var& p : parts) {
    common_tape(parts.front(), p);
    require_matrix(p.value(), "concat_cols");
    if (p.value().rows() != n) fail(ErrorKind::dimension, "concat_cols row mismatch");
    d += p.value().cols();
  }
  Tensor out({n, d});
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < v.cols(); ++j) out.at(i, offset + j) = v.at(i, j);
    offset += v.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return t.push(std::move(out), parts, [inputs](Tape& t, const Tensor& g) {
    std::size_t offset = 0;
    for (const Var& p : inputs) {
      const std::size_t c = p.value().cols(), n = p.value().rows();
      if (t.requires_grad(p)) {
        Tensor d({n, c});
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < c; ++j) d.at(i, j) = g.at(i, offset + j);
        t.accumulate(p, std::move(d));
      }
      offset += c;
    }
  });
}

Var slice_cols(Var x, std::size_t begin, std::size_t count) {
  const Tensor& v = x.value();
  require_matrix(v, "slice_cols");
  if (count == 0 || begin + count > v.cols()) {
    fail(ErrorKind::index, "slice_cols [" + std::to_string(begin) + ", " +
                               std::to_string(begin + count) + ") of " + shape_string(v.shape()));
  }
  const std::size_t n = v.rows();
  Tensor out({n, count});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < count; ++j) out.at(i, j) = v.at(i, begin + j);
  return x.tape().push(std::move(out), {x}, [x, begin, count](Tape& t, const Tensor& g) {
    Tensor d(x.value().shape());
    for (std::size_t i = 0; i < d.rows(); ++i)
      for (std::size_t j = 0; j < count; ++j) d.at(i, begin + j) = g.at(i, j);
    t.accumulate(x, std::move(d));
  });
}

Var gather_rows(Var table, std::span<const int> ids) {
  const Tensor& tv = table.value();
  require_matrix(tv, "gather_rows");
  if (ids.empty()) fail(ErrorKind::empty_sequence, "gather_rows with no ids");
  const std::size_t d = tv.cols();
  Tensor out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= tv.rows()) {
      fail(ErrorKind::index, "row id " + std::to_string(ids[i]) + " outside table of " +
                                 std::to_string(tv.rows()) + " rows");
    }
    std::copy(tv.data() + ids[i] * d, tv.data() + (ids[i] + 1) * d, out.data() + i * d);
  }
  std::vector<int> idv(ids.begin(), ids.end());
  return table.tape().push(std::move(out), {table}, [table, idv, d](Tape& t, const Tensor& g) {
    Tensor dt(table.value().shape());
    for (std::size_t i = 0; i < idv.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) dt[static_cast<std::size_t>(idv[i]) * d + j] += g.at(i, j);
    t.accumulate(table, std::move(dt));
  });
}

}  // namespace xmodal
