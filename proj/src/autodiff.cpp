#include "mmcdfsl/autodiff.hpp"

#include <cmath>
#include <memory>
#include <numbers>
#include <string>

#include "mmcdfsl/errors.hpp"

namespace mmcdfsl::ad {

const Mat& Var::value() const {
  if (!tape_) throw ContractError("use of an unbound Var");
  return tape_->value_of(*this);
}

double Var::scalar() const {
  const Mat& v = value();
  if (v.rows() != 1 || v.cols() != 1) throw ContractError("Var::scalar on a non-scalar value");
  return v(0, 0);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad_of(*this); }

const Mat& Tape::value_of(const Var& v) const {
  const Node& n = nodes_[v.id_];
  return n.borrowed ? *n.borrowed : n.value;
}

Var Tape::constant(Mat value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(const Mat& value, Mat* grad) {
  Node n;
  n.borrowed = &value;
  n.requires_grad = grad != nullptr;
  n.sink = grad;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Mat value, bool requires_grad, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(Var loss, double seed) {
  if (loss.tape_ != this) throw ContractError("backward: loss belongs to another tape");
  const double l = loss.scalar();
  if (!std::isfinite(l)) throw NumericError("non-finite loss: " + std::to_string(l));
  if (!nodes_[loss.id_].requires_grad) return;
  nodes_[loss.id_].grad = Mat::Constant(1, 1, seed);
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.backward) n.backward(n.grad, *this);
    if (n.sink) {
      if (!n.grad.allFinite()) throw NumericError("non-finite gradient");
      if (n.sink->size() == 0)
        *n.sink = n.grad;
      else
        *n.sink += n.grad;
    }
  }
}

namespace {

bool any_grad(std::initializer_list<Var> vs) {
  for (const Var& v : vs)
    if (v.requires_grad()) return true;
  return false;
}

void check_same_tape(const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw ContractError("operands live on different tapes");
}

void check_shape(bool ok, const char* op) {
  if (!ok) throw ContractError(std::string(op) + ": shape mismatch");
}

}  // namespace

Var matmul(Var a, Var b) {
  check_same_tape(a, b);
  check_shape(a.cols() == b.rows(), "matmul");
  Tape& t = a.tape();
  Mat out = a.value() * b.value();
  return t.record(std::move(out), any_grad({a, b}), [a, b](const Mat& g, Tape& tp) {
    if (a.requires_grad()) tp.accumulate(a, g * b.value().transpose());
    if (b.requires_grad()) tp.accumulate(b, a.value().transpose() * g);
  });
}

Var affine(Var x, Var w, Var b) {
  check_same_tape(x, w);
  check_same_tape(x, b);
  check_shape(x.cols() == w.rows() && b.rows() == 1 && b.cols() == w.cols(), "affine");
  Tape& t = x.tape();
  Mat out = x.value() * w.value();
  out.rowwise() += b.value().row(0);
  return t.record(std::move(out), any_grad({x, w, b}), [x, w, b](const Mat& g, Tape& tp) {
    if (x.requires_grad()) tp.accumulate(x, g * w.value().transpose());
    if (w.requires_grad()) tp.accumulate(w, x.value().transpose() * g);
    if (b.requires_grad()) tp.accumulate(b, g.colwise().sum());
  });
}

Var add(Var a, Var b) {
  check_same_tape(a, b);
  check_shape(a.rows() == b.rows() && a.cols() == b.cols(), "add");
  Tape& t = a.tape();
  Mat out = a.value() + b.value();
  return t.record(std::move(out), any_grad({a, b}), [a, b](const Mat& g, Tape& tp) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

Var scale(Var a, double s) {
  Tape& t = a.tape();
  Mat out = a.value() * s;
  return t.record(std::move(out), a.requires_grad(), [a, s](const Mat& g, Tape& tp) { tp.accumulate(a, g * s); });
}

Var gelu(Var a) {
  Tape& t = a.tape();
  const Mat& x = a.value();
  Mat out(x.rows(), x.cols());
  const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  for (Eigen::Index i = 0; i < x.size(); ++i)
    out.data()[i] = 0.5 * x.data()[i] * (1.0 + std::erf(x.data()[i] * inv_sqrt2));
  return t.record(std::move(out), a.requires_grad(), [a, inv_sqrt2](const Mat& g, Tape& tp) {
    const Mat& x = a.value();
    Mat dx(x.rows(), x.cols());
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double v = x.data()[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
      dx.data()[i] = g.data()[i] * (cdf + v * inv_sqrt_2pi * std::exp(-0.5 * v * v));
    }
    tp.accumulate(a, dx);
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  check_same_tape(x, gamma);
  check_same_tape(x, beta);
  check_shape(gamma.rows() == 1 && beta.rows() == 1 && gamma.cols() == x.cols() && beta.cols() == x.cols(),
              "layer_norm");
  Tape& t = x.tape();
  const Mat& xv = x.value();
  const Eigen::Index n = xv.rows(), d = xv.cols();
  auto xhat = std::make_shared<Mat>(n, d);
  auto inv_std = std::make_shared<Eigen::VectorXd>(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mu = xv.row(r).mean();
    const double var = (xv.row(r).array() - mu).square().mean();
    (*inv_std)(r) = 1.0 / std::sqrt(var + eps);
    xhat->row(r) = (xv.row(r).array() - mu) * (*inv_std)(r);
  }
  Mat out = xhat->array().rowwise() * gamma.value().row(0).array();
  out.rowwise() += beta.value().row(0);
  return t.record(std::move(out), any_grad({x, gamma, beta}), [x, gamma, beta, xhat, inv_std](const Mat& g, Tape& tp) {
    if (gamma.requires_grad()) tp.accumulate(gamma, (g.array() * xhat->array()).colwise().sum().matrix());
    if (beta.requires_grad()) tp.accumulate(beta, g.colwise().sum());
    if (x.requires_grad()) {
      const Mat dxhat = g.array().rowwise() * gamma.value().row(0).array();
      Mat dx(dxhat.rows(), dxhat.cols());
      for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
        const double m1 = dxhat.row(r).mean();
        const double m2 = (dxhat.row(r).array() * xhat->row(r).array()).mean();
        dx.row(r) = (*inv_std)(r) * (dxhat.row(r).array() - m1 - xhat->row(r).array() * m2);
      }
      tp.accumulate(x, dx);
    }
  });
}

Var attention(Var qkv, int heads) {
  const Eigen::Index n = qkv.rows();
  check_shape(heads > 0 && qkv.cols() % (3 * heads) == 0, "attention");
  const Eigen::Index d = qkv.cols() / 3;
  const Eigen::Index dh = d / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  Tape& t = qkv.tape();
  const Mat& x = qkv.value();
  auto probs = std::make_shared<std::vector<Mat>>(static_cast<std::size_t>(heads));
  Mat out(n, d);
  for (int h = 0; h < heads; ++h) {
    const auto q = x.middleCols(h * dh, dh);
    const auto k = x.middleCols(d + h * dh, dh);
    const auto v = x.middleCols(2 * d + h * dh, dh);
    Mat s = (q * k.transpose()) * sc;
    for (Eigen::Index r = 0; r < n; ++r) {
      const double mx = s.row(r).maxCoeff();
      s.row(r) = (s.row(r).array() - mx).exp();
      s.row(r) /= s.row(r).sum();
    }
    out.middleCols(h * dh, dh).noalias() = s * v;
    (*probs)[static_cast<std::size_t>(h)] = std::move(s);
  }
  return t.record(std::move(out), qkv.requires_grad(), [qkv, heads, d, dh, sc, probs](const Mat& g, Tape& tp) {
    const Mat& x = qkv.value();
    const Eigen::Index n = x.rows();
    Mat dx(n, 3 * d);
    for (int h = 0; h < heads; ++h) {
      const Mat& a = (*probs)[static_cast<std::size_t>(h)];
      const auto q = x.middleCols(h * dh, dh);
      const auto k = x.middleCols(d + h * dh, dh);
      const auto v = x.middleCols(2 * d + h * dh, dh);
      const auto go = g.middleCols(h * dh, dh);
      const Mat da = go * v.transpose();
      const Eigen::VectorXd row_dot = (da.array() * a.array()).rowwise().sum();
      const Mat ds = (a.array() * (da.array().colwise() - row_dot.array())).matrix() * sc;
      dx.middleCols(h * dh, dh).noalias() = ds * k;
      dx.middleCols(d + h * dh, dh).noalias() = ds.transpose() * q;
      dx.middleCols(2 * d + h * dh, dh).noalias() = a.transpose() * go;
    }
    tp.accumulate(qkv, dx);
  });
}

Var gather_rows(Var a, std::vector<int> rows) {
  Tape& t = a.tape();
  const Mat& av = a.value();
  Mat out(static_cast<Eigen::Index>(rows.size()), av.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= av.rows()) throw ContractError("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(r)) = av.row(rows[r]);
  }
  return t.record(std::move(out), a.requires_grad(), [a, rows = std::move(rows)](const Mat& g, Tape& tp) {
    Mat da = Mat::Zero(a.rows(), a.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) da.row(rows[r]) += g.row(static_cast<Eigen::Index>(r));
    tp.accumulate(a, da);
  });
}

Var scatter_fill(Var rows, std::vector<int> indices, Var fill, int total) {
  check_same_tape(rows, fill);
  check_shape(static_cast<Eigen::Index>(indices.size()) == rows.rows() && fill.rows() == 1 &&
                  fill.cols() == rows.cols(),
              "scatter_fill");
  Tape& t = rows.tape();
  std::vector<bool> placed(static_cast<std::size_t>(total), false);
  Mat out(total, rows.cols());
  out.rowwise() = fill.value().row(0);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const int i = indices[r];
    if (i < 0 || i >= total || placed[static_cast<std::size_t>(i)])
      throw ContractError("scatter_fill: bad or duplicate index");
    placed[static_cast<std::size_t>(i)] = true;
    out.row(i) = rows.value().row(static_cast<Eigen::Index>(r));
  }
  return t.record(std::move(out), any_grad({rows, fill}),
                  [rows, fill, indices = std::move(indices), placed = std::move(placed)](const Mat& g, Tape& tp) {
                    if (rows.requires_grad()) {
                      Mat dr(rows.rows(), rows.cols());
                      for (std::size_t r = 0; r < indices.size(); ++r)
                        dr.row(static_cast<Eigen::Index>(r)) = g.row(indices[r]);
                      tp.accumulate(rows, dr);
                    }
                    if (fill.requires_grad()) {
                      Mat df = Mat::Zero(1, g.cols());
                      for (std::size_t i = 0; i < placed.size(); ++i)
                        if (!placed[i]) df += g.row(static_cast<Eigen::Index>(i));
                      tp.accumulate(fill, df);
                    }
                  });
}

Var mean_rows(Var a) {
  check_shape(a.rows() > 0, "mean_rows");
  Tape& t = a.tape();
  Mat out = a.value().colwise().mean();
  return t.record(std::move(out), a.requires_grad(), [a](const Mat& g, Tape& tp) {
    Mat da(a.rows(), a.cols());
    da.rowwise() = g.row(0) / static_cast<double>(a.rows());
    tp.accumulate(a, da);
  });
}

Var stop_gradient(Var a) { return a.tape().constant(a.value()); }

Var mse(Var pred, const Mat& target) {
  check_shape(pred.rows() == target.rows() && pred.cols() == target.cols(), "mse");
  Tape& t = pred.tape();
  if (target.size() == 0) return t.constant(Mat::Zero(1, 1));
  const double count = static_cast<double>(target.size());
  Mat diff = pred.value() - target;
  Mat out = Mat::Constant(1, 1, diff.squaredNorm() / count);
  return t.record(std::move(out), pred.requires_grad(),
                  [pred, diff = std::move(diff), count](const Mat& g, Tape& tp) {
                    tp.accumulate(pred, diff * (2.0 * g(0, 0) / count));
                  });
}

Var cross_entropy(Var logits, std::span<const int> labels) {
  check_shape(logits.rows() == static_cast<Eigen::Index>(labels.size()) && logits.rows() > 0, "cross_entropy");
  Tape& t = logits.tape();
  Mat p = softmax_rows(logits.value());
  const double n = static_cast<double>(labels.size());
  double loss = 0.0;
  std::vector<int> y(labels.begin(), labels.end());
  for (std::size_t r = 0; r < y.size(); ++r) {
    if (y[r] < 0 || y[r] >= logits.cols()) throw ContractError("cross_entropy: label out of range");
    const auto row = logits.value().row(static_cast<Eigen::Index>(r));
    const double mx = row.maxCoeff();
    const double lse = mx + std::log((row.array() - mx).exp().sum());
    loss += lse - row(y[r]);
  }
  return t.record(Mat::Constant(1, 1, loss / n), logits.requires_grad(),
                  [logits, p = std::move(p), y = std::move(y), n](const Mat& g, Tape& tp) {
                    Mat d = p;
                    for (std::size_t r = 0; r < y.size(); ++r) d(static_cast<Eigen::Index>(r), y[r]) -= 1.0;
                    tp.accumulate(logits, d * (g(0, 0) / n));
                  });
}

Var squared_distance(Var a, Var b) {
  check_same_tape(a, b);
  check_shape(a.rows() == b.rows() && a.cols() == b.cols(), "squared_distance");
  Tape& t = a.tape();
  Mat diff = a.value() - b.value();
  const double v = diff.squaredNorm();
  return t.record(Mat::Constant(1, 1, v), any_grad({a, b}), [a, b, diff = std::move(diff)](const Mat& g, Tape& tp) {
    tp.accumulate(a, diff * (2.0 * g(0, 0)));
    tp.accumulate(b, diff * (-2.0 * g(0, 0)));
  });
}

Var sum_squares(Var a) {
  Tape& t = a.tape();
  const double v = a.value().squaredNorm();
  return t.record(Mat::Constant(1, 1, v), a.requires_grad(),
                  [a](const Mat& g, Tape& tp) { tp.accumulate(a, a.value() * (2.0 * g(0, 0))); });
}

Var weighted_sum(std::span<const Var> terms, std::span<const double> weights) {
  if (terms.empty() || terms.size() != weights.size()) throw ContractError("weighted_sum: bad arguments");
  Tape& t = terms.front().tape();
  double v = 0.0;
  bool rg = false;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    check_same_tape(terms.front(), terms[i]);
    v += weights[i] * terms[i].scalar();
    rg = rg || terms[i].requires_grad();
  }
  std::vector<Var> ts(terms.begin(), terms.end());
  std::vector<double> ws(weights.begin(), weights.end());
  return t.record(Mat::Constant(1, 1, v), rg, [ts = std::move(ts), ws = std::move(ws)](const Mat& g, Tape& tp) {
    for (std::size_t i = 0; i < ts.size(); ++i) tp.accumulate(ts[i], Mat::Constant(1, 1, ws[i] * g(0, 0)));
  });
}

Var sum(std::span<const Var> terms) {
  const std::vector<double> ones(terms.size(), 1.0);
  return weighted_sum(terms, ones);
}

Mat softmax_rows(const Mat& logits) {
  Mat p(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    p.row(r) = (logits.row(r).array() - mx).exp();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

}  // namespace mmcdfsl::ad
