#include "vibrec/tensor.hpp"

#include <bit>
#include <cmath>
#include <fstream>

#include "vibrec/error.hpp"
#include "vibrec/json_io.hpp"

namespace vibrec::ad {

namespace {

std::string shape_str(const Mat& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_same_shape(const char* op, Var a, Var b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.value()) + " vs " +
                     shape_str(b.value()));
  }
}

void require_same_tape(Var a, Var b) {
  if (a.tape() != b.tape()) throw ContractError("operands recorded on different tapes");
}

}  // namespace

// ---- Tensor ---------------------------------------------------------------

Tensor Tensor::from_matrix(const Mat& m) {
  Tensor t;
  t.shape = {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())};
  t.data.assign(m.data(), m.data() + m.size());
  return t;
}

Mat Tensor::to_matrix() const {
  if (shape.empty() || shape.size() > 2) throw ShapeError("Tensor: only rank 1 and 2 are supported");
  const auto rows = shape.size() == 1 ? Eigen::Index{1} : static_cast<Eigen::Index>(shape[0]);
  const auto cols = static_cast<Eigen::Index>(shape.back());
  if (static_cast<std::size_t>(rows * cols) != data.size()) throw ShapeError("Tensor: data length != shape product");
  return Eigen::Map<const Mat>(data.data(), rows, cols);
}

std::size_t Tensor::numel() const {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

// ---- Var / Tape -----------------------------------------------------------

const Mat& Var::value() const { return tape_->value(id_); }

double Var::item() const {
  const Mat& v = value();
  if (v.size() != 1) throw ShapeError("item() on a " + shape_str(v) + " tensor");
  return v(0, 0);
}

const Mat& Tape::value(int id) const {
  const auto& n = nodes_[static_cast<std::size_t>(id)];
  return n.external != nullptr ? *n.external : n.value;
}

Var Tape::constant(Mat value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(ParamStore& store, std::size_t index) {
  Node n;
  n.external = &store.value(index);
  n.requires_grad = grad_enabled_;
  if (grad_enabled_) {
    n.store = &store;
    n.param_index = index;
  }
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param_constant(const ParamStore& store, std::size_t index) {
  Node n;
  n.external = &store.value(index);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::record(Mat value, std::initializer_list<Var> parents, Backprop backprop) {
  return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(backprop));
}

Var Tape::record(Mat value, std::span<const Var> parents, Backprop backprop) {
  Node n;
  n.value = std::move(value);
  if (grad_enabled_) {
    for (const Var& p : parents) {
      if (p.tape() != this) throw ContractError("operand recorded on a different tape");
      if (requires_grad(p.id())) n.requires_grad = true;
    }
    if (n.requires_grad) n.backprop = std::move(backprop);
  }
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::accumulate(int id, const Mat& g) { accumulate_expr(id, g); }

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw ContractError("backward: loss belongs to another tape");
  if (loss.value().size() != 1) {
    throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.value()));
  }
  if (!grad_enabled_) throw ContractError("backward: tape records no gradients");
  auto& root = nodes_[static_cast<std::size_t>(loss.id())];
  if (root.requires_grad) {
    root.grad = Mat::Ones(1, 1);
    for (int i = loss.id(); i >= 0; --i) {
      auto& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.requires_grad || n.grad.size() == 0) continue;
      if (n.backprop) {
        n.backprop(*this, i);
      } else if (n.store != nullptr) {
        n.store->accumulate_grad(n.param_index, n.grad);
      }
    }
  }
  clear();
}

void Tape::clear() { nodes_.clear(); }

// ---- ParamStore -----------------------------------------------------------

std::size_t ParamStore::add(const std::string& name, Mat init) {
  if (find(name)) throw ContractError("ParamStore: duplicate parameter '" + name + "'");
  Entry e;
  e.name = name;
  e.grad = Mat::Zero(init.rows(), init.cols());
  e.adam.m = Mat::Zero(init.rows(), init.cols());
  e.adam.v = Mat::Zero(init.rows(), init.cols());
  e.value = std::move(init);
  entries_.push_back(std::move(e));
  return entries_.size() - 1;
}

std::optional<std::size_t> ParamStore::find(const std::string& name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].name == name) return i;
  return std::nullopt;
}

std::size_t ParamStore::index(const std::string& name) const {
  auto i = find(name);
  if (!i) throw ContractError("ParamStore: no parameter named '" + name + "'");
  return *i;
}

std::size_t ParamStore::total_numel() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += static_cast<std::size_t>(e.value.size());
  return n;
}

void ParamStore::accumulate_grad(std::size_t i, const Mat& g) {
  auto& e = entries_.at(i);
  if (g.rows() != e.value.rows() || g.cols() != e.value.cols()) {
    throw ShapeError("gradient shape mismatch for '" + e.name + "'");
  }
  e.grad += g;
  e.has_grad = true;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) {
    e.grad.setZero();
    e.has_grad = false;
  }
}

void ParamStore::round_to_float() {
  for (auto& e : entries_) {
    e.value = e.value.unaryExpr([](double v) { return static_cast<double>(static_cast<float>(v)); });
  }
}

// ---- primitives -----------------------------------------------------------

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a.value()) + " * " + shape_str(b.value()));
  }
  Mat out = a.value() * b.value();
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, int self) {
    const Mat& g = t.grad(self);
    if (t.requires_grad(a.id())) t.accumulate_expr(a.id(), g * t.value(b.id()).transpose());
    if (t.requires_grad(b.id())) t.accumulate_expr(b.id(), t.value(a.id()).transpose() * g);
  });
}

Var add(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape("add", a, b);
  return a.tape()->record(a.value() + b.value(), {a, b}, [a, b](Tape& t, int self) {
    t.accumulate(a.id(), t.grad(self));
    t.accumulate(b.id(), t.grad(self));
  });
}

Var add_row(Var a, Var row) {
  require_same_tape(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw ShapeError("add_row: cannot broadcast " + shape_str(row.value()) + " over " + shape_str(a.value()));
  }
  Mat out = a.value().rowwise() + row.value().row(0);
  return a.tape()->record(std::move(out), {a, row}, [a, row](Tape& t, int self) {
    const Mat& g = t.grad(self);
    t.accumulate(a.id(), g);
    if (t.requires_grad(row.id())) t.accumulate_expr(row.id(), g.colwise().sum());
  });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape("sub", a, b);
  return a.tape()->record(a.value() - b.value(), {a, b}, [a, b](Tape& t, int self) {
    t.accumulate(a.id(), t.grad(self));
    if (t.requires_grad(b.id())) t.accumulate_expr(b.id(), -t.grad(self));
  });
}

Var mul(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape("mul", a, b);
  return a.tape()->record(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Tape& t, int self) {
    const Mat& g = t.grad(self);
    if (t.requires_grad(a.id())) t.accumulate_expr(a.id(), g.cwiseProduct(t.value(b.id())));
    if (t.requires_grad(b.id())) t.accumulate_expr(b.id(), g.cwiseProduct(t.value(a.id())));
  });
}

Var scale(Var a, double s) {
  return a.tape()->record(a.value() * s, {a}, [a, s](Tape& t, int self) {
    t.accumulate_expr(a.id(), t.grad(self) * s);
  });
}

Var add_scalar(Var a, double s) {
  Mat out = a.value().array() + s;
  return a.tape()->record(std::move(out), {a}, [a](Tape& t, int self) { t.accumulate(a.id(), t.grad(self)); });
}

Var neg(Var a) { return scale(a, -1.0); }

Var square(Var a) {
  return a.tape()->record(a.value().array().square().matrix(), {a}, [a](Tape& t, int self) {
    t.accumulate_expr(a.id(), 2.0 * t.grad(self).cwiseProduct(t.value(a.id())));
  });
}

Var exp(Var a) {
  Mat out = a.value().array().exp().matrix();
  return a.tape()->record(std::move(out), {a}, [a](Tape& t, int self) {
    t.accumulate_expr(a.id(), t.grad(self).cwiseProduct(t.value(self)));
  });
}

Var log(Var a) {
  if (!(a.value().array() > 0.0).all()) throw DomainError("log: input has nonpositive entries");
  Mat out = a.value().array().log().matrix();
  return a.tape()->record(std::move(out), {a}, [a](Tape& t, int self) {
    t.accumulate_expr(a.id(), t.grad(self).cwiseQuotient(t.value(a.id())));
  });
}

Var tanh(Var a) {
  // tanh(x) = e / (e + 2) with e = expm1(2x); vectorises where std::tanh does
  // not. |x| <= 20 keeps e finite, and tanh(20) rounds to 1.
  const auto e = (2.0 * a.value().array().cwiseMax(-20.0).cwiseMin(20.0)).expm1();
  Mat out = (e / (e + 2.0)).matrix();
  return a.tape()->record(std::move(out), {a}, [a](Tape& t, int self) {
    const Mat& y = t.value(self);
    t.accumulate_expr(a.id(), (t.grad(self).array() * (1.0 - y.array().square())).matrix());
  });
}

Var sigmoid(Var a) {
  // exp(-v) may overflow to inf for very negative v, giving exactly 0.
  Mat out = (1.0 + (-a.value().array()).exp()).inverse().matrix();
  return a.tape()->record(std::move(out), {a}, [a](Tape& t, int self) {
    const Mat& y = t.value(self);
    t.accumulate_expr(a.id(), (t.grad(self).array() * y.array() * (1.0 - y.array())).matrix());
  });
}

Var relu(Var a) {
  Mat out = a.value().cwiseMax(0.0);
  return a.tape()->record(std::move(out), {a}, [a](Tape& t, int self) {
    const Mat& x = t.value(a.id());
    t.accumulate_expr(a.id(), (x.array() > 0.0).select(t.grad(self), 0.0).matrix());
  });
}

Var clamp(Var a, double lo, double hi) {
  if (lo > hi) throw ContractError("clamp: lo > hi");
  Mat out = a.value().cwiseMax(lo).cwiseMin(hi);
  return a.tape()->record(std::move(out), {a}, [a, lo, hi](Tape& t, int self) {
    const Mat& x = t.value(a.id());
    t.accumulate_expr(a.id(), (x.array() >= lo && x.array() <= hi).select(t.grad(self), 0.0).matrix());
  });
}

Var sum(Var a) {
  Mat out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape()->record(std::move(out), {a}, [a](Tape& t, int self) {
    const double g = t.grad(self)(0, 0);
    const Mat& x = t.value(a.id());
    t.accumulate_expr(a.id(), Mat::Constant(x.rows(), x.cols(), g));
  });
}

Var mean(Var a) {
  const auto n = static_cast<double>(a.value().size());
  if (n == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0 / n);
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw ShapeError("slice_cols: [" + std::to_string(start) + ", +" + std::to_string(count) + ") outside " +
                     shape_str(a.value()));
  }
  Mat out = a.value().middleCols(start, count);
  return a.tape()->record(std::move(out), {a}, [a, start, count](Tape& t, int self) {
    const Mat& x = t.value(a.id());
    Mat g = Mat::Zero(x.rows(), x.cols());
    g.middleCols(start, count) = t.grad(self);
    t.accumulate(a.id(), g);
  });
}

Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) {
    throw ShapeError("slice_rows: [" + std::to_string(start) + ", +" + std::to_string(count) + ") outside " +
                     shape_str(a.value()));
  }
  Mat out = a.value().middleRows(start, count);
  return a.tape()->record(std::move(out), {a}, [a, start, count](Tape& t, int self) {
    const Mat& x = t.value(a.id());
    Mat g = Mat::Zero(x.rows(), x.cols());
    g.middleRows(start, count) = t.grad(self);
    t.accumulate(a.id(), g);
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row counts differ");
    if (p.tape() != parts.front().tape()) throw ContractError("concat_cols: operands on different tapes");
    cols += p.cols();
  }
  Mat out(rows, cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  std::vector<Var> saved(parts.begin(), parts.end());
  return parts.front().tape()->record(std::move(out), parts, [saved](Tape& t, int self) {
    const Mat& g = t.grad(self);
    Eigen::Index off = 0;
    for (const Var& p : saved) {
      const Eigen::Index c = t.value(p.id()).cols();
      if (t.requires_grad(p.id())) t.accumulate_expr(p.id(), g.middleCols(off, c));
      off += c;
    }
  });
}

// ---- layers ---------------------------------------------------------------

Mat xavier_uniform(Eigen::Index fan_in, Eigen::Index fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Mat w(fan_in, fan_out);
  for (Eigen::Index r = 0; r < fan_in; ++r)
    for (Eigen::Index c = 0; c < fan_out; ++c) w(r, c) = rng.uniform(-limit, limit);
  return w;
}

Dense Dense::create(ParamStore& store, const std::string& prefix, Eigen::Index in, Eigen::Index out, Rng& rng) {
  Dense d;
  d.in = in;
  d.out = out;
  d.weight = store.add(prefix + ".W", xavier_uniform(in, out, rng));
  d.bias = store.add(prefix + ".b", Mat::Zero(1, out));
  return d;
}

Dense Dense::attach(const ParamStore& store, const std::string& prefix) {
  Dense d;
  d.weight = store.index(prefix + ".W");
  d.bias = store.index(prefix + ".b");
  d.in = store.value(d.weight).rows();
  d.out = store.value(d.weight).cols();
  return d;
}

Lstm Lstm::create(ParamStore& store, const std::string& prefix, Eigen::Index in, Eigen::Index hidden, Rng& rng,
                  double forget_bias) {
  Lstm l;
  l.in = in;
  l.hidden = hidden;
  if (in > 0) l.input_weight = store.add(prefix + ".Wx", xavier_uniform(in, 4 * hidden, rng));
  l.recurrent_weight = store.add(prefix + ".Wh", xavier_uniform(hidden, 4 * hidden, rng));
  Mat b = Mat::Zero(1, 4 * hidden);
  b.middleCols(hidden, hidden).setConstant(forget_bias);
  l.bias = store.add(prefix + ".b", std::move(b));
  return l;
}

Lstm Lstm::attach(const ParamStore& store, const std::string& prefix) {
  Lstm l;
  l.input_weight = store.find(prefix + ".Wx");
  l.recurrent_weight = store.index(prefix + ".Wh");
  l.bias = store.index(prefix + ".b");
  l.hidden = store.value(l.recurrent_weight).rows();
  l.in = l.input_weight ? store.value(*l.input_weight).rows() : 0;
  return l;
}

Var bind(Tape& tape, ParamStore& store, std::size_t index) {
  return tape.grad_enabled() ? tape.param(store, index) : tape.param_constant(store, index);
}

BoundDense bind(Tape& tape, ParamStore& store, const Dense& layer) {
  return {bind(tape, store, layer.weight), bind(tape, store, layer.bias)};
}

BoundLstm bind(Tape& tape, ParamStore& store, const Lstm& layer) {
  BoundLstm b;
  if (layer.input_weight) b.input_weight = bind(tape, store, *layer.input_weight);
  b.recurrent_weight = bind(tape, store, layer.recurrent_weight);
  b.bias = bind(tape, store, layer.bias);
  b.hidden = layer.hidden;
  return b;
}

LstmState lstm_step(Var x, const LstmState& prev, const BoundLstm& p) {
  const Eigen::Index H = p.hidden;
  if (prev.h.cols() != H || prev.c.cols() != H || prev.h.rows() != prev.c.rows()) {
    throw ShapeError("lstm_step: state shape does not match hidden size " + std::to_string(H));
  }
  Var z = matmul(prev.h, p.recurrent_weight);
  if (p.input_weight.valid()) {
    if (!x.valid()) throw ShapeError("lstm_step: cell expects an input");
    z = add(matmul(x, p.input_weight), z);
  } else if (x.valid()) {
    throw ShapeError("lstm_step: cell has no input weights");
  }
  z = add_row(z, p.bias);
  Var i = sigmoid(slice_cols(z, 0, H));
  Var f = sigmoid(slice_cols(z, H, H));
  Var g = tanh(slice_cols(z, 2 * H, H));
  Var o = sigmoid(slice_cols(z, 3 * H, H));
  Var c = add(mul(f, prev.c), mul(i, g));
  Var h = mul(o, tanh(c));
  return {h, c};
}

// ---- optimisation ---------------------------------------------------------

void adam_step(ParamStore& store, const AdamConfig& cfg) {
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (!store.has_grad(i)) throw ContractError("adam_step: parameter '" + store.name(i) + "' has no gradient");
  }
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& st = store.adam(i);
    const Mat& g = store.grad(i);
    st.step += 1;
    st.m = cfg.beta1 * st.m + (1.0 - cfg.beta1) * g;
    st.v = cfg.beta2 * st.v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
    store.value(i).array() -= cfg.lr * (st.m.array() / c1) / ((st.v.array() / c2).sqrt() + cfg.eps);
  }
  store.zero_grad();
}

// ---- persistence ----------------------------------------------------------

void write_params_bin(const std::filesystem::path& path, const ParamStore& store) {
  std::string buf;
  buf.reserve(store.total_numel() * 4);
  for (std::size_t i = 0; i < store.size(); ++i) {
    const Mat& v = store.value(i);
    for (Eigen::Index k = 0; k < v.size(); ++k) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v.data()[k]));
      for (int b = 0; b < 4; ++b) buf.push_back(static_cast<char>((bits >> (8 * b)) & 0xffU));
    }
  }
  write_text_file(path, buf);
}

void read_params_bin(const std::filesystem::path& path, ParamStore& store) {
  const std::string buf = read_text_file(path);
  if (buf.size() != store.total_numel() * 4) {
    throw IoError(path.string() + ": expected " + std::to_string(store.total_numel() * 4) + " bytes, found " +
                  std::to_string(buf.size()));
  }
  std::size_t pos = 0;
  for (std::size_t i = 0; i < store.size(); ++i) {
    Mat& v = store.value(i);
    for (Eigen::Index k = 0; k < v.size(); ++k) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos++])) << (8 * b);
      v.data()[k] = static_cast<double>(std::bit_cast<float>(bits));
    }
  }
}

}  // namespace vibrec::ad
