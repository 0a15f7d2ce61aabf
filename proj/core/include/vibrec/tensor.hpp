#pragma once

// Reverse-mode differentiation over dense row-major matrices.
//
// A Tape records every primitive applied to its Vars in creation order, so
// parents always precede children and one reverse sweep visits each node
// once. Trainable leaves live in a ParamStore; backward() accumulates into
// the store and clears the tape.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "vibrec/rng.hpp"

namespace vibrec::ad {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Plain value tensor: shape plus row-major data. Ranks 1 and 2 only.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  static Tensor from_matrix(const Mat& m);
  Mat to_matrix() const;
  std::size_t numel() const;
};

class ParamStore;
class Tape;

/// Handle to a node on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  const Mat& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  /// Value of a 1x1 node.
  double item() const;

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  /// With gradients disabled, parameters bind as constants and no backward
  /// closures are recorded.
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Mat value);
  /// Leaf bound to parameter `index`; its gradient lands in `store`.
  Var param(ParamStore& store, std::size_t index);
  /// Parameter value as a constant (no gradient), without copying.
  Var param_constant(const ParamStore& store, std::size_t index);

  using Backprop = std::function<void(Tape&, int self)>;
  /// Records a node. `parents` decide whether it requires a gradient.
  Var record(Mat value, std::initializer_list<Var> parents, Backprop backprop);
  Var record(Mat value, std::span<const Var> parents, Backprop backprop);

  const Mat& value(int id) const;
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  /// Gradient buffer of node `id` during backward (may be empty = zero).
  const Mat& grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  void accumulate(int id, const Mat& g);
  template <typename Expr>
  void accumulate_expr(int id, const Expr& g) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  /// Back-propagates from a 1x1 loss, accumulates parameter gradients into
  /// their stores and clears the tape.
  void backward(Var loss);
  void clear();
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    const Mat* external = nullptr;
    Mat grad;
    bool requires_grad = false;
    Backprop backprop;
    ParamStore* store = nullptr;
    std::size_t param_index = 0;
  };
  std::vector<Node> nodes_;
  bool grad_enabled_;
};

/// Named trainable tensors in a fixed registration order, with Adam state.
class ParamStore {
 public:
  std::size_t add(const std::string& name, Mat init);
  std::size_t size() const { return entries_.size(); }
  const std::string& name(std::size_t i) const { return entries_.at(i).name; }
  const Mat& value(std::size_t i) const { return entries_.at(i).value; }
  Mat& value(std::size_t i) { return entries_.at(i).value; }
  const Mat& grad(std::size_t i) const { return entries_.at(i).grad; }
  bool has_grad(std::size_t i) const { return entries_.at(i).has_grad; }
  std::optional<std::size_t> find(const std::string& name) const;
  std::size_t index(const std::string& name) const;
  std::size_t total_numel() const;

  void accumulate_grad(std::size_t i, const Mat& g);
  void zero_grad();

  struct AdamState {
    Mat m;
    Mat v;
    std::int64_t step = 0;
  };
  AdamState& adam(std::size_t i) { return entries_.at(i).adam; }
  const AdamState& adam(std::size_t i) const { return entries_.at(i).adam; }

  /// Rounds every value to float32 precision (the checkpoint storage type).
  void round_to_float();

 private:
  struct Entry {
    std::string name;
    Mat value;
    Mat grad;
    bool has_grad = false;
    AdamState adam;
  };
  std::vector<Entry> entries_;
};

// ---- primitives -----------------------------------------------------------

Var matmul(Var a, Var b);
Var add(Var a, Var b);
/// a (rows x n) plus a 1 x n row broadcast over rows.
Var add_row(Var a, Var row);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var neg(Var a);
Var square(Var a);
Var exp(Var a);
/// Throws DomainError unless every entry is strictly positive.
Var log(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var relu(Var a);
/// Elementwise clamp; the gradient is zero where the bound is active.
Var clamp(Var a, double lo, double hi);
/// Sum of all entries as 1x1.
Var sum(Var a);
Var mean(Var a);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);
Var concat_cols(std::span<const Var> parts);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

// ---- layers ---------------------------------------------------------------

/// Xavier/Glorot uniform initialisation.
Mat xavier_uniform(Eigen::Index fan_in, Eigen::Index fan_out, Rng& rng);

/// Fully connected layer y = x W + b with W (in x out), b (1 x out).
struct Dense {
  std::size_t weight = 0;
  std::size_t bias = 0;
  Eigen::Index in = 0;
  Eigen::Index out = 0;

  static Dense create(ParamStore& store, const std::string& prefix, Eigen::Index in, Eigen::Index out,
                      Rng& rng);
  /// Re-attaches to existing parameters by name.
  static Dense attach(const ParamStore& store, const std::string& prefix);
};

/// LSTM weights with gate blocks ordered (input, forget, candidate, output).
/// `input_weight` is absent for an input-free cell.
struct Lstm {
  std::optional<std::size_t> input_weight;  // in x 4H
  std::size_t recurrent_weight = 0;         // H x 4H
  std::size_t bias = 0;                     // 1 x 4H
  Eigen::Index in = 0;
  Eigen::Index hidden = 0;

  /// Xavier-uniform weights, zero bias except `forget_bias` on the forget gate.
  static Lstm create(ParamStore& store, const std::string& prefix, Eigen::Index in, Eigen::Index hidden,
                     Rng& rng, double forget_bias = 1.0);
  static Lstm attach(const ParamStore& store, const std::string& prefix);
};

/// Parameters of a layer bound to a tape for one forward pass.
struct BoundDense {
  Var weight;
  Var bias;
  Var operator()(Var x) const { return add_row(matmul(x, weight), bias); }
};

struct BoundLstm {
  Var input_weight;  // invalid when the cell has no input
  Var recurrent_weight;
  Var bias;
  Eigen::Index hidden = 0;
};

/// Binds stored parameters to `tape`: tracked leaves when the tape records
/// gradients, constants otherwise.
Var bind(Tape& tape, ParamStore& store, std::size_t index);
BoundDense bind(Tape& tape, ParamStore& store, const Dense& layer);
BoundLstm bind(Tape& tape, ParamStore& store, const Lstm& layer);

struct LstmState {
  Var h;
  Var c;
};

/// One LSTM step. Pass an invalid `x` for an input-free cell.
LstmState lstm_step(Var x, const LstmState& prev, const BoundLstm& p);

// ---- optimisation ---------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam update on every parameter; zeroes gradients after.
/// Throws ContractError if any parameter has no gradient.
void adam_step(ParamStore& store, const AdamConfig& cfg = {});

// ---- persistence ----------------------------------------------------------

/// Concatenated little-endian float32 values in registration order.
void write_params_bin(const std::filesystem::path& path, const ParamStore& store);
/// Reads values into an existing store whose names and shapes define the layout.
void read_params_bin(const std::filesystem::path& path, ParamStore& store);

}  // namespace vibrec::ad
