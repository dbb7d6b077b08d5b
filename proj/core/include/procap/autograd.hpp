#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "procap/tensor.hpp"

namespace procap::ag {

template <typename T>
struct Parameter {
  std::string name;
  Mat<T> value;
  Mat<T> grad;
  bool trainable = true;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

// Owns named parameters in registration order. Addresses are stable.
template <typename T>
class ParameterStore {
 public:
  Parameter<T>& add(const std::string& name, Mat<T> init, bool trainable = true);
  Parameter<T>& get(const std::string& name);
  const Parameter<T>& get(const std::string& name) const;
  bool has(const std::string& name) const { return index_.count(name) != 0; }

  std::vector<Parameter<T>*> all();
  std::vector<const Parameter<T>*> all() const;
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();
  // FNV-1a over names, shapes and float32 values, in name order.
  std::string hash() const;

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::map<std::string, std::size_t> index_;
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Multiply-accumulate tallies. Matmuls issued inside an attention scope also
// count toward `attention`.
struct OpCounter {
  std::uint64_t total = 0;
  std::uint64_t attention = 0;
};

// Reverse-mode tape. Values are 2-D row-major matrices; scalars are 1x1.
template <typename T>
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Mat<T> value);
  // One node per parameter per tape; gradients flow back into Parameter::grad.
  Var param(Parameter<T>& p);

  const Mat<T>& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
  T scalar(Var v) const { return value(v)(0, 0); }
  std::size_t size() const { return nodes_.size(); }

  Var matmul(Var a, Var b);
  Var linear(Var x, Var w, Var b);  // x w + b, b a 1 x out row (may be invalid)
  Var add(Var a, Var b);
  Var add_row(Var x, Var row);  // broadcast a 1 x d row over x
  Var scale(Var a, T s);
  Var layer_norm(Var x, Var gamma, Var beta, T eps = T(1e-5));
  Var gelu(Var x);
  // Multi-head scaled dot-product attention over already-projected q, k, v.
  Var attention(Var q, Var k, Var v, int heads, bool causal);
  Var concat_rows(const std::vector<Var>& parts);
  Var slice_rows(Var x, int begin, int count);
  Var gather_rows(Var table, const std::vector<int>& ids);
  // Rows with flag != 0 are replaced by `row`; others pass through.
  Var replace_rows(Var x, Var row, const std::vector<std::uint8_t>& flags);
  // Mean negative log-likelihood of targets under row-wise softmax(logits).
  Var cross_entropy(Var logits, const std::vector<int>& targets);
  // -log sigmoid(z) for label 1, -log(1 - sigmoid(z)) for label 0; z is 1x1.
  Var binary_cross_entropy(Var logit, int label);
  Var sum(const std::vector<Var>& scalars);

  void backward(Var loss);

  OpCounter& counter() { return counter_; }
  const OpCounter& counter() const { return counter_; }
  void set_attention_scope(bool on) { attention_scope_ = on; }

 private:
  struct Node {
    Mat<T> value;
    Mat<T> grad;
    std::function<void()> backward;
    Parameter<T>* param = nullptr;
  };

  Var push(Mat<T> value);
  Mat<T>& grad_of(int id);
  bool needs_grad(Var v) const;
  void count(std::uint64_t macs);

  bool grad_enabled_;
  bool attention_scope_ = false;
  std::vector<Node> nodes_;
  std::vector<std::uint8_t> requires_;
  std::map<const Parameter<T>*, int> param_nodes_;
  OpCounter counter_;
};

}  // namespace procap::ag
