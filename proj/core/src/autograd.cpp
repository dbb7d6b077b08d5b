#include "procap/autograd.hpp"

#include <cmath>
#include <limits>

#include "procap/error.hpp"
#include "procap/util.hpp"

namespace procap::ag {

// ---- ParameterStore ----

template <typename T>
Parameter<T>& ParameterStore<T>::add(const std::string& name, Mat<T> init, bool trainable) {
  if (has(name)) throw RuntimeFailure("duplicate parameter name: " + name);
  auto p = std::make_unique<Parameter<T>>();
  p->name = name;
  p->value = std::move(init);
  p->trainable = trainable;
  p->zero_grad();
  index_[name] = params_.size();
  params_.push_back(std::move(p));
  return *params_.back();
}

template <typename T>
Parameter<T>& ParameterStore<T>::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw RuntimeFailure("unknown parameter: " + name);
  return *params_[it->second];
}

template <typename T>
const Parameter<T>& ParameterStore<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw RuntimeFailure("unknown parameter: " + name);
  return *params_[it->second];
}

template <typename T>
std::vector<Parameter<T>*> ParameterStore<T>::all() {
  std::vector<Parameter<T>*> out;
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

template <typename T>
std::vector<const Parameter<T>*> ParameterStore<T>::all() const {
  std::vector<const Parameter<T>*> out;
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

template <typename T>
std::size_t ParameterStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
  return n;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

template <typename T>
std::string ParameterStore<T>::hash() const {
  Fnv1a h;
  for (const auto& [name, i] : index_) {
    const auto& p = *params_[i];
    h.update(name);
    const std::int64_t shape[2] = {p.value.rows(), p.value.cols()};
    h.update(shape, sizeof shape);
    for (Eigen::Index j = 0; j < p.value.size(); ++j) {
      const float f = static_cast<float>(p.value.data()[j]);
      h.update(&f, sizeof f);
    }
  }
  return h.hex();
}

// ---- Tape ----

template <typename T>
Var Tape<T>::push(Mat<T> value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  requires_.push_back(0);
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Mat<T>& Tape<T>::grad_of(int id) {
  auto& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.size() == 0) n.grad.setZero(n.value.rows(), n.value.cols());
  return n.grad;
}

template <typename T>
bool Tape<T>::needs_grad(Var v) const {
  return v.valid() && requires_[static_cast<std::size_t>(v.id)] != 0;
}

template <typename T>
void Tape<T>::count(std::uint64_t macs) {
  counter_.total += macs;
  if (attention_scope_) counter_.attention += macs;
}

template <typename T>
Var Tape<T>::constant(Mat<T> value) {
  return push(std::move(value));
}

template <typename T>
Var Tape<T>::param(Parameter<T>& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return Var{it->second};
  Var v = push(p.value);
  nodes_[static_cast<std::size_t>(v.id)].param = &p;
  requires_[static_cast<std::size_t>(v.id)] = grad_enabled_ && p.trainable ? 1 : 0;
  param_nodes_[&p] = v.id;
  return v;
}

#define PROCAP_TRACK(out, ...)                                     \
  do {                                                             \
    bool any_ = false;                                             \
    for (Var in_ : {__VA_ARGS__}) any_ = any_ || needs_grad(in_);  \
    requires_[static_cast<std::size_t>((out).id)] = any_ ? 1 : 0; \
  } while (0)

template <typename T>
Var Tape<T>::matmul(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  if (A.cols() != B.rows()) throw ShapeMismatchError("matmul: inner dimensions differ");
  count(static_cast<std::uint64_t>(A.rows()) * A.cols() * B.cols());
  Mat<T> c;
  c.noalias() = A * B;
  Var out = push(std::move(c));
  PROCAP_TRACK(out, a, b);
  if (needs_grad(out)) {
    nodes_[static_cast<std::size_t>(out.id)].backward = [this, a, b, out] {
      const auto& g = nodes_[static_cast<std::size_t>(out.id)].grad;
      if (needs_grad(a)) grad_of(a.id).noalias() += g * value(b).transpose();
      if (needs_grad(b)) grad_of(b.id).noalias() += value(a).transpose() * g;
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::linear(Var x, Var w, Var b) {
  const auto& X = value(x);
  const auto& W = value(w);
  if (X.cols() != W.rows()) {
    throw ShapeMismatchError("linear: input width " + std::to_string(X.cols()) +
                             " vs weight rows " + std::to_string(W.rows()));
  }
  count(static_cast<std::uint64_t>(X.rows()) * X.cols() * W.cols());
  Mat<T> y;
  y.noalias() = X * W;
  if (b.valid()) y.rowwise() += value(b).row(0);
  Var out = push(std::move(y));
  PROCAP_TRACK(out, x, w, b);
  if (needs_grad(out)) {
    nodes_[static_cast<std::size_t>(out.id)].backward = [this, x, w, b, out] {
      const auto& g = nodes_[static_cast<std::size_t>(out.id)].grad;
      if (needs_grad(x)) grad_of(x.id).noalias() += g * value(w).transpose();
      if (needs_grad(w)) grad_of(w.id).noalias() += value(x).transpose() * g;
      if (needs_grad(b)) grad_of(b.id) += g.colwise().sum();
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::add(Var a, Var b) {
  if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols()) {
    throw ShapeMismatchError("add: shapes differ");
  }
  Var out = push(value(a) + value(b));
  PROCAP_TRACK(out, a, b);
  if (needs_grad(out)) {
    nodes_[static_cast<std::size_t>(out.id)].backward = [this, a, b, out] {
      const auto& g = nodes_[static_cast<std::size_t>(out.id)].grad;
      if (needs_grad(a)) grad_of(a.id) += g;
      if (needs_grad(b)) grad_of(b.id) += g;
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::add_row(Var x, Var row) {
  if (value(row).rows() != 1 || value(row).cols() != value(x).cols()) {
    throw ShapeMismatchError("add_row: row shape mismatch");
  }
  Mat<T> y = value(x);
  y.rowwise() += value(row).row(0);
  Var out = push(std::move(y));
  PROCAP_TRACK(out, x, row);
  if (needs_grad(out)) {
    nodes_[static_cast<std::size_t>(out.id)].backward = [this, x, row, out] {
      const auto& g = nodes_[static_cast<std::size_t>(out.id)].grad;
      if (needs_grad(x)) grad_of(x.id) += g;
      if (needs_grad(row)) grad_of(row.id) += g.colwise().sum();
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::scale(Var a, T s) {
  Var out = push(value(a) * s);
  PROCAP_TRACK(out, a);
  if (needs_grad(out)) {
    nodes_[static_cast<std::size_t>(out.id)].backward = [this, a, s, out] {
      grad_of(a.id) += nodes_[static_cast<std::size_t>(out.id)].grad * s;
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::layer_norm(Var x, Var gamma, Var beta, T eps) {
  const auto& X = value(x);
  const Eigen::Index n = X.rows(), d = X.cols();
  Mat<T> xhat(n, d);
  std::vector<T> inv_sigma(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const T mu = X.row(i).mean();
    const T var = (X.row(i).array() - mu).square().mean();
    const T is = T(1) / std::sqrt(var + eps);
    inv_sigma[static_cast<std::size_t>(i)] = is;
    xhat.row(i) = (X.row(i).array() - mu) * is;
  }
  Mat<T> y = xhat;
  y.array().rowwise() *= value(gamma).row(0).array();
  y.rowwise() += value(beta).row(0);
  Var out = push(std::move(y));
  PROCAP_TRACK(out, x, gamma, beta);
  if (needs_grad(out)) {
    nodes_[static_cast<std::size_t>(out.id)].backward =
        [this, x, gamma, beta, out, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma)] {
          const auto& g = nodes_[static_cast<std::size_t>(out.id)].grad;
          if (needs_grad(gamma)) grad_of(gamma.id) += (g.array() * xhat.array()).colwise().sum().matrix();
          if (needs_grad(beta)) grad_of(beta.id) += g.colwise().sum();
          if (needs_grad(x)) {
            Mat<T> dxhat = g;
            dxhat.array().rowwise() *= value(gamma).row(0).array();
            auto& gx = grad_of(x.id);
            for (Eigen::Index i = 0; i < dxhat.rows(); ++i) {
              const T m1 = dxhat.row(i).mean();
              const T m2 = (dxhat.row(i).array() * xhat.row(i).array()).mean();
              gx.row(i).array() += inv_sigma[static_cast<std::size_t>(i)] *
                                   (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2);
            }
          }
        };
  }
  return out;
}

template <typename T>
Var Tape<T>::gelu(Var x) {
  const T c = T(0.7978845608028654);  // sqrt(2/pi)
  const T a = T(0.044715);
  const auto& X = value(x);
  Mat<T> th = (c * (X.array() + a * X.array().cube())).tanh().matrix();
  Mat<T> y = (T(0.5) * X.array() * (T(1) + th.array())).matrix();
  Var out = push(std::move(y));
  PROCAP_TRACK(out, x);
  if (needs_grad(out)) {
    nodes_[static_cast<std::size_t>(out.id)].backward = [this, x, out, th = std::move(th), c, a] {
      const auto& g = nodes_[static_cast<std::size_t>(out.id)].grad;
      const auto& X = value(x);
      const auto dy = T(0.5) * (T(1) + th.array()) +
                      T(0.5) * X.array() * (T(1) - th.array().square()) * c *
                          (T(1) + T(3) * a * X.array().square());
      grad_of(x.id).array() += g.array() * dy;
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::attention(Var q, Var k, Var v, int heads, bool causal) {
  const auto& Q = value(q);
  const auto& K = value(k);
  const auto& V = value(v);
  const Eigen::Index n = Q.rows(), m = K.rows(), d = Q.cols();
  if (K.cols() != d || V.cols() != d || V.rows() != m) {
    throw ShapeMismatchError("attention: q/k/v shapes disagree");
  }
  if (heads < 1 || d % heads != 0) throw ShapeMismatchError("attention: heads must divide width");
  if (causal && n != m) throw ShapeMismatchError("attention: causal mask needs square scores");
  const Eigen::Index dh = d / heads;
  const T sc = T(1) / std::sqrt(static_cast<T>(dh));
  count(static_cast<std::uint64_t>(2) * n * m * d);

  auto probs = std::make_shared<std::vector<Mat<T>>>(static_cast<std::size_t>(heads));
  Mat<T> o(n, d);
  for (int h = 0; h < heads; ++h) {
    Mat<T> s;
    s.noalias() = Q.middleCols(h * dh, dh) * K.middleCols(h * dh, dh).transpose();
    s *= sc;
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::Index limit = causal ? i + 1 : m;
      T mx = -std::numeric_limits<T>::infinity();
      for (Eigen::Index j = 0; j < limit; ++j) mx = std::max(mx, s(i, j));
      T z = 0;
      for (Eigen::Index j = 0; j < m; ++j) {
        if (j < limit) {
          s(i, j) = std::exp(s(i, j) - mx);
          z += s(i, j);
        } else {
          s(i, j) = 0;
        }
      }
      s.row(i) /= z;
    }
    o.middleCols(h * dh, dh).noalias() = s * V.middleCols(h * dh, dh);
    (*probs)[static_cast<std::size_t>(h)] = std::move(s);
  }
  Var out = push(std::move(o));
  PROCAP_TRACK(out, q, k, v);
  if (needs_grad(out)) {
    nodes_[static_cast<std::size_t>(out.id)].backward = [this, q, k, v, out, probs, heads, dh, sc] {
      const auto& g = nodes_[static_cast<std::size_t>(out.id)].grad;
      const auto& Q = value(q);
      const auto& K = value(k);
      const auto& V = value(v);
      for (int h = 0; h < heads; ++h) {
        const auto& P = (*probs)[static_cast<std::size_t>(h)];
        const auto go = g.middleCols(h * dh, dh);
        if (needs_grad(v)) grad_of(v.id).middleCols(h * dh, dh).noalias() += P.transpose() * go;
        if (!needs_grad(q) && !needs_grad(k)) continue;
        Mat<T> dp;
        dp.noalias() = go * V.middleCols(h * dh, dh).transpose();
        const auto rs = (dp.array() * P.array()).rowwise().sum();
        Mat<T> ds = (P.array() * (dp.array().colwise() - rs)).matrix() * sc;
        if (needs_grad(q)) grad_of(q.id).middleCols(h * dh, dh).noalias() += ds * K.middleCols(h * dh, dh);
        if (needs_grad(k)) {
          grad_of(k.id).middleCols(h * dh, dh).noalias() += ds.transpose() * Q.middleCols(h * dh, dh);
        }
      }
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeMismatchError("concat_rows: no inputs");
  const Eigen::Index d = value(parts[0]).cols();
  Eigen::Index rows = 0;
  for (Var p : parts) {
    if (value(p).cols() != d) throw ShapeMismatchError("concat_rows: widths differ");
    rows += value(p).rows();
  }
  Mat<T> y(rows, d);
  Eigen::Index r = 0;
  for (Var p : parts) {
    y.middleRows(r, value(p).rows()) = value(p);
    r += value(p).rows();
  }
  Var out = push(std::move(y));
  bool any = false;
  for (Var p : parts) any = any || needs_grad(p);
  requires_[static_cast<std::size_t>(out.id)] = any ? 1 : 0;
  if (any) {
    nodes_[static_cast<std::size_t>(out.id)].backward = [this, parts, out] {
      const auto& g = nodes_[static_cast<std::size_t>(out.id)].grad;
      Eigen::Index r = 0;
      for (Var p : parts) {
        const Eigen::Index n = value(p).rows();
        if (needs_grad(p)) grad_of(p.id) += g.middleRows(r, n);
        r += n;
      }
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::slice_rows(Var x, int begin, int count_rows) {
  if (begin < 0 || count_rows < 0 || begin + count_rows > value(x).rows()) {
    throw ShapeMismatchError("slice_rows: range out of bounds");
  }
  Var out = push(value(x).middleRows(begin, count_rows));
  PROCAP_TRACK(out, x);
  if (needs_grad(out)) {
    nodes_[static_cast<std::size_t>(out.id)].backward = [this, x, out, begin, count_rows] {
      grad_of(x.id).middleRows(begin, count_rows) += nodes_[static_cast<std::size_t>(out.id)].grad;
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::gather_rows(Var table, const std::vector<int>& ids) {
  const auto& E = value(table);
  Mat<T> y(static_cast<Eigen::Index>(ids.size()), E.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= E.rows()) {
      throw ShapeMismatchError("gather_rows: index " + std::to_string(ids[i]) + " out of range");
    }
    y.row(static_cast<Eigen::Index>(i)) = E.row(ids[i]);
  }
  Var out = push(std::move(y));
  PROCAP_TRACK(out, table);
  if (needs_grad(out)) {
    nodes_[static_cast<std::size_t>(out.id)].backward = [this, table, ids, out] {
      const auto& g = nodes_[static_cast<std::size_t>(out.id)].grad;
      auto& ge = grad_of(table.id);
      for (std::size_t i = 0; i < ids.size(); ++i) ge.row(ids[i]) += g.row(static_cast<Eigen::Index>(i));
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::replace_rows(Var x, Var row, const std::vector<std::uint8_t>& flags) {
  const auto& X = value(x);
  if (static_cast<Eigen::Index>(flags.size()) != X.rows()) {
    throw ShapeMismatchError("replace_rows: flag count differs from row count");
  }
  if (value(row).rows() != 1 || value(row).cols() != X.cols()) {
    throw ShapeMismatchError("replace_rows: replacement row shape mismatch");
  }
  Mat<T> y = X;
  for (std::size_t i = 0; i < flags.size(); ++i) {
    if (flags[i]) y.row(static_cast<Eigen::Index>(i)) = value(row).row(0);
  }
  Var out = push(std::move(y));
  PROCAP_TRACK(out, x, row);
  if (needs_grad(out)) {
    nodes_[static_cast<std::size_t>(out.id)].backward = [this, x, row, flags, out] {
      const auto& g = nodes_[static_cast<std::size_t>(out.id)].grad;
      for (std::size_t i = 0; i < flags.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        if (flags[i]) {
          if (needs_grad(row)) grad_of(row.id).row(0) += g.row(r);
        } else if (needs_grad(x)) {
          grad_of(x.id).row(r) += g.row(r);
        }
      }
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::cross_entropy(Var logits, const std::vector<int>& targets) {
  const auto& L = value(logits);
  if (static_cast<Eigen::Index>(targets.size()) != L.rows() || targets.empty()) {
    throw ShapeMismatchError("cross_entropy: target count differs from logit rows");
  }
  const Eigen::Index n = L.rows();
  Mat<T> soft(n, L.cols());
  T total = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int t = targets[static_cast<std::size_t>(i)];
    if (t < 0 || t >= L.cols()) throw ShapeMismatchError("cross_entropy: target out of range");
    const T mx = L.row(i).maxCoeff();
    soft.row(i) = (L.row(i).array() - mx).exp().matrix();
    const T z = soft.row(i).sum();
    soft.row(i) /= z;
    total += mx + std::log(z) - L(i, t);
  }
  Mat<T> y(1, 1);
  y(0, 0) = total / static_cast<T>(n);
  Var out = push(std::move(y));
  PROCAP_TRACK(out, logits);
  if (needs_grad(out)) {
    nodes_[static_cast<std::size_t>(out.id)].backward = [this, logits, targets, out,
                                                         soft = std::move(soft)] {
      const T g = nodes_[static_cast<std::size_t>(out.id)].grad(0, 0) / static_cast<T>(soft.rows());
      auto& gl = grad_of(logits.id);
      gl += soft * g;
      for (std::size_t i = 0; i < targets.size(); ++i) gl(static_cast<Eigen::Index>(i), targets[i]) -= g;
    };
  }
  return out;
}

namespace {
template <typename T>
T softplus(T x) {
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}
template <typename T>
T sigmoid(T x) {
  return x >= 0 ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}
}  // namespace

template <typename T>
Var Tape<T>::binary_cross_entropy(Var logit, int label) {
  const auto& Z = value(logit);
  if (Z.rows() != 1 || Z.cols() != 1) throw ShapeMismatchError("binary_cross_entropy: expects 1x1");
  const T z = Z(0, 0);
  Mat<T> y(1, 1);
  y(0, 0) = label ? softplus(-z) : softplus(z);
  Var out = push(std::move(y));
  PROCAP_TRACK(out, logit);
  if (needs_grad(out)) {
    nodes_[static_cast<std::size_t>(out.id)].backward = [this, logit, label, z, out] {
      const T g = nodes_[static_cast<std::size_t>(out.id)].grad(0, 0);
      grad_of(logit.id)(0, 0) += g * (sigmoid(z) - (label ? T(1) : T(0)));
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::sum(const std::vector<Var>& scalars) {
  Mat<T> y = Mat<T>::Zero(1, 1);
  bool any = false;
  for (Var s : scalars) {
    if (value(s).size() != 1) throw ShapeMismatchError("sum: expects 1x1 terms");
    y(0, 0) += value(s)(0, 0);
    any = any || needs_grad(s);
  }
  Var out = push(std::move(y));
  requires_[static_cast<std::size_t>(out.id)] = any ? 1 : 0;
  if (any) {
    nodes_[static_cast<std::size_t>(out.id)].backward = [this, scalars, out] {
      const T g = nodes_[static_cast<std::size_t>(out.id)].grad(0, 0);
      for (Var s : scalars) {
        if (needs_grad(s)) grad_of(s.id)(0, 0) += g;
      }
    };
  }
  return out;
}

template <typename T>
void Tape<T>::backward(Var loss) {
  if (!grad_enabled_) throw RuntimeFailure("backward called on a no-grad tape");
  if (value(loss).size() != 1) throw ShapeMismatchError("backward: loss must be a scalar");
  if (!needs_grad(loss)) return;
  grad_of(loss.id)(0, 0) += T(1);
  for (int i = loss.id; i >= 0; --i) {
    auto& n = nodes_[static_cast<std::size_t>(i)];
    if (n.grad.size() == 0) continue;
    if (n.backward) n.backward();
    if (n.param != nullptr) n.param->grad += n.grad;
  }
}

#undef PROCAP_TRACK

template class ParameterStore<float>;
template class ParameterStore<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace procap::ag
