#include "gptgnn/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gptgnn/errors.hpp"

namespace gptgnn {

// ---------------------------------------------------------------------------
// ParameterStore

Parameter& ParameterStore::add(const std::string& name, int rows, int cols, Init init, Rng* rng) {
  Tensor v = Tensor::matrix(rows, cols);
  switch (init) {
    case Init::Zeros:
      break;
    case Init::Identity:
      for (int i = 0; i < std::min(rows, cols); ++i) v(i, i) = 1.0f;
      break;
    case Init::Glorot: {
      if (rng == nullptr) throw Error("glorot init of '" + name + "' needs an rng");
      const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
      for (auto& x : v.values()) x = static_cast<float>(rng->uniform(-bound, bound));
      break;
    }
  }
  return add(name, std::move(v));
}

Parameter& ParameterStore::add(const std::string& name, Tensor value) {
  if (index_.contains(name)) throw Error("duplicate parameter name '" + name + "'");
  Parameter p;
  p.name = name;
  p.grad = Tensor(value.shape());
  p.m1 = Tensor(value.shape());
  p.m2 = Tensor(value.shape());
  p.value = std::move(value);
  index_[name] = params_.size();
  params_.push_back(std::move(p));
  return params_.back();
}

Parameter& ParameterStore::get(const std::string& name) {
  auto* p = find(name);
  if (p == nullptr) throw Error("no parameter named '" + name + "'");
  return *p;
}

const Parameter& ParameterStore::get(const std::string& name) const {
  const auto* p = find(name);
  if (p == nullptr) throw Error("no parameter named '" + name + "'");
  return *p;
}

Parameter* ParameterStore::find(const std::string& name) {
  const auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

const Parameter* ParameterStore::find(const std::string& name) const {
  const auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.grad.fill(0.0f);
}

std::size_t ParameterStore::num_values() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

// ---------------------------------------------------------------------------
// Tape

Var Tape::constant(Tensor value) {
  nodes_.push_back({std::move(value), {}, false, nullptr, nullptr});
  return {static_cast<int>(nodes_.size() - 1)};
}

Var Tape::leaf(Tensor value) {
  nodes_.push_back({std::move(value), {}, true, nullptr, nullptr});
  return {static_cast<int>(nodes_.size() - 1)};
}

Var Tape::param(Parameter& p) {
  nodes_.push_back({p.value, {}, true, nullptr, &p});
  return {static_cast<int>(nodes_.size() - 1)};
}

Tensor Tape::grad(Var v) const {
  const auto& n = nodes_[v.id];
  if (n.grad.empty() && !n.value.empty()) return Tensor(n.value.shape());
  return n.grad;
}

Tensor& Tape::grad_buffer(Var v) {
  auto& n = nodes_[v.id];
  if (n.grad.empty() && !n.value.empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

Var Tape::record(Tensor value, std::initializer_list<Var> parents, Backward backward) {
  return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(backward));
}

Var Tape::record(Tensor value, std::span<const Var> parents, Backward backward) {
  bool rg = false;
  for (const Var p : parents) rg = rg || nodes_[p.id].requires_grad;
  nodes_.push_back({std::move(value), {}, rg, rg ? std::move(backward) : nullptr, nullptr});
  return {static_cast<int>(nodes_.size() - 1)};
}

void Tape::backward(Var loss) {
  if (nodes_[loss.id].value.size() != 1)
    throw NotScalar("backward from a value of shape " + shape_string(nodes_[loss.id].value.shape()));
  if (!nodes_[loss.id].requires_grad) return;
  grad_buffer(loss)[0] = 1.0f;
  for (int id = loss.id; id >= 0; --id) {
    auto& n = nodes_[id];
    if (n.grad.empty()) continue;
    // Rules only write into their parents' buffers, and no node is appended
    // during backward, so n stays valid.
    if (n.backward) n.backward(*this, n.grad);
    if (n.param != nullptr) {
      auto& pg = n.param->grad;
      const auto& g = n.grad;
      for (std::size_t k = 0; k < g.size(); ++k) pg[k] += g[k];
    }
  }
}

// ---------------------------------------------------------------------------
// Kernels

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

// c[n x m] += a[n x k] * b[k x m]
void gemm_nn(const float* a, const float* b, float* c, int n, int k, int m) {
  for (int i = 0; i < n; ++i) {
    float* ci = c + static_cast<std::size_t>(i) * m;
    const float* ai = a + static_cast<std::size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const float av = ai[p];
      if (av == 0.0f) continue;
      const float* bp = b + static_cast<std::size_t>(p) * m;
      for (int j = 0; j < m; ++j) ci[j] += av * bp[j];
    }
  }
}

// c[n x k] += g[n x m] * b[k x m]^T
void gemm_nt(const float* g, const float* b, float* c, int n, int m, int k) {
  for (int i = 0; i < n; ++i) {
    const float* gi = g + static_cast<std::size_t>(i) * m;
    float* ci = c + static_cast<std::size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const float* bp = b + static_cast<std::size_t>(p) * m;
      float s = 0.0f;
      for (int j = 0; j < m; ++j) s += gi[j] * bp[j];
      ci[p] += s;
    }
  }
}

// c[k x m] += a[n x k]^T * g[n x m]
void gemm_tn(const float* a, const float* g, float* c, int n, int k, int m) {
  for (int i = 0; i < n; ++i) {
    const float* ai = a + static_cast<std::size_t>(i) * k;
    const float* gi = g + static_cast<std::size_t>(i) * m;
    for (int p = 0; p < k; ++p) {
      const float av = ai[p];
      if (av == 0.0f) continue;
      float* cp = c + static_cast<std::size_t>(p) * m;
      for (int j = 0; j < m; ++j) cp[j] += av * gi[j];
    }
  }
}

template <typename F>
Var unary(Tape& t, Var a, F f, std::function<float(float)> dydx) {
  const Tensor& x = t.value(a);
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return t.record(std::move(y), {a}, [a, dydx](Tape& t, const Tensor& g) {
    if (!t.requires_grad(a)) return;
    const Tensor& x = t.value(a);
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += g[i] * dydx(x[i]);
  });
}

void check_index(const Index& idx, int bound, const char* op) {
  for (auto i : idx)
    if (i < 0 || i >= bound)
      throw ShapeError(std::string(op) + ": index " + std::to_string(i) + " out of range " + std::to_string(bound));
}

}  // namespace

namespace ops {

Var matmul(Tape& t, Var a, Var b) {
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  require(A.cols() == B.rows(), "matmul: " + shape_string(A.shape()) + " * " + shape_string(B.shape()));
  const int n = A.rows(), k = A.cols(), m = B.cols();
  Tensor C = Tensor::matrix(n, m);
  gemm_nn(A.data(), B.data(), C.data(), n, k, m);
  return t.record(std::move(C), {a, b}, [a, b, n, k, m](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) gemm_nt(g.data(), t.value(b).data(), t.grad_buffer(a).data(), n, m, k);
    if (t.requires_grad(b)) gemm_tn(t.value(a).data(), g.data(), t.grad_buffer(b).data(), n, k, m);
  });
}

Var add(Tape& t, Var a, Var b) {
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  require(A.rows() == B.rows() && A.cols() == B.cols(),
          "add: " + shape_string(A.shape()) + " + " + shape_string(B.shape()));
  Tensor C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C[i] += B[i];
  return t.record(std::move(C), {a, b}, [a, b](Tape& t, const Tensor& g) {
    for (Var v : {a, b}) {
      if (!t.requires_grad(v)) continue;
      Tensor& gv = t.grad_buffer(v);
      for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
    }
  });
}

Var add_row(Tape& t, Var a, Var bias) {
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(bias);
  require(B.rows() == 1 && B.cols() == A.cols(),
          "add_row: " + shape_string(A.shape()) + " + " + shape_string(B.shape()));
  Tensor C = A;
  const int n = A.rows(), m = A.cols();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) C(i, j) += B[j];
  return t.record(std::move(C), {a, bias}, [a, bias, n, m](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) {
      Tensor& ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(bias)) {
      Tensor& gb = t.grad_buffer(bias);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) gb[j] += g(i, j);
    }
  });
}

Var sub(Tape& t, Var a, Var b) {
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  require(A.rows() == B.rows() && A.cols() == B.cols(),
          "sub: " + shape_string(A.shape()) + " - " + shape_string(B.shape()));
  Tensor C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C[i] -= B[i];
  return t.record(std::move(C), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) {
      Tensor& ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Tape& t, Var a, Var b) {
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  require(A.rows() == B.rows() && A.cols() == B.cols(),
          "mul: " + shape_string(A.shape()) + " * " + shape_string(B.shape()));
  Tensor C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C[i] *= B[i];
  return t.record(std::move(C), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) {
      const Tensor& B = t.value(b);
      Tensor& ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * B[i];
    }
    if (t.requires_grad(b)) {
      const Tensor& A = t.value(a);
      Tensor& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * A[i];
    }
  });
}

Var scale(Tape& t, Var a, float s) {
  Tensor C = t.value(a);
  for (auto& v : C.values()) v *= s;
  return t.record(std::move(C), {a}, [a, s](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

Var scale_rows(Tape& t, Var a, std::vector<float> coeff) {
  const Tensor& A = t.value(a);
  require(static_cast<int>(coeff.size()) == A.rows(), "scale_rows: coefficient count mismatch");
  Tensor C = A;
  const int n = A.rows(), m = A.cols();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) C(i, j) *= coeff[i];
  return t.record(std::move(C), {a}, [a, coeff = std::move(coeff), n, m](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) ga(i, j) += coeff[i] * g(i, j);
  });
}

Var row_gather(Tape& t, Var a, Index idx) {
  const Tensor& A = t.value(a);
  check_index(idx, A.rows(), "row_gather");
  const int m = A.cols();
  Tensor C = Tensor::matrix(static_cast<int>(idx.size()), m);
  for (std::size_t k = 0; k < idx.size(); ++k) std::copy_n(A.data() + static_cast<std::size_t>(idx[k]) * m, m, C.data() + k * m);
  return t.record(std::move(C), {a}, [a, idx = std::move(idx), m](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      float* dst = ga.data() + static_cast<std::size_t>(idx[k]) * m;
      const float* src = g.data() + k * m;
      for (int j = 0; j < m; ++j) dst[j] += src[j];
    }
  });
}

Var row_scatter_add(Tape& t, Var a, Index idx, int rows) {
  const Tensor& A = t.value(a);
  require(static_cast<int>(idx.size()) == A.rows(), "row_scatter_add: index count mismatch");
  check_index(idx, rows, "row_scatter_add");
  const int m = A.cols();
  Tensor C = Tensor::matrix(rows, m);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    float* dst = C.data() + static_cast<std::size_t>(idx[k]) * m;
    const float* src = A.data() + k * m;
    for (int j = 0; j < m; ++j) dst[j] += src[j];
  }
  return t.record(std::move(C), {a}, [a, idx = std::move(idx), m](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const float* src = g.data() + static_cast<std::size_t>(idx[k]) * m;
      float* dst = ga.data() + k * m;
      for (int j = 0; j < m; ++j) dst[j] += src[j];
    }
  });
}

Var relu(Tape& t, Var a) {
  return unary(t, a, [](float x) { return x > 0.0f ? x : 0.0f; },
               [](float x) { return x > 0.0f ? 1.0f : 0.0f; });
}

Var tanh(Tape& t, Var a) {
  return unary(t, a, [](float x) { return std::tanh(x); },
               [](float x) {
                 const float y = std::tanh(x);
                 return 1.0f - y * y;
               });
}

Var exp(Tape& t, Var a) {
  return unary(t, a, [](float x) { return std::exp(x); }, [](float x) { return std::exp(x); });
}

Var log(Tape& t, Var a) {
  return unary(t, a, [](float x) { return std::log(x); }, [](float x) { return 1.0f / x; });
}

Var softmax_rows(Tape& t, Var a) {
  const Tensor& A = t.value(a);
  const int n = A.rows(), m = A.cols();
  Tensor Y = A;
  for (int i = 0; i < n; ++i) {
    auto r = Y.row(i);
    const float mx = *std::max_element(r.begin(), r.end());
    float s = 0.0f;
    for (auto& v : r) s += (v = std::exp(v - mx));
    for (auto& v : r) v /= s;
  }
  Tensor saved = Y;
  return t.record(std::move(Y), {a}, [a, y = std::move(saved), n, m](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (int i = 0; i < n; ++i) {
      float dot = 0.0f;
      for (int j = 0; j < m; ++j) dot += g(i, j) * y(i, j);
      for (int j = 0; j < m; ++j) ga(i, j) += y(i, j) * (g(i, j) - dot);
    }
  });
}

Var log_softmax_rows(Tape& t, Var a) {
  const Tensor& A = t.value(a);
  const int n = A.rows(), m = A.cols();
  Tensor Y = A;
  for (int i = 0; i < n; ++i) {
    auto r = Y.row(i);
    const float mx = *std::max_element(r.begin(), r.end());
    float s = 0.0f;
    for (float v : r) s += std::exp(v - mx);
    const float lse = mx + std::log(s);
    for (auto& v : r) v -= lse;
  }
  Tensor saved = Y;
  return t.record(std::move(Y), {a}, [a, y = std::move(saved), n, m](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (int i = 0; i < n; ++i) {
      float gs = 0.0f;
      for (int j = 0; j < m; ++j) gs += g(i, j);
      for (int j = 0; j < m; ++j) ga(i, j) += g(i, j) - std::exp(y(i, j)) * gs;
    }
  });
}

Var concat_rows(Tape& t, std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const int m = t.value(parts[0]).cols();
  int n = 0;
  for (Var p : parts) {
    require(t.value(p).cols() == m, "concat_rows: column mismatch");
    n += t.value(p).rows();
  }
  Tensor C = Tensor::matrix(n, m);
  std::size_t off = 0;
  for (Var p : parts) {
    const Tensor& P = t.value(p);
    std::copy_n(P.data(), P.size(), C.data() + off);
    off += P.size();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return t.record(std::move(C), parts, [ps](Tape& t, const Tensor& g) {
    std::size_t off = 0;
    for (Var p : ps) {
      const std::size_t sz = t.value(p).size();
      if (t.requires_grad(p)) {
        Tensor& gp = t.grad_buffer(p);
        for (std::size_t i = 0; i < sz; ++i) gp[i] += g[off + i];
      }
      off += sz;
    }
  });
}

Var mean_rows(Tape& t, Var a) {
  const Tensor& A = t.value(a);
  const int n = A.rows(), m = A.cols();
  require(n > 0, "mean_rows: empty input");
  Tensor C = Tensor::matrix(1, m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) C[j] += A(i, j);
  for (auto& v : C.values()) v /= static_cast<float>(n);
  return t.record(std::move(C), {a}, [a, n, m](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    const float inv = 1.0f / static_cast<float>(n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) ga(i, j) += g[j] * inv;
  });
}

Var row_sum(Tape& t, Var a) {
  const Tensor& A = t.value(a);
  const int n = A.rows(), m = A.cols();
  Tensor C = Tensor::matrix(n, 1);
  for (int i = 0; i < n; ++i) {
    float s = 0.0f;
    for (int j = 0; j < m; ++j) s += A(i, j);
    C[i] = s;
  }
  return t.record(std::move(C), {a}, [a, n, m](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) ga(i, j) += g[i];
  });
}

Var sum_all(Tape& t, Var a) {
  const Tensor& A = t.value(a);
  double s = 0.0;
  for (float v : A.values()) s += v;
  return t.record(Tensor::scalar(static_cast<float>(s)), {a}, [a](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (auto& v : ga.values()) v += g[0];
  });
}

Var mean_all(Tape& t, Var a) {
  const std::size_t n = t.value(a).size();
  require(n > 0, "mean_all: empty input");
  return scale(t, sum_all(t, a), 1.0f / static_cast<float>(n));
}

Var l2_norm_rows(Tape& t, Var a) {
  const Tensor& A = t.value(a);
  const int n = A.rows(), m = A.cols();
  Tensor C = Tensor::matrix(n, 1);
  for (int i = 0; i < n; ++i) {
    float s = 0.0f;
    for (int j = 0; j < m; ++j) s += A(i, j) * A(i, j);
    C[i] = std::sqrt(s);
  }
  Tensor norms = C;
  return t.record(std::move(C), {a}, [a, norms = std::move(norms), n, m](Tape& t, const Tensor& g) {
    const Tensor& A = t.value(a);
    Tensor& ga = t.grad_buffer(a);
    for (int i = 0; i < n; ++i) {
      if (norms[i] == 0.0f) continue;
      const float f = g[i] / norms[i];
      for (int j = 0; j < m; ++j) ga(i, j) += f * A(i, j);
    }
  });
}

Var segment_softmax(Tape& t, Var scores, Index segment, int num_segments) {
  const Tensor& S = t.value(scores);
  const int e = S.rows(), h = S.cols();
  require(static_cast<int>(segment.size()) == e, "segment_softmax: segment count mismatch");
  check_index(segment, num_segments, "segment_softmax");
  const float ninf = -std::numeric_limits<float>::infinity();
  std::vector<float> mx(static_cast<std::size_t>(num_segments) * h, ninf);
  for (int r = 0; r < e; ++r)
    for (int c = 0; c < h; ++c) {
      float& m = mx[static_cast<std::size_t>(segment[r]) * h + c];
      m = std::max(m, S(r, c));
    }
  Tensor Y = Tensor::matrix(e, h);
  std::vector<float> den(mx.size(), 0.0f);
  for (int r = 0; r < e; ++r)
    for (int c = 0; c < h; ++c) {
      const std::size_t k = static_cast<std::size_t>(segment[r]) * h + c;
      const float v = S(r, c) == ninf ? 0.0f : std::exp(S(r, c) - mx[k]);
      Y(r, c) = v;
      den[k] += v;
    }
  for (int r = 0; r < e; ++r)
    for (int c = 0; c < h; ++c) Y(r, c) /= den[static_cast<std::size_t>(segment[r]) * h + c];
  Tensor saved = Y;
  return t.record(std::move(Y), {scores},
                  [scores, y = std::move(saved), segment = std::move(segment), num_segments, e, h](
                      Tape& t, const Tensor& g) {
                    std::vector<float> dot(static_cast<std::size_t>(num_segments) * h, 0.0f);
                    for (int r = 0; r < e; ++r)
                      for (int c = 0; c < h; ++c)
                        dot[static_cast<std::size_t>(segment[r]) * h + c] += g(r, c) * y(r, c);
                    Tensor& gs = t.grad_buffer(scores);
                    for (int r = 0; r < e; ++r)
                      for (int c = 0; c < h; ++c)
                        gs(r, c) += y(r, c) * (g(r, c) - dot[static_cast<std::size_t>(segment[r]) * h + c]);
                  });
}

Var segment_logsumexp(Tape& t, Var scores, Index segment, int num_segments) {
  const Tensor& S = t.value(scores);
  require(S.cols() == 1, "segment_logsumexp: expects a column vector");
  const int m = S.rows();
  require(static_cast<int>(segment.size()) == m, "segment_logsumexp: segment count mismatch");
  check_index(segment, num_segments, "segment_logsumexp");
  std::vector<float> mx(num_segments, -std::numeric_limits<float>::infinity());
  for (int r = 0; r < m; ++r) mx[segment[r]] = std::max(mx[segment[r]], S[r]);
  std::vector<double> sum(num_segments, 0.0);
  std::vector<int> count(num_segments, 0);
  for (int r = 0; r < m; ++r) {
    sum[segment[r]] += std::exp(static_cast<double>(S[r] - mx[segment[r]]));
    ++count[segment[r]];
  }
  Tensor L = Tensor::matrix(num_segments, 1);
  for (int s = 0; s < num_segments; ++s) {
    require(count[s] > 0, "segment_logsumexp: empty segment " + std::to_string(s));
    L[s] = mx[s] + static_cast<float>(std::log(sum[s]));
  }
  Tensor lse = L;
  return t.record(std::move(L), {scores},
                  [scores, lse = std::move(lse), segment = std::move(segment), m](Tape& t, const Tensor& g) {
                    const Tensor& S = t.value(scores);
                    Tensor& gs = t.grad_buffer(scores);
                    for (int r = 0; r < m; ++r) gs[r] += g[segment[r]] * std::exp(S[r] - lse[segment[r]]);
                  });
}

Var head_dot(Tape& t, Var a, Var b, int heads) {
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  require(A.rows() == B.rows() && A.cols() == B.cols(), "head_dot: shape mismatch");
  require(heads > 0 && A.cols() % heads == 0, "head_dot: width not divisible by heads");
  const int e = A.rows(), d = A.cols(), dk = d / heads;
  Tensor C = Tensor::matrix(e, heads);
  for (int r = 0; r < e; ++r)
    for (int h = 0; h < heads; ++h) {
      float s = 0.0f;
      for (int j = h * dk; j < (h + 1) * dk; ++j) s += A(r, j) * B(r, j);
      C(r, h) = s;
    }
  return t.record(std::move(C), {a, b}, [a, b, e, heads, dk](Tape& t, const Tensor& g) {
    for (auto [x, y] : {std::pair{a, b}, std::pair{b, a}}) {
      if (!t.requires_grad(x)) continue;
      const Tensor& Y = t.value(y);
      Tensor& gx = t.grad_buffer(x);
      for (int r = 0; r < e; ++r)
        for (int h = 0; h < heads; ++h) {
          const float gv = g(r, h);
          for (int j = h * dk; j < (h + 1) * dk; ++j) gx(r, j) += gv * Y(r, j);
        }
    }
  });
}

Var head_scale(Tape& t, Var v, Var w, int heads) {
  const Tensor& V = t.value(v);
  const Tensor& W = t.value(w);
  require(V.rows() == W.rows() && W.cols() == heads, "head_scale: shape mismatch");
  require(heads > 0 && V.cols() % heads == 0, "head_scale: width not divisible by heads");
  const int e = V.rows(), dk = V.cols() / heads;
  Tensor C = V;
  for (int r = 0; r < e; ++r)
    for (int h = 0; h < heads; ++h)
      for (int j = h * dk; j < (h + 1) * dk; ++j) C(r, j) *= W(r, h);
  return t.record(std::move(C), {v, w}, [v, w, e, heads, dk](Tape& t, const Tensor& g) {
    if (t.requires_grad(v)) {
      const Tensor& W = t.value(w);
      Tensor& gv = t.grad_buffer(v);
      for (int r = 0; r < e; ++r)
        for (int h = 0; h < heads; ++h)
          for (int j = h * dk; j < (h + 1) * dk; ++j) gv(r, j) += g(r, j) * W(r, h);
    }
    if (t.requires_grad(w)) {
      const Tensor& V = t.value(v);
      Tensor& gw = t.grad_buffer(w);
      for (int r = 0; r < e; ++r)
        for (int h = 0; h < heads; ++h) {
          float s = 0.0f;
          for (int j = h * dk; j < (h + 1) * dk; ++j) s += g(r, j) * V(r, j);
          gw(r, h) += s;
        }
    }
  });
}

Var row_pair_dot(Tape& t, Var a, Var b, Index ia, Index ib) {
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  require(A.cols() == B.cols(), "row_pair_dot: width mismatch");
  require(ia.size() == ib.size(), "row_pair_dot: index length mismatch");
  check_index(ia, A.rows(), "row_pair_dot");
  check_index(ib, B.rows(), "row_pair_dot");
  const int d = A.cols();
  const int n = static_cast<int>(ia.size());
  Tensor C = Tensor::matrix(n, 1);
  for (int k = 0; k < n; ++k) {
    const float* x = A.data() + static_cast<std::size_t>(ia[k]) * d;
    const float* y = B.data() + static_cast<std::size_t>(ib[k]) * d;
    float s = 0.0f;
    for (int j = 0; j < d; ++j) s += x[j] * y[j];
    C[k] = s;
  }
  return t.record(std::move(C), {a, b},
                  [a, b, ia = std::move(ia), ib = std::move(ib), d, n](Tape& t, const Tensor& g) {
                    const bool ra = t.requires_grad(a), rb = t.requires_grad(b);
                    const Tensor& A = t.value(a);
                    const Tensor& B = t.value(b);
                    float* ga = ra ? t.grad_buffer(a).data() : nullptr;
                    float* gb = rb ? t.grad_buffer(b).data() : nullptr;
                    for (int k = 0; k < n; ++k) {
                      const float gv = g[k];
                      if (ra) {
                        float* dst = ga + static_cast<std::size_t>(ia[k]) * d;
                        const float* y = B.data() + static_cast<std::size_t>(ib[k]) * d;
                        for (int j = 0; j < d; ++j) dst[j] += gv * y[j];
                      }
                      if (rb) {
                        float* dst = gb + static_cast<std::size_t>(ib[k]) * d;
                        const float* x = A.data() + static_cast<std::size_t>(ia[k]) * d;
                        for (int j = 0; j < d; ++j) dst[j] += gv * x[j];
                      }
                    }
                  });
}

Var pick(Tape& t, Var a, Index col) {
  const Tensor& A = t.value(a);
  require(static_cast<int>(col.size()) == A.rows(), "pick: one column per row required");
  check_index(col, A.cols(), "pick");
  const int n = A.rows();
  Tensor C = Tensor::matrix(n, 1);
  for (int r = 0; r < n; ++r) C[r] = A(r, col[r]);
  return t.record(std::move(C), {a}, [a, col = std::move(col), n](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (int r = 0; r < n; ++r) ga(r, col[r]) += g[r];
  });
}

}  // namespace ops

}  // namespace gptgnn
