#pragma once

// Dense-tensor substrate with tape-based reverse-mode differentiation.
// Every learnable module in the pipeline is built on these primitives.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "idnerf/common.hpp"
#include "idnerf/random.hpp"

namespace idnerf {

enum class DType : uint8_t { f64 = 0, f32 = 1 };

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

struct TensorData {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until touched by backward
  bool requires_grad = false;
  DType dtype = DType::f64;
  int64_t node_id = -1;  // position on the recording tape, -1 for leaves
};

// Storage is always double; f32 tensors round every op result through float
// so the numerics are genuinely single precision while the code stays uniform.
inline void apply_dtype(std::vector<double>& v, DType dt) {
  if (dt == DType::f32)
    for (double& x : v) x = static_cast<double>(static_cast<float>(x));
}

class Tensor {
 public:
  Tensor() : p_(std::make_shared<TensorData>()) {}
  explicit Tensor(std::shared_ptr<TensorData> p) : p_(std::move(p)) {}

  static Tensor zeros(const Shape& s, DType dt = DType::f64) {
    Tensor t;
    t.p_->shape = s;
    t.p_->values.assign(shape_numel(s), 0.0);
    t.p_->dtype = dt;
    return t;
  }
  static Tensor full(const Shape& s, double v, DType dt = DType::f64) {
    Tensor t = zeros(s, dt);
    std::fill(t.p_->values.begin(), t.p_->values.end(), v);
    apply_dtype(t.p_->values, dt);
    return t;
  }
  static Tensor from(const Shape& s, std::vector<double> v,
                     DType dt = DType::f64) {
    check(static_cast<int64_t>(v.size()) == shape_numel(s),
          "Tensor::from: data length " + std::to_string(v.size()) +
              " does not match shape " + shape_str(s));
    Tensor t;
    t.p_->shape = s;
    t.p_->values = std::move(v);
    t.p_->dtype = dt;
    apply_dtype(t.p_->values, dt);
    return t;
  }
  static Tensor scalar(double v, DType dt = DType::f64) {
    return from({}, {v}, dt);
  }
  // Fan-in uniform init, uniform(-s, s) with s = sqrt(1 / fan_in).
  static Tensor rand_init(const Shape& s, int64_t fan_in, Rng& rng,
                          DType dt = DType::f64) {
    Tensor t = zeros(s, dt);
    double b = std::sqrt(1.0 / static_cast<double>(std::max<int64_t>(fan_in, 1)));
    for (double& x : t.p_->values) x = rng.uniform(-b, b);
    apply_dtype(t.p_->values, dt);
    return t;
  }
  static Tensor randn(const Shape& s, Rng& rng, DType dt = DType::f64) {
    Tensor t = zeros(s, dt);
    for (double& x : t.p_->values) x = rng.normal();
    apply_dtype(t.p_->values, dt);
    return t;
  }

  const Shape& shape() const { return p_->shape; }
  int64_t numel() const { return static_cast<int64_t>(p_->values.size()); }
  int64_t rank() const { return static_cast<int64_t>(p_->shape.size()); }
  std::vector<double>& values() { return p_->values; }
  const std::vector<double>& values() const { return p_->values; }
  std::vector<double>& grad() { return p_->grad; }
  const std::vector<double>& grad() const { return p_->grad; }
  bool has_grad() const { return !p_->grad.empty(); }
  DType dtype() const { return p_->dtype; }
  bool defined() const { return !p_->shape.empty() || !p_->values.empty(); }

  double item() const {
    check(numel() == 1, "item(): tensor has " + std::to_string(numel()) +
                            " elements, expected 1");
    return p_->values[0];
  }

  bool requires_grad() const { return p_->requires_grad; }
  Tensor& set_requires_grad(bool rg = true) {
    p_->requires_grad = rg;
    return *this;
  }
  void zero_grad() { p_->grad.assign(p_->values.size(), 0.0); }
  void ensure_grad() {
    if (p_->grad.size() != p_->values.size())
      p_->grad.assign(p_->values.size(), 0.0);
  }

  std::shared_ptr<TensorData> ptr() const { return p_; }

 private:
  std::shared_ptr<TensorData> p_;
};

// ---------------------------------------------------------------------------
// Tape

struct TapeEntry {
  std::vector<std::shared_ptr<TensorData>> inputs;
  std::shared_ptr<TensorData> output;
  std::function<void()> backward;  // pulls output->grad into input grads
};

class Tape {
 public:
  // RAII activation; ops record onto the innermost active tape.
  class Scope {
   public:
    explicit Scope(Tape& t) : prev_(active_) { active_ = &t; }
    ~Scope() { active_ = prev_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* prev_;
  };

  static Tape* active() { return active_; }

  void record(TapeEntry e) {
    e.output->node_id = static_cast<int64_t>(entries_.size());
    entries_.push_back(std::move(e));
  }

  size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  void clear() { entries_.clear(); }

  // Reverse sweep from a scalar loss. Gradients accumulate into every
  // reachable tensor with requires_grad (leaves keep theirs across calls
  // until zero_grad). Intermediate grads are scoped to this call.
  void backward(const Tensor& loss, bool retain = false) {
    check(loss.numel() == 1, "backward: loss must be scalar, got shape " +
                                 shape_str(loss.shape()));
    check(!entries_.empty(), "backward: tape is empty");
    // Grad buffers of intermediates are (re)zeroed so a second replay is
    // bit-identical; leaf parameter grads are left to accumulate.
    for (auto& e : entries_) e.output->grad.assign(e.output->values.size(), 0.0);
    loss.ptr()->grad.assign(1, 1.0);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (it->output->grad.empty()) continue;
      for (auto& in : it->inputs)
        if (in->grad.size() != in->values.size())
          in->grad.assign(in->values.size(), 0.0);
      it->backward();
    }
    if (!retain) clear();
  }

 private:
  static thread_local Tape* active_;
  std::vector<TapeEntry> entries_;
};

inline thread_local Tape* Tape::active_ = nullptr;

namespace detail {

inline DType result_dtype(std::initializer_list<Tensor> ins) {
  for (const auto& t : ins)
    if (t.dtype() == DType::f64) return DType::f64;
  return DType::f32;
}

// Finalize an op: dtype rounding, grad flagging, tape recording.
inline Tensor make_result(Tensor out, std::vector<Tensor> inputs,
                          std::function<void()> bwd) {
  apply_dtype(out.values(), out.dtype());
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  out.set_requires_grad(needs);
  Tape* tape = Tape::active();
  if (needs && tape) {
    TapeEntry e;
    for (auto& in : inputs) e.inputs.push_back(in.ptr());
    e.output = out.ptr();
    e.backward = std::move(bwd);
    tape->record(std::move(e));
  }
  return out;
}

// Row-major strides, with stride 0 on broadcast (extent-1) axes after
// left-padding to the output rank.
inline std::vector<int64_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<int64_t> st(out.size(), 0);
  int64_t stride = 1;
  int64_t off = static_cast<int64_t>(out.size()) - static_cast<int64_t>(in.size());
  for (int64_t i = static_cast<int64_t>(in.size()) - 1; i >= 0; --i) {
    int64_t o = i + off;
    check(in[i] == out[o] || in[i] == 1,
          "broadcast: shape " + shape_str(in) + " vs " + shape_str(out));
    st[o] = (in[i] == 1) ? 0 : stride;
    stride *= in[i];
  }
  return st;
}

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (size_t i = 0; i < r; ++i) {
    int64_t ea = i < r - a.size() ? 1 : a[i - (r - a.size())];
    int64_t eb = i < r - b.size() ? 1 : b[i - (r - b.size())];
    check(ea == eb || ea == 1 || eb == 1,
          "broadcast: incompatible shapes " + shape_str(a) + " and " +
              shape_str(b));
    out[i] = std::max(ea, eb);
  }
  return out;
}

// Visit every linear output index together with the two mapped input indices.
template <class F>
inline void for_broadcast(const Shape& out, const std::vector<int64_t>& sa,
                          const std::vector<int64_t>& sb, F&& f) {
  int64_t n = shape_numel(out);
  size_t r = out.size();
  std::vector<int64_t> idx(r, 0);
  int64_t ia = 0, ib = 0;
  for (int64_t lin = 0; lin < n; ++lin) {
    f(lin, ia, ib);
    for (int64_t d = static_cast<int64_t>(r) - 1; d >= 0; --d) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops with numpy broadcasting

namespace detail {

template <class FwdF, class BwdF>
Tensor binary_op(const Tensor& a, const Tensor& b, FwdF fwd, BwdF bwd,
                 const char* name) {
  (void)name;
  Shape os = broadcast_shape(a.shape(), b.shape());
  Tensor out = Tensor::zeros(os, result_dtype({a, b}));
  auto ad = a.ptr();
  auto bd = b.ptr();
  auto od = out.ptr();
  if (a.shape() == b.shape()) {  // fast path
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i)
      od->values[i] = fwd(ad->values[i], bd->values[i]);
    auto bw = [ad, bd, od, bwd]() {
      int64_t n = static_cast<int64_t>(od->values.size());
      for (int64_t i = 0; i < n; ++i) {
        double ga, gb;
        bwd(ad->values[i], bd->values[i], od->values[i], ga, gb);
        double g = od->grad[i];
        if (ad->requires_grad || !ad->grad.empty()) ad->grad[i] += g * ga;
        if (bd->requires_grad || !bd->grad.empty()) bd->grad[i] += g * gb;
      }
    };
    return make_result(out, {a, b}, bw);
  }
  auto sa = broadcast_strides(a.shape(), os);
  auto sb = broadcast_strides(b.shape(), os);
  for_broadcast(os, sa, sb, [&](int64_t lin, int64_t ia, int64_t ib) {
    od->values[lin] = fwd(ad->values[ia], bd->values[ib]);
  });
  auto bw = [ad, bd, od, os, sa, sb, bwd]() {
    for_broadcast(os, sa, sb, [&](int64_t lin, int64_t ia, int64_t ib) {
      double ga, gb;
      bwd(ad->values[ia], bd->values[ib], od->values[lin], ga, gb);
      double g = od->grad[lin];
      ad->grad[ia] += g * ga;
      bd->grad[ib] += g * gb;
    });
  };
  return make_result(out, {a, b}, bw);
}

template <class FwdF, class BwdF>
Tensor unary_op(const Tensor& x, FwdF fwd, BwdF bwd) {
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  auto xd = x.ptr();
  auto od = out.ptr();
  int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) od->values[i] = fwd(xd->values[i]);
  auto bw = [xd, od, bwd]() {
    int64_t n = static_cast<int64_t>(od->values.size());
    for (int64_t i = 0; i < n; ++i)
      xd->grad[i] += od->grad[i] * bwd(xd->values[i], od->values[i]);
  };
  return make_result(out, {x}, bw);
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      a, b, [](double x, double y) { return x + y; },
      [](double, double, double, double& ga, double& gb) { ga = 1; gb = 1; },
      "add");
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      a, b, [](double x, double y) { return x - y; },
      [](double, double, double, double& ga, double& gb) { ga = 1; gb = -1; },
      "sub");
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      a, b, [](double x, double y) { return x * y; },
      [](double x, double y, double, double& ga, double& gb) {
        ga = y;
        gb = x;
      },
      "mul");
}
inline Tensor div(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      a, b, [](double x, double y) { return x / y; },
      [](double x, double y, double, double& ga, double& gb) {
        ga = 1.0 / y;
        gb = -x / (y * y);
      },
      "div");
}

inline Tensor exp(const Tensor& x) {
  return detail::unary_op(
      x, [](double v) { return std::exp(v); },
      [](double, double y) { return y; });
}
inline Tensor log(const Tensor& x) {
  return detail::unary_op(
      x, [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; });
}
inline Tensor sqrt(const Tensor& x) {
  return detail::unary_op(
      x, [](double v) { return std::sqrt(v); },
      [](double, double y) { return 0.5 / y; });
}
inline Tensor relu(const Tensor& x) {
  return detail::unary_op(
      x, [](double v) { return v > 0 ? v : 0.0; },
      [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}
inline Tensor sigmoid(const Tensor& x) {
  return detail::unary_op(
      x,
      [](double v) {
        return v >= 0 ? 1.0 / (1.0 + std::exp(-v))
                      : std::exp(v) / (1.0 + std::exp(v));
      },
      [](double, double y) { return y * (1.0 - y); });
}
inline Tensor softplus(const Tensor& x) {
  return detail::unary_op(
      x,
      [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::fabs(v))); },
      [](double v, double) {
        return v >= 0 ? 1.0 / (1.0 + std::exp(-v))
                      : std::exp(v) / (1.0 + std::exp(v));
      });
}
inline Tensor neg(const Tensor& x) {
  return detail::unary_op(
      x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}
inline Tensor scale(const Tensor& x, double c) {
  return detail::unary_op(
      x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}
inline Tensor add_scalar(const Tensor& x, double c) {
  return detail::unary_op(
      x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}
// Elementwise max(x, c); subgradient 0 on the clamped side.
inline Tensor clamp_min(const Tensor& x, double c) {
  return detail::unary_op(
      x, [c](double v) { return v > c ? v : c; },
      [c](double v, double) { return v > c ? 1.0 : 0.0; });
}

// Identity with severed gradient.
inline Tensor detach(const Tensor& x) {
  Tensor out = Tensor::from(x.shape(), x.values(), x.dtype());
  return out;
}

// ---------------------------------------------------------------------------
// matmul / bmm

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  check(a.rank() == 2 && b.rank() == 2 && a.shape()[1] == b.shape()[0],
        "matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
            shape_str(b.shape()));
  int64_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor out = Tensor::zeros({m, n}, detail::result_dtype({a, b}));
  auto ad = a.ptr(); auto bd = b.ptr(); auto od = out.ptr();
  for (int64_t i = 0; i < m; ++i)
    for (int64_t p = 0; p < k; ++p) {
      double av = ad->values[i * k + p];
      if (av == 0.0) continue;
      const double* brow = &bd->values[p * n];
      double* orow = &od->values[i * n];
      for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  auto bw = [ad, bd, od, m, k, n]() {
    // a.grad += g b^T ; b.grad += a^T g
    for (int64_t i = 0; i < m; ++i)
      for (int64_t p = 0; p < k; ++p) {
        const double* grow = &od->grad[i * n];
        const double* brow = &bd->values[p * n];
        double acc = 0;
        for (int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
        ad->grad[i * k + p] += acc;
      }
    for (int64_t p = 0; p < k; ++p)
      for (int64_t i = 0; i < m; ++i) {
        double av = ad->values[i * k + p];
        const double* grow = &od->grad[i * n];
        double* brow = &bd->grad[p * n];
        for (int64_t j = 0; j < n; ++j) brow[j] += av * grow[j];
      }
  };
  return detail::make_result(out, {a, b}, bw);
}

inline Tensor bmm(const Tensor& a, const Tensor& b) {
  check(a.rank() == 3 && b.rank() == 3 && a.shape()[0] == b.shape()[0] &&
            a.shape()[2] == b.shape()[1],
        "bmm: incompatible shapes " + shape_str(a.shape()) + " and " +
            shape_str(b.shape()));
  int64_t B = a.shape()[0], m = a.shape()[1], k = a.shape()[2], n = b.shape()[2];
  Tensor out = Tensor::zeros({B, m, n}, detail::result_dtype({a, b}));
  auto ad = a.ptr(); auto bd = b.ptr(); auto od = out.ptr();
  for (int64_t bb = 0; bb < B; ++bb) {
    const double* A = &ad->values[bb * m * k];
    const double* Bv = &bd->values[bb * k * n];
    double* O = &od->values[bb * m * n];
    for (int64_t i = 0; i < m; ++i)
      for (int64_t p = 0; p < k; ++p) {
        double av = A[i * k + p];
        for (int64_t j = 0; j < n; ++j) O[i * n + j] += av * Bv[p * n + j];
      }
  }
  auto bw = [ad, bd, od, B, m, k, n]() {
    for (int64_t bb = 0; bb < B; ++bb) {
      const double* A = &ad->values[bb * m * k];
      const double* Bv = &bd->values[bb * k * n];
      const double* G = &od->grad[bb * m * n];
      double* dA = &ad->grad[bb * m * k];
      double* dB = &bd->grad[bb * k * n];
      for (int64_t i = 0; i < m; ++i)
        for (int64_t p = 0; p < k; ++p) {
          double acc = 0;
          for (int64_t j = 0; j < n; ++j) acc += G[i * n + j] * Bv[p * n + j];
          dA[i * k + p] += acc;
          double av = A[i * k + p];
          for (int64_t j = 0; j < n; ++j) dB[p * n + j] += av * G[i * n + j];
        }
    }
  };
  return detail::make_result(out, {a, b}, bw);
}

// Transpose the last two axes of a 2-D or 3-D tensor.
inline Tensor transpose(const Tensor& x) {
  check(x.rank() == 2 || x.rank() == 3, "transpose: rank must be 2 or 3");
  Shape s = x.shape();
  int64_t B = x.rank() == 3 ? s[0] : 1;
  int64_t m = s[x.rank() - 2], n = s[x.rank() - 1];
  Shape os = s;
  std::swap(os[x.rank() - 2], os[x.rank() - 1]);
  Tensor out = Tensor::zeros(os, x.dtype());
  auto xd = x.ptr(); auto od = out.ptr();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j)
        od->values[(b * n + j) * m + i] = xd->values[(b * m + i) * n + j];
  auto bw = [xd, od, B, m, n]() {
    for (int64_t b = 0; b < B; ++b)
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j)
          xd->grad[(b * m + i) * n + j] += od->grad[(b * n + j) * m + i];
  };
  return detail::make_result(out, {x}, bw);
}

// ---------------------------------------------------------------------------
// Shape ops

inline Tensor reshape(const Tensor& x, const Shape& s) {
  check(shape_numel(s) == x.numel(),
        "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(s));
  Tensor out = Tensor::from(s, x.values(), x.dtype());
  auto xd = x.ptr(); auto od = out.ptr();
  auto bw = [xd, od]() {
    for (size_t i = 0; i < od->grad.size(); ++i) xd->grad[i] += od->grad[i];
  };
  return detail::make_result(out, {x}, bw);
}

inline Tensor concat(const std::vector<Tensor>& xs, int64_t axis) {
  check(!xs.empty(), "concat: empty input list");
  Shape s0 = xs[0].shape();
  int64_t r = static_cast<int64_t>(s0.size());
  if (axis < 0) axis += r;
  check(axis >= 0 && axis < r, "concat: axis out of range");
  int64_t total = 0;
  for (const auto& x : xs) {
    check(x.rank() == r, "concat: rank mismatch");
    for (int64_t d = 0; d < r; ++d)
      check(d == axis || x.shape()[d] == s0[d],
            "concat: shape mismatch " + shape_str(x.shape()) + " vs " +
                shape_str(s0));
    total += x.shape()[axis];
  }
  Shape os = s0;
  os[axis] = total;
  DType dt = DType::f32;
  for (const auto& x : xs)
    if (x.dtype() == DType::f64) dt = DType::f64;
  Tensor out = Tensor::zeros(os, dt);
  int64_t outer = 1, inner = 1;
  for (int64_t d = 0; d < axis; ++d) outer *= os[d];
  for (int64_t d = axis + 1; d < r; ++d) inner *= os[d];
  auto od = out.ptr();
  int64_t off = 0;
  std::vector<std::shared_ptr<TensorData>> ins;
  std::vector<int64_t> offs, widths;
  for (const auto& x : xs) {
    int64_t w = x.shape()[axis] * inner;
    auto xd = x.ptr();
    for (int64_t o = 0; o < outer; ++o)
      std::copy(xd->values.begin() + o * w, xd->values.begin() + (o + 1) * w,
                od->values.begin() + o * total * inner + off);
    ins.push_back(xd);
    offs.push_back(off);
    widths.push_back(w);
    off += w;
  }
  auto bw = [ins, offs, widths, od, outer, total, inner]() {
    for (size_t k = 0; k < ins.size(); ++k) {
      auto& xd = ins[k];
      int64_t w = widths[k], o0 = offs[k];
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t i = 0; i < w; ++i)
          xd->grad[o * w + i] += od->grad[o * total * inner + o0 + i];
    }
  };
  return detail::make_result(out, xs, bw);
}

inline Tensor slice(const Tensor& x, int64_t axis, int64_t start, int64_t len) {
  int64_t r = x.rank();
  if (axis < 0) axis += r;
  check(axis >= 0 && axis < r, "slice: axis out of range");
  check(start >= 0 && len > 0 && start + len <= x.shape()[axis],
        "slice: range [" + std::to_string(start) + "," +
            std::to_string(start + len) + ") out of extent " +
            std::to_string(x.shape()[axis]));
  Shape os = x.shape();
  os[axis] = len;
  Tensor out = Tensor::zeros(os, x.dtype());
  int64_t outer = 1, inner = 1;
  for (int64_t d = 0; d < axis; ++d) outer *= x.shape()[d];
  for (int64_t d = axis + 1; d < r; ++d) inner *= x.shape()[d];
  int64_t ext = x.shape()[axis];
  auto xd = x.ptr(); auto od = out.ptr();
  for (int64_t o = 0; o < outer; ++o)
    std::copy(xd->values.begin() + (o * ext + start) * inner,
              xd->values.begin() + (o * ext + start + len) * inner,
              od->values.begin() + o * len * inner);
  auto bw = [xd, od, outer, inner, ext, start, len]() {
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t i = 0; i < len * inner; ++i)
        xd->grad[(o * ext + start) * inner + i] += od->grad[o * len * inner + i];
  };
  return detail::make_result(out, {x}, bw);
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor reduce_sum(const Tensor& x, int64_t axis, bool keepdims = false) {
  int64_t r = x.rank();
  if (axis < 0) axis += r;
  check(axis >= 0 && axis < r, "reduce_sum: axis out of range");
  int64_t outer = 1, inner = 1, ext = x.shape()[axis];
  for (int64_t d = 0; d < axis; ++d) outer *= x.shape()[d];
  for (int64_t d = axis + 1; d < r; ++d) inner *= x.shape()[d];
  Shape os;
  for (int64_t d = 0; d < r; ++d) {
    if (d == axis) {
      if (keepdims) os.push_back(1);
    } else {
      os.push_back(x.shape()[d]);
    }
  }
  Tensor out = Tensor::zeros(os, x.dtype());
  auto xd = x.ptr(); auto od = out.ptr();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t e = 0; e < ext; ++e)
      for (int64_t i = 0; i < inner; ++i)
        od->values[o * inner + i] += xd->values[(o * ext + e) * inner + i];
  apply_dtype(od->values, out.dtype());
  auto bw = [xd, od, outer, inner, ext]() {
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t e = 0; e < ext; ++e)
        for (int64_t i = 0; i < inner; ++i)
          xd->grad[(o * ext + e) * inner + i] += od->grad[o * inner + i];
  };
  return detail::make_result(out, {x}, bw);
}

inline Tensor reduce_mean(const Tensor& x, int64_t axis, bool keepdims = false) {
  int64_t ext = x.shape()[axis < 0 ? axis + x.rank() : axis];
  return scale(reduce_sum(x, axis, keepdims), 1.0 / static_cast<double>(ext));
}

inline Tensor sum_all(const Tensor& x) {
  Tensor out = Tensor::zeros({}, x.dtype());
  auto xd = x.ptr(); auto od = out.ptr();
  double acc = 0;
  for (double v : xd->values) acc += v;
  od->values[0] = acc;
  apply_dtype(od->values, out.dtype());
  auto bw = [xd, od]() {
    double g = od->grad[0];
    for (auto& gv : xd->grad) gv += g;
  };
  return detail::make_result(out, {x}, bw);
}

inline Tensor mean_all(const Tensor& x) {
  return scale(sum_all(x), 1.0 / static_cast<double>(x.numel()));
}

// ---------------------------------------------------------------------------
// softmax / cumsum

inline Tensor softmax(const Tensor& x, int64_t axis) {
  int64_t r = x.rank();
  if (axis < 0) axis += r;
  check(axis >= 0 && axis < r, "softmax: axis " + std::to_string(axis) +
                                   " out of range for rank " + std::to_string(r));
  int64_t outer = 1, inner = 1, ext = x.shape()[axis];
  for (int64_t d = 0; d < axis; ++d) outer *= x.shape()[d];
  for (int64_t d = axis + 1; d < r; ++d) inner *= x.shape()[d];
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  auto xd = x.ptr(); auto od = out.ptr();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < inner; ++i) {
      double mx = -1e300;
      for (int64_t e = 0; e < ext; ++e)
        mx = std::max(mx, xd->values[(o * ext + e) * inner + i]);
      double z = 0;
      for (int64_t e = 0; e < ext; ++e) {
        double v = std::exp(xd->values[(o * ext + e) * inner + i] - mx);
        od->values[(o * ext + e) * inner + i] = v;
        z += v;
      }
      for (int64_t e = 0; e < ext; ++e)
        od->values[(o * ext + e) * inner + i] /= z;
    }
  auto bw = [xd, od, outer, inner, ext]() {
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t i = 0; i < inner; ++i) {
        double dot = 0;
        for (int64_t e = 0; e < ext; ++e) {
          int64_t k = (o * ext + e) * inner + i;
          dot += od->grad[k] * od->values[k];
        }
        for (int64_t e = 0; e < ext; ++e) {
          int64_t k = (o * ext + e) * inner + i;
          xd->grad[k] += od->values[k] * (od->grad[k] - dot);
        }
      }
  };
  return detail::make_result(out, {x}, bw);
}

// Exclusive prefix sum along an axis: out[0]=0, out[i]=sum_{j<i} x[j].
inline Tensor cumsum_exclusive(const Tensor& x, int64_t axis) {
  int64_t r = x.rank();
  if (axis < 0) axis += r;
  check(axis >= 0 && axis < r, "cumsum_exclusive: axis out of range");
  int64_t outer = 1, inner = 1, ext = x.shape()[axis];
  for (int64_t d = 0; d < axis; ++d) outer *= x.shape()[d];
  for (int64_t d = axis + 1; d < r; ++d) inner *= x.shape()[d];
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  auto xd = x.ptr(); auto od = out.ptr();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < inner; ++i) {
      double acc = 0;
      for (int64_t e = 0; e < ext; ++e) {
        od->values[(o * ext + e) * inner + i] = acc;
        acc += xd->values[(o * ext + e) * inner + i];
      }
    }
  auto bw = [xd, od, outer, inner, ext]() {
    // d/dx[j] contributes to out[i] for every i > j
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t i = 0; i < inner; ++i) {
        double acc = 0;
        for (int64_t e = ext - 1; e >= 0; --e) {
          xd->grad[(o * ext + e) * inner + i] += acc;
          acc += od->grad[(o * ext + e) * inner + i];
        }
      }
  };
  return detail::make_result(out, {x}, bw);
}

// ---------------------------------------------------------------------------
// conv2d (cross-correlation, the deep-learning convention)

inline Tensor conv2d(const Tensor& x, const Tensor& kernel, int64_t stride,
                     int64_t padding) {
  check(x.rank() == 3 && kernel.rank() == 4,
        "conv2d: expected input [C,H,W] and kernel [Cout,Cin,k,k], got " +
            shape_str(x.shape()) + " and " + shape_str(kernel.shape()));
  int64_t Cin = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  int64_t Cout = kernel.shape()[0], kh = kernel.shape()[2], kw = kernel.shape()[3];
  check(kernel.shape()[1] == Cin,
        "conv2d: kernel in-channels " + std::to_string(kernel.shape()[1]) +
            " != input channels " + std::to_string(Cin));
  int64_t Ho = (H + 2 * padding - kh) / stride + 1;
  int64_t Wo = (W + 2 * padding - kw) / stride + 1;
  check(Ho > 0 && Wo > 0, "conv2d: non-positive output extent for input " +
                              shape_str(x.shape()));
  Tensor out = Tensor::zeros({Cout, Ho, Wo}, detail::result_dtype({x, kernel}));
  auto xd = x.ptr(); auto kd = kernel.ptr(); auto od = out.ptr();
  for (int64_t co = 0; co < Cout; ++co)
    for (int64_t ci = 0; ci < Cin; ++ci) {
      const double* kbase = &kd->values[(co * Cin + ci) * kh * kw];
      const double* xbase = &xd->values[ci * H * W];
      double* obase = &od->values[co * Ho * Wo];
      for (int64_t oy = 0; oy < Ho; ++oy) {
        int64_t y0 = oy * stride - padding;
        for (int64_t i = 0; i < kh; ++i) {
          int64_t y = y0 + i;
          if (y < 0 || y >= H) continue;
          for (int64_t ox = 0; ox < Wo; ++ox) {
            int64_t x0 = ox * stride - padding;
            double acc = 0;
            for (int64_t j = 0; j < kw; ++j) {
              int64_t xx = x0 + j;
              if (xx < 0 || xx >= W) continue;
              acc += kbase[i * kw + j] * xbase[y * W + xx];
            }
            obase[oy * Wo + ox] += acc;
          }
        }
      }
    }
  apply_dtype(od->values, out.dtype());
  auto bw = [xd, kd, od, Cin, H, W, Cout, kh, kw, Ho, Wo, stride, padding]() {
    for (int64_t co = 0; co < Cout; ++co)
      for (int64_t ci = 0; ci < Cin; ++ci) {
        const double* kbase = &kd->values[(co * Cin + ci) * kh * kw];
        double* dkbase = &kd->grad[(co * Cin + ci) * kh * kw];
        const double* xbase = &xd->values[ci * H * W];
        double* dxbase = &xd->grad[ci * H * W];
        const double* gbase = &od->grad[co * Ho * Wo];
        for (int64_t oy = 0; oy < Ho; ++oy) {
          int64_t y0 = oy * stride - padding;
          for (int64_t ox = 0; ox < Wo; ++ox) {
            int64_t x0 = ox * stride - padding;
            double g = gbase[oy * Wo + ox];
            if (g == 0.0) continue;
            for (int64_t i = 0; i < kh; ++i) {
              int64_t y = y0 + i;
              if (y < 0 || y >= H) continue;
              for (int64_t j = 0; j < kw; ++j) {
                int64_t xx = x0 + j;
                if (xx < 0 || xx >= W) continue;
                dkbase[i * kw + j] += g * xbase[y * W + xx];
                dxbase[y * W + xx] += g * kbase[i * kw + j];
              }
            }
          }
        }
      }
  };
  return detail::make_result(out, {x, kernel}, bw);
}

// ---------------------------------------------------------------------------
// Sampling / resizing

// Bilinear sample of a [C,H,W] plane at B continuous (u,v) positions given in
// the plane's own pixel coordinates (u along width, half-pixel centers).
// Out-of-frame samples produce zeros and zero gradient.
inline Tensor bilinear_sample(const Tensor& plane,
                              const std::vector<std::array<double, 2>>& uv) {
  check(plane.rank() == 3, "bilinear_sample: plane must be [C,H,W]");
  int64_t C = plane.shape()[0], H = plane.shape()[1], W = plane.shape()[2];
  int64_t B = static_cast<int64_t>(uv.size());
  Tensor out = Tensor::zeros({B, C}, plane.dtype());
  auto pd = plane.ptr(); auto od = out.ptr();
  // Per sample: 4 corner linear offsets + weights; reused by backward.
  struct Taps { int64_t o[4]; double w[4]; int n = 0; };
  auto taps = std::make_shared<std::vector<Taps>>(B);
  for (int64_t b = 0; b < B; ++b) {
    double fx = uv[b][0] - 0.5, fy = uv[b][1] - 0.5;
    int64_t x0 = static_cast<int64_t>(std::floor(fx));
    int64_t y0 = static_cast<int64_t>(std::floor(fy));
    double ax = fx - x0, ay = fy - y0;
    const double ws[4] = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay,
                          ax * ay};
    const int64_t xs[4] = {x0, x0 + 1, x0, x0 + 1};
    const int64_t ys[4] = {y0, y0, y0 + 1, y0 + 1};
    Taps& t = (*taps)[b];
    for (int k = 0; k < 4; ++k) {
      if (xs[k] < 0 || xs[k] >= W || ys[k] < 0 || ys[k] >= H) continue;
      t.o[t.n] = ys[k] * W + xs[k];
      t.w[t.n] = ws[k];
      ++t.n;
    }
    for (int64_t c = 0; c < C; ++c) {
      double acc = 0;
      for (int k = 0; k < t.n; ++k)
        acc += t.w[k] * pd->values[c * H * W + t.o[k]];
      od->values[b * C + c] = acc;
    }
  }
  apply_dtype(od->values, out.dtype());
  auto bw = [pd, od, taps, C, H, W, B]() {
    for (int64_t b = 0; b < B; ++b) {
      const Taps& t = (*taps)[b];
      for (int64_t c = 0; c < C; ++c) {
        double g = od->grad[b * C + c];
        for (int k = 0; k < t.n; ++k)
          pd->grad[c * H * W + t.o[k]] += g * t.w[k];
      }
    }
  };
  return detail::make_result(out, {plane}, bw);
}

// Bilinear resize of [C,H,W] to [C,H2,W2], half-pixel-center convention.
inline Tensor resize_bilinear(const Tensor& x, int64_t H2, int64_t W2) {
  check(x.rank() == 3, "resize_bilinear: input must be [C,H,W]");
  check(H2 > 0 && W2 > 0, "resize_bilinear: non-positive target extent");
  int64_t C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  Tensor out = Tensor::zeros({C, H2, W2}, x.dtype());
  auto xd = x.ptr(); auto od = out.ptr();
  double sy = static_cast<double>(H) / H2, sx = static_cast<double>(W) / W2;
  struct Tap { int64_t x0, x1, y0, y1; double ax, ay; };
  auto taps = std::make_shared<std::vector<Tap>>(H2 * W2);
  for (int64_t oy = 0; oy < H2; ++oy)
    for (int64_t ox = 0; ox < W2; ++ox) {
      double fy = (oy + 0.5) * sy - 0.5, fx = (ox + 0.5) * sx - 0.5;
      fy = std::clamp(fy, 0.0, static_cast<double>(H - 1));
      fx = std::clamp(fx, 0.0, static_cast<double>(W - 1));
      Tap& t = (*taps)[oy * W2 + ox];
      t.y0 = static_cast<int64_t>(std::floor(fy));
      t.x0 = static_cast<int64_t>(std::floor(fx));
      t.y1 = std::min(t.y0 + 1, H - 1);
      t.x1 = std::min(t.x0 + 1, W - 1);
      t.ay = fy - t.y0;
      t.ax = fx - t.x0;
    }
  for (int64_t c = 0; c < C; ++c) {
    const double* xb = &xd->values[c * H * W];
    double* ob = &od->values[c * H2 * W2];
    for (int64_t i = 0; i < H2 * W2; ++i) {
      const Tap& t = (*taps)[i];
      ob[i] = (1 - t.ay) * ((1 - t.ax) * xb[t.y0 * W + t.x0] +
                            t.ax * xb[t.y0 * W + t.x1]) +
              t.ay * ((1 - t.ax) * xb[t.y1 * W + t.x0] +
                      t.ax * xb[t.y1 * W + t.x1]);
    }
  }
  apply_dtype(od->values, out.dtype());
  auto bw = [xd, od, taps, C, H, W, H2, W2]() {
    for (int64_t c = 0; c < C; ++c) {
      double* dxb = &xd->grad[c * H * W];
      const double* gb = &od->grad[c * H2 * W2];
      for (int64_t i = 0; i < H2 * W2; ++i) {
        const Tap& t = (*taps)[i];
        double g = gb[i];
        dxb[t.y0 * W + t.x0] += g * (1 - t.ay) * (1 - t.ax);
        dxb[t.y0 * W + t.x1] += g * (1 - t.ay) * t.ax;
        dxb[t.y1 * W + t.x0] += g * t.ay * (1 - t.ax);
        dxb[t.y1 * W + t.x1] += g * t.ay * t.ax;
      }
    }
  };
  return detail::make_result(out, {x}, bw);
}

// ---------------------------------------------------------------------------
// Composite layers

// x:[B,in] W:[in,out] b:[out]
inline Tensor linear(const Tensor& x, const Tensor& W, const Tensor& b) {
  Tensor y = matmul(x, W);
  return add(y, reshape(b, {1, b.numel()}));
}

// Layer normalization over the last axis, built from primitives.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
  Tensor mu = reduce_mean(x, -1, true);
  Tensor xc = sub(x, mu);
  Tensor var = reduce_mean(mul(xc, xc), -1, true);
  Tensor y = div(xc, sqrt(add_scalar(var, eps)));
  return add(mul(y, gain), bias);
}

}  // namespace idnerf
