#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "etclip/common.hpp"
#include "etclip/rng.hpp"

namespace etclip {

// Dense row-major tensor with an optional gradient slot. Scalar type is a
// template parameter: the artifact runs in float, gradient-check oracles
// instantiate the identical code in double.
template <typename T>
struct TensorDataT {
  std::vector<int> shape;
  std::vector<T> value;
  std::vector<T> grad;  // sized lazily; empty means "no gradient yet"
  bool requires_grad = false;

  std::size_t numel() const { return value.size(); }

  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }

  void zero_grad() {
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), T(0));
  }
};

template <typename T>
using TensorT = std::shared_ptr<TensorDataT<T>>;

namespace detail {

inline std::string shape_str(const std::vector<int>& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << "]";
  return os.str();
}

inline std::size_t shape_numel(const std::vector<int>& s) {
  std::size_t n = 1;
  for (int d : s) {
    ETCLIP_CHECK(d > 0, "non-positive dimension in shape " + shape_str(s));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

// C[m x n] += A[m x k] * B[k x n]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const T* ai = a + static_cast<std::size_t>(i) * k;
    T* ci = c + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      T av = ai[p];
      if (av == T(0)) continue;
      const T* bp = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m x k] += A[m x n] * B^T where B is [k x n]
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, int m, int n, int k) {
  for (int i = 0; i < m; ++i) {
    const T* ai = a + static_cast<std::size_t>(i) * n;
    T* ci = c + static_cast<std::size_t>(i) * k;
    for (int j = 0; j < k; ++j) {
      const T* bj = b + static_cast<std::size_t>(j) * n;
      T acc = T(0);
      for (int p = 0; p < n; ++p) acc += ai[p] * bj[p];
      ci[j] += acc;
    }
  }
}

// C[k x n] += A^T * B where A is [m x k], B is [m x n]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, int m, int k, int n) {
  for (int p = 0; p < m; ++p) {
    const T* ap = a + static_cast<std::size_t>(p) * k;
    const T* bp = b + static_cast<std::size_t>(p) * n;
    for (int i = 0; i < k; ++i) {
      T av = ap[i];
      if (av == T(0)) continue;
      T* ci = c + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

}  // namespace detail

template <typename T>
TensorT<T> make_tensor(std::vector<int> shape, bool requires_grad = false) {
  auto t = std::make_shared<TensorDataT<T>>();
  std::size_t n = detail::shape_numel(shape);
  t->shape = std::move(shape);
  t->value.assign(n, T(0));
  t->requires_grad = requires_grad;
  return t;
}

template <typename T>
TensorT<T> make_tensor(std::vector<int> shape, std::vector<T> data,
                       bool requires_grad = false) {
  ETCLIP_CHECK(detail::shape_numel(shape) == data.size(),
               "data length " + std::to_string(data.size()) +
                   " does not match shape " + detail::shape_str(shape));
  auto t = std::make_shared<TensorDataT<T>>();
  t->shape = std::move(shape);
  t->value = std::move(data);
  t->requires_grad = requires_grad;
  return t;
}

template <typename T>
TensorT<T> make_scalar(T v, bool requires_grad = false) {
  return make_tensor<T>({1}, {v}, requires_grad);
}

template <typename T>
void fill_gaussian(const TensorT<T>& t, Rng& rng, double stddev) {
  for (auto& v : t->value) v = static_cast<T>(rng.gaussian() * stddev);
}

template <typename T>
bool all_finite(const TensorT<T>& t) {
  for (T v : t->value)
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

template <typename T>
int argmax(const T* v, int n) {
  int best = 0;
  for (int i = 1; i < n; ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

// Reverse-mode tape. Ops compute the forward result eagerly and record a
// backward closure. backward() re-zeroes every non-leaf gradient before
// propagating, so leaf gradients accumulate additively across backward
// calls (calling backward twice without re-running the forward exactly
// doubles leaf grads; that contract is tested).
template <typename T>
class TapeT {
 public:
  using Tensor = TensorT<T>;

  void set_recording(bool on) { recording_ = on; }
  bool recording() const { return recording_; }

  void backward(const Tensor& loss) {
    ETCLIP_CHECK(loss->numel() == 1, "backward requires a scalar loss, got " +
                                         detail::shape_str(loss->shape));
    bool on_tape = false;
    for (auto& o : outputs_)
      if (o == loss) on_tape = true;
    ETCLIP_CHECK(on_tape, "loss tensor is not an output of this tape");
    for (auto& o : outputs_) {
      o->ensure_grad();
      o->zero_grad();
    }
    loss->grad[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

  // ---- elementwise / structural ----

  Tensor add(const Tensor& a, const Tensor& b) {
    ETCLIP_CHECK(a->shape == b->shape,
                 "add shape mismatch " + detail::shape_str(a->shape) + " vs " +
                     detail::shape_str(b->shape));
    Tensor out = fresh(a->shape, a, b);
    for (std::size_t i = 0; i < out->numel(); ++i)
      out->value[i] = a->value[i] + b->value[i];
    record([a, b, out]() {
      if (a->requires_grad) {
        a->ensure_grad();
        for (std::size_t i = 0; i < out->numel(); ++i)
          a->grad[i] += out->grad[i];
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (std::size_t i = 0; i < out->numel(); ++i)
          b->grad[i] += out->grad[i];
      }
    });
    return out;
  }

  // a[m x n] + row[n] broadcast over rows
  Tensor add_rowwise(const Tensor& a, const Tensor& row) {
    ETCLIP_CHECK(a->shape.size() == 2 && row->shape.size() == 1 &&
                     a->dim(1) == row->dim(0),
                 "add_rowwise shape mismatch " + detail::shape_str(a->shape) +
                     " vs " + detail::shape_str(row->shape));
    int m = a->dim(0), n = a->dim(1);
    Tensor out = fresh(a->shape, a, row);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        out->value[idx(i, j, n)] = a->value[idx(i, j, n)] + row->value[j];
    record([a, row, out, m, n]() {
      if (a->requires_grad) {
        a->ensure_grad();
        for (std::size_t i = 0; i < out->numel(); ++i)
          a->grad[i] += out->grad[i];
      }
      if (row->requires_grad) {
        row->ensure_grad();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) row->grad[j] += out->grad[idx(i, j, n)];
      }
    });
    return out;
  }

  Tensor mul(const Tensor& a, const Tensor& b) {
    ETCLIP_CHECK(a->shape == b->shape,
                 "mul shape mismatch " + detail::shape_str(a->shape) + " vs " +
                     detail::shape_str(b->shape));
    Tensor out = fresh(a->shape, a, b);
    for (std::size_t i = 0; i < out->numel(); ++i)
      out->value[i] = a->value[i] * b->value[i];
    record([a, b, out]() {
      if (a->requires_grad) {
        a->ensure_grad();
        for (std::size_t i = 0; i < out->numel(); ++i)
          a->grad[i] += out->grad[i] * b->value[i];
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (std::size_t i = 0; i < out->numel(); ++i)
          b->grad[i] += out->grad[i] * a->value[i];
      }
    });
    return out;
  }

  Tensor scale(const Tensor& a, T c) {
    Tensor out = fresh(a->shape, a);
    for (std::size_t i = 0; i < out->numel(); ++i)
      out->value[i] = a->value[i] * c;
    record([a, out, c]() {
      if (a->requires_grad) {
        a->ensure_grad();
        for (std::size_t i = 0; i < out->numel(); ++i)
          a->grad[i] += out->grad[i] * c;
      }
    });
    return out;
  }

  // scale by a learned scalar tensor
  Tensor scale_by(const Tensor& a, const Tensor& s) {
    ETCLIP_CHECK(s->numel() == 1, "scale_by expects a scalar tensor");
    Tensor out = fresh(a->shape, a, s);
    T sv = s->value[0];
    for (std::size_t i = 0; i < out->numel(); ++i)
      out->value[i] = a->value[i] * sv;
    record([a, s, out, sv]() {
      if (a->requires_grad) {
        a->ensure_grad();
        for (std::size_t i = 0; i < out->numel(); ++i)
          a->grad[i] += out->grad[i] * sv;
      }
      if (s->requires_grad) {
        s->ensure_grad();
        T acc = T(0);
        for (std::size_t i = 0; i < out->numel(); ++i)
          acc += out->grad[i] * a->value[i];
        s->grad[0] += acc;
      }
    });
    return out;
  }

  Tensor exp_op(const Tensor& a) {
    Tensor out = fresh(a->shape, a);
    for (std::size_t i = 0; i < out->numel(); ++i)
      out->value[i] = std::exp(a->value[i]);
    record([a, out]() {
      if (a->requires_grad) {
        a->ensure_grad();
        for (std::size_t i = 0; i < out->numel(); ++i)
          a->grad[i] += out->grad[i] * out->value[i];
      }
    });
    return out;
  }

  Tensor gelu(const Tensor& a) {
    Tensor out = fresh(a->shape, a);
    for (std::size_t i = 0; i < out->numel(); ++i) {
      double x = static_cast<double>(a->value[i]);
      out->value[i] =
          static_cast<T>(0.5 * x * (1.0 + std::erf(x / 1.4142135623730951)));
    }
    record([a, out]() {
      if (!a->requires_grad) return;
      a->ensure_grad();
      for (std::size_t i = 0; i < out->numel(); ++i) {
        double x = static_cast<double>(a->value[i]);
        double cdf = 0.5 * (1.0 + std::erf(x / 1.4142135623730951));
        double pdf = std::exp(-0.5 * x * x) / 2.5066282746310002;
        a->grad[i] += out->grad[i] * static_cast<T>(cdf + x * pdf);
      }
    });
    return out;
  }

  Tensor reshape(const Tensor& a, std::vector<int> shape) {
    ETCLIP_CHECK(detail::shape_numel(shape) == a->numel(),
                 "reshape numel mismatch " + detail::shape_str(a->shape) +
                     " -> " + detail::shape_str(shape));
    Tensor out = fresh(shape, a);
    out->value = a->value;
    record([a, out]() {
      if (!a->requires_grad) return;
      a->ensure_grad();
      for (std::size_t i = 0; i < out->numel(); ++i)
        a->grad[i] += out->grad[i];
    });
    return out;
  }

  Tensor transpose(const Tensor& a) {
    ETCLIP_CHECK(a->shape.size() == 2,
                 "transpose expects rank 2, got " +
                     detail::shape_str(a->shape));
    int m = a->dim(0), n = a->dim(1);
    Tensor out = fresh({n, m}, a);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        out->value[idx(j, i, m)] = a->value[idx(i, j, n)];
    record([a, out, m, n]() {
      if (!a->requires_grad) return;
      a->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          a->grad[idx(i, j, n)] += out->grad[idx(j, i, m)];
    });
    return out;
  }

  Tensor concat_rows(const std::vector<Tensor>& parts) {
    ETCLIP_CHECK(!parts.empty(), "concat_rows on empty list");
    int n = parts[0]->dim(1);
    int m = 0;
    for (auto& p : parts) {
      ETCLIP_CHECK(p->shape.size() == 2 && p->dim(1) == n,
                   "concat_rows column mismatch");
      m += p->dim(0);
    }
    Tensor out = make_tensor<T>({m, n});
    std::size_t off = 0;
    for (auto& p : parts) {
      std::copy(p->value.begin(), p->value.end(), out->value.begin() + off);
      off += p->numel();
      if (p->requires_grad) out->requires_grad = true;
    }
    track(out);
    record([parts, out]() {
      std::size_t off = 0;
      for (auto& p : parts) {
        if (p->requires_grad) {
          p->ensure_grad();
          for (std::size_t i = 0; i < p->numel(); ++i)
            p->grad[i] += out->grad[off + i];
        }
        off += p->numel();
      }
    });
    return out;
  }

  Tensor concat_cols(const std::vector<Tensor>& parts) {
    ETCLIP_CHECK(!parts.empty(), "concat_cols on empty list");
    int m = parts[0]->dim(0);
    int n = 0;
    for (auto& p : parts) {
      ETCLIP_CHECK(p->shape.size() == 2 && p->dim(0) == m,
                   "concat_cols row mismatch");
      n += p->dim(1);
    }
    Tensor out = make_tensor<T>({m, n});
    int coff = 0;
    for (auto& p : parts) {
      int pn = p->dim(1);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < pn; ++j)
          out->value[idx(i, coff + j, n)] = p->value[idx(i, j, pn)];
      coff += pn;
      if (p->requires_grad) out->requires_grad = true;
    }
    track(out);
    record([parts, out, m, n]() {
      int coff = 0;
      for (auto& p : parts) {
        int pn = p->dim(1);
        if (p->requires_grad) {
          p->ensure_grad();
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < pn; ++j)
              p->grad[idx(i, j, pn)] += out->grad[idx(i, coff + j, n)];
        }
        coff += pn;
      }
    });
    return out;
  }

  Tensor slice_rows(const Tensor& a, int r0, int r1) {
    ETCLIP_CHECK(a->shape.size() == 2 && 0 <= r0 && r0 < r1 &&
                     r1 <= a->dim(0),
                 "slice_rows bounds [" + std::to_string(r0) + "," +
                     std::to_string(r1) + ") on " +
                     detail::shape_str(a->shape));
    int n = a->dim(1);
    Tensor out = fresh({r1 - r0, n}, a);
    std::copy(a->value.begin() + static_cast<std::size_t>(r0) * n,
              a->value.begin() + static_cast<std::size_t>(r1) * n,
              out->value.begin());
    record([a, out, r0, n]() {
      if (!a->requires_grad) return;
      a->ensure_grad();
      for (std::size_t i = 0; i < out->numel(); ++i)
        a->grad[static_cast<std::size_t>(r0) * n + i] += out->grad[i];
    });
    return out;
  }

  Tensor slice_cols(const Tensor& a, int c0, int c1) {
    ETCLIP_CHECK(a->shape.size() == 2 && 0 <= c0 && c0 < c1 &&
                     c1 <= a->dim(1),
                 "slice_cols bounds on " + detail::shape_str(a->shape));
    int m = a->dim(0), n = a->dim(1), w = c1 - c0;
    Tensor out = fresh({m, w}, a);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < w; ++j)
        out->value[idx(i, j, w)] = a->value[idx(i, c0 + j, n)];
    record([a, out, c0, m, n, w]() {
      if (!a->requires_grad) return;
      a->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < w; ++j)
          a->grad[idx(i, c0 + j, n)] += out->grad[idx(i, j, w)];
    });
    return out;
  }

  Tensor gather_rows(const Tensor& a, std::vector<int> rows) {
    ETCLIP_CHECK(a->shape.size() == 2, "gather_rows expects rank 2");
    int n = a->dim(1);
    for (int r : rows)
      ETCLIP_CHECK(0 <= r && r < a->dim(0),
                   "gather_rows index " + std::to_string(r) + " out of range");
    Tensor out = fresh({static_cast<int>(rows.size()), n}, a);
    for (std::size_t i = 0; i < rows.size(); ++i)
      std::copy(a->value.begin() + static_cast<std::size_t>(rows[i]) * n,
                a->value.begin() + static_cast<std::size_t>(rows[i] + 1) * n,
                out->value.begin() + i * n);
    record([a, out, rows, n]() {
      if (!a->requires_grad) return;
      a->ensure_grad();
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (int j = 0; j < n; ++j)
          a->grad[static_cast<std::size_t>(rows[i]) * n + j] +=
              out->grad[i * n + j];
    });
    return out;
  }

  // table[V x d] row gather with scatter-add backward
  Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
    ETCLIP_CHECK(table->shape.size() == 2, "embedding table must be rank 2");
    for (int id : ids)
      ETCLIP_CHECK(0 <= id && id < table->dim(0),
                   "embedding id " + std::to_string(id) + " out of range 0.." +
                       std::to_string(table->dim(0) - 1));
    return gather_rows(table, ids);
  }

  // ---- reductions ----

  Tensor sum_all(const Tensor& a) {
    Tensor out = fresh({1}, a);
    T acc = T(0);
    for (T v : a->value) acc += v;
    out->value[0] = acc;
    record([a, out]() {
      if (!a->requires_grad) return;
      a->ensure_grad();
      for (std::size_t i = 0; i < a->numel(); ++i)
        a->grad[i] += out->grad[0];
    });
    return out;
  }

  Tensor mean_all(const Tensor& a) {
    Tensor out = fresh({1}, a);
    T acc = T(0);
    for (T v : a->value) acc += v;
    T inv = T(1) / static_cast<T>(a->numel());
    out->value[0] = acc * inv;
    record([a, out, inv]() {
      if (!a->requires_grad) return;
      a->ensure_grad();
      for (std::size_t i = 0; i < a->numel(); ++i)
        a->grad[i] += out->grad[0] * inv;
    });
    return out;
  }

  // [m x n] -> [1 x n]
  Tensor mean_rows(const Tensor& a) {
    ETCLIP_CHECK(a->shape.size() == 2, "mean_rows expects rank 2");
    int m = a->dim(0), n = a->dim(1);
    Tensor out = fresh({1, n}, a);
    T inv = T(1) / static_cast<T>(m);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) out->value[j] += a->value[idx(i, j, n)];
    for (int j = 0; j < n; ++j) out->value[j] *= inv;
    record([a, out, m, n, inv]() {
      if (!a->requires_grad) return;
      a->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          a->grad[idx(i, j, n)] += out->grad[j] * inv;
    });
    return out;
  }

  // ---- linear algebra ----

  Tensor matmul(const Tensor& a, const Tensor& b) {
    ETCLIP_CHECK(a->shape.size() == 2 && b->shape.size() == 2 &&
                     a->dim(1) == b->dim(0),
                 "matmul shape mismatch " + detail::shape_str(a->shape) +
                     " x " + detail::shape_str(b->shape));
    int m = a->dim(0), k = a->dim(1), n = b->dim(1);
    Tensor out = fresh({m, n}, a, b);
    detail::gemm_nn(a->value.data(), b->value.data(), out->value.data(), m, k,
                    n);
    record([a, b, out, m, k, n]() {
      if (a->requires_grad) {
        a->ensure_grad();
        detail::gemm_nt(out->grad.data(), b->value.data(), a->grad.data(), m,
                        n, k);
      }
      if (b->requires_grad) {
        b->ensure_grad();
        detail::gemm_tn(a->value.data(), out->grad.data(), b->grad.data(), m,
                        k, n);
      }
    });
    return out;
  }

  // ---- normalization / activations over rows ----

  // softmax over the last axis (rank 1 = single row)
  Tensor softmax(const Tensor& a) {
    ETCLIP_CHECK(!a->shape.empty(), "softmax on empty tensor");
    int n = a->shape.back();
    int m = static_cast<int>(a->numel()) / n;
    Tensor out = fresh(a->shape, a);
    for (int i = 0; i < m; ++i) {
      const T* x = a->value.data() + static_cast<std::size_t>(i) * n;
      T* y = out->value.data() + static_cast<std::size_t>(i) * n;
      T mx = x[0];
      for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
      T s = T(0);
      for (int j = 0; j < n; ++j) {
        y[j] = std::exp(x[j] - mx);
        s += y[j];
      }
      T inv = T(1) / s;
      for (int j = 0; j < n; ++j) y[j] *= inv;
    }
    record([a, out, m, n]() {
      if (!a->requires_grad) return;
      a->ensure_grad();
      for (int i = 0; i < m; ++i) {
        const T* y = out->value.data() + static_cast<std::size_t>(i) * n;
        const T* gy = out->grad.data() + static_cast<std::size_t>(i) * n;
        T* gx = a->grad.data() + static_cast<std::size_t>(i) * n;
        T dot = T(0);
        for (int j = 0; j < n; ++j) dot += gy[j] * y[j];
        for (int j = 0; j < n; ++j) gx[j] += (gy[j] - dot) * y[j];
      }
    });
    return out;
  }

  Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias,
                    T eps = T(1e-5)) {
    ETCLIP_CHECK(!a->shape.empty() && gain->shape.size() == 1 &&
                     bias->shape.size() == 1,
                 "layer_norm rank error");
    int d = a->shape.back();
    ETCLIP_CHECK(gain->dim(0) == d && bias->dim(0) == d,
                 "layer_norm gain/bias length mismatch");
    int m = static_cast<int>(a->numel()) / d;
    Tensor out = fresh(a->shape, a, gain, bias);
    auto stats = std::make_shared<std::vector<T>>(
        static_cast<std::size_t>(m) * 2);  // mean, inv_std per row
    for (int i = 0; i < m; ++i) {
      const T* x = a->value.data() + static_cast<std::size_t>(i) * d;
      T* y = out->value.data() + static_cast<std::size_t>(i) * d;
      T mu = T(0);
      for (int j = 0; j < d; ++j) mu += x[j];
      mu /= static_cast<T>(d);
      T var = T(0);
      for (int j = 0; j < d; ++j) var += (x[j] - mu) * (x[j] - mu);
      var /= static_cast<T>(d);
      T istd = T(1) / std::sqrt(var + eps);
      (*stats)[2 * i] = mu;
      (*stats)[2 * i + 1] = istd;
      for (int j = 0; j < d; ++j)
        y[j] = (x[j] - mu) * istd * gain->value[j] + bias->value[j];
    }
    record([a, gain, bias, out, stats, m, d]() {
      for (int i = 0; i < m; ++i) {
        const T* x = a->value.data() + static_cast<std::size_t>(i) * d;
        const T* gy = out->grad.data() + static_cast<std::size_t>(i) * d;
        T mu = (*stats)[2 * i], istd = (*stats)[2 * i + 1];
        if (gain->requires_grad || bias->requires_grad) {
          gain->ensure_grad();
          bias->ensure_grad();
          for (int j = 0; j < d; ++j) {
            T xhat = (x[j] - mu) * istd;
            if (gain->requires_grad) gain->grad[j] += gy[j] * xhat;
            if (bias->requires_grad) bias->grad[j] += gy[j];
          }
        }
        if (a->requires_grad) {
          a->ensure_grad();
          T* gx = a->grad.data() + static_cast<std::size_t>(i) * d;
          T sum_g = T(0), sum_gx = T(0);
          for (int j = 0; j < d; ++j) {
            T g = gy[j] * gain->value[j];
            T xhat = (x[j] - mu) * istd;
            sum_g += g;
            sum_gx += g * xhat;
          }
          T invd = T(1) / static_cast<T>(d);
          for (int j = 0; j < d; ++j) {
            T g = gy[j] * gain->value[j];
            T xhat = (x[j] - mu) * istd;
            gx[j] += istd * (g - invd * sum_g - xhat * invd * sum_gx);
          }
        }
      }
    });
    return out;
  }

  // y = x / ||x||_2 per row
  Tensor l2_normalize_rows(const Tensor& a) {
    ETCLIP_CHECK(a->shape.size() == 2, "l2_normalize_rows expects rank 2");
    int m = a->dim(0), n = a->dim(1);
    Tensor out = fresh(a->shape, a);
    auto norms = std::make_shared<std::vector<T>>(m);
    for (int i = 0; i < m; ++i) {
      const T* x = a->value.data() + static_cast<std::size_t>(i) * n;
      T* y = out->value.data() + static_cast<std::size_t>(i) * n;
      T s = T(0);
      for (int j = 0; j < n; ++j) s += x[j] * x[j];
      T nrm = std::sqrt(s) + T(1e-12);
      (*norms)[i] = nrm;
      for (int j = 0; j < n; ++j) y[j] = x[j] / nrm;
    }
    record([a, out, norms, m, n]() {
      if (!a->requires_grad) return;
      a->ensure_grad();
      for (int i = 0; i < m; ++i) {
        const T* y = out->value.data() + static_cast<std::size_t>(i) * n;
        const T* gy = out->grad.data() + static_cast<std::size_t>(i) * n;
        T* gx = a->grad.data() + static_cast<std::size_t>(i) * n;
        T nrm = (*norms)[i];
        T dot = T(0);
        for (int j = 0; j < n; ++j) dot += gy[j] * y[j];
        for (int j = 0; j < n; ++j) gx[j] += (gy[j] - y[j] * dot) / nrm;
      }
    });
    return out;
  }

  // Sets disallowed positions to a large negative constant. Gradient does
  // not flow through masked positions.
  Tensor masked_fill(const Tensor& a, const std::vector<std::uint8_t>& allowed,
                     T neg = T(-1e9)) {
    ETCLIP_CHECK(allowed.size() == a->numel(),
                 "masked_fill mask length mismatch");
    Tensor out = fresh(a->shape, a);
    for (std::size_t i = 0; i < out->numel(); ++i)
      out->value[i] = allowed[i] ? a->value[i] : neg;
    record([a, out, allowed]() {
      if (!a->requires_grad) return;
      a->ensure_grad();
      for (std::size_t i = 0; i < out->numel(); ++i)
        if (allowed[i]) a->grad[i] += out->grad[i];
    });
    return out;
  }

  // ---- losses ----

  // -log softmax(logits)[gold]; logits is rank 1
  Tensor cross_entropy(const Tensor& logits, int gold) {
    ETCLIP_CHECK(logits->shape.size() == 1, "cross_entropy expects rank 1");
    int c = logits->dim(0);
    ETCLIP_CHECK(0 <= gold && gold < c,
                 "gold index " + std::to_string(gold) + " out of range 0.." +
                     std::to_string(c - 1));
    Tensor out = fresh({1}, logits);
    out->value[0] = row_ce(logits->value.data(), c, gold);
    record([logits, out, c, gold]() {
      if (!logits->requires_grad) return;
      logits->ensure_grad();
      row_ce_grad(logits->value.data(), c, gold, out->grad[0],
                  logits->grad.data());
    });
    return out;
  }

  // mean over rows of -log softmax(row)[gold[row]]
  Tensor cross_entropy_rows_mean(const Tensor& logits,
                                 const std::vector<int>& golds) {
    ETCLIP_CHECK(logits->shape.size() == 2, "expects rank 2 logits");
    int m = logits->dim(0), c = logits->dim(1);
    ETCLIP_CHECK(static_cast<int>(golds.size()) == m,
                 "gold count does not match row count");
    for (int g : golds)
      ETCLIP_CHECK(0 <= g && g < c,
                   "gold index " + std::to_string(g) + " out of range 0.." +
                       std::to_string(c - 1));
    Tensor out = fresh({1}, logits);
    T acc = T(0);
    for (int i = 0; i < m; ++i)
      acc += row_ce(logits->value.data() + static_cast<std::size_t>(i) * c, c,
                    golds[i]);
    out->value[0] = acc / static_cast<T>(m);
    record([logits, out, golds, m, c]() {
      if (!logits->requires_grad) return;
      logits->ensure_grad();
      T g = out->grad[0] / static_cast<T>(m);
      for (int i = 0; i < m; ++i)
        row_ce_grad(logits->value.data() + static_cast<std::size_t>(i) * c, c,
                    golds[i], g,
                    logits->grad.data() + static_cast<std::size_t>(i) * c);
    });
    return out;
  }

 private:
  static std::size_t idx(int i, int j, int ncols) {
    return static_cast<std::size_t>(i) * ncols + j;
  }

  static T row_ce(const T* x, int c, int gold) {
    T mx = x[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, x[j]);
    T s = T(0);
    for (int j = 0; j < c; ++j) s += std::exp(x[j] - mx);
    return mx + std::log(s) - x[gold];
  }

  static void row_ce_grad(const T* x, int c, int gold, T g, T* gx) {
    T mx = x[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, x[j]);
    T s = T(0);
    for (int j = 0; j < c; ++j) s += std::exp(x[j] - mx);
    for (int j = 0; j < c; ++j) gx[j] += g * (std::exp(x[j] - mx) / s);
    gx[gold] -= g;
  }

  template <typename... Ins>
  Tensor fresh(const std::vector<int>& shape, const Ins&... ins) {
    Tensor out = make_tensor<T>(shape);
    out->requires_grad = (... || ins->requires_grad);
    track(out);
    return out;
  }

  void track(const Tensor& out) {
    if (recording_ && out->requires_grad) outputs_.push_back(out);
  }

  void record(std::function<void()> fn) {
    if (recording_) nodes_.push_back(std::move(fn));
  }

  std::vector<std::function<void()>> nodes_;
  std::vector<Tensor> outputs_;
  bool recording_ = true;
};

using Tensor = TensorT<float>;
using Tape = TapeT<float>;

}  // namespace etclip
