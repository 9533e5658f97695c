// SPDX-License-Identifier: Apache-2.0
#include "di2/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "di2/kernels.hpp"

namespace di2::ops {

namespace {

template <class T>
using Node = typename BasicTensor<T>::Node;

template <class T>
void require_rank(const TensorT<T>& t, std::size_t rank, const char* op) {
    if (t.rank() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                             ", got " + shape_str(t.shape()));
    }
}

template <class T>
void require_same(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

// Parent gradient buffer, or an empty span when the parent is a constant.
template <class N>
auto parent_grad(N& self, std::size_t i) -> decltype(self.ensure_grad()) {
    N& p = *self.parents[i];
    if (!p.requires_grad) return {};
    return p.ensure_grad();
}

}  // namespace

template <class T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw DimensionError("matmul: inner extents differ " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    std::vector<T> out(m * n);
    kernels::omp::gemm_nn(m, n, k, a.data().data(), b.data().data(), out.data());
    return TensorT<T>::from_op({m, n}, std::move(out), {&a, &b}, [m, n, k](Node<T>& self) {
        const T* A = self.parents[0]->data.data();
        const T* B = self.parents[1]->data.data();
        const T* dC = self.grad.data();
        if (auto dA = parent_grad(self, 0); !dA.empty())
            kernels::omp::gemm_nt(m, k, n, dC, B, dA.data(), true);
        if (auto dB = parent_grad(self, 1); !dB.empty())
            kernels::omp::gemm_tn(k, n, m, A, dC, dB.data(), true);
    });
}

template <class T>
TensorT<T> bmm(const TensorT<T>& a, const TensorT<T>& b) {
    require_rank(a, 3, "bmm");
    require_rank(b, 3, "bmm");
    const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    if (b.dim(0) != batch || b.dim(1) != k) {
        throw DimensionError("bmm: incompatible shapes " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    std::vector<T> out(batch * m * n);
    for (std::size_t s = 0; s < batch; ++s) {
        kernels::omp::gemm_nn(m, n, k, a.data().data() + s * m * k, b.data().data() + s * k * n,
                              out.data() + s * m * n);
    }
    return TensorT<T>::from_op({batch, m, n}, std::move(out), {&a, &b},
                               [batch, m, n, k](Node<T>& self) {
        const T* A = self.parents[0]->data.data();
        const T* B = self.parents[1]->data.data();
        const T* dC = self.grad.data();
        auto dA = parent_grad(self, 0);
        auto dB = parent_grad(self, 1);
        for (std::size_t s = 0; s < batch; ++s) {
            if (!dA.empty())
                kernels::omp::gemm_nt(m, k, n, dC + s * m * n, B + s * k * n, dA.data() + s * m * k,
                                      true);
            if (!dB.empty())
                kernels::omp::gemm_tn(k, n, m, A + s * m * k, dC + s * m * n, dB.data() + s * k * n,
                                      true);
        }
    });
}

template <class T>
TensorT<T> transpose(const TensorT<T>& a) {
    require_rank(a, 2, "transpose");
    const std::size_t m = a.dim(0), n = a.dim(1);
    std::vector<T> out(m * n);
    const auto x = a.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
    return TensorT<T>::from_op({n, m}, std::move(out), {&a}, [m, n](Node<T>& self) {
        auto dA = parent_grad(self, 0);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) dA[i * n + j] += self.grad[j * m + i];
    });
}

template <class T>
TensorT<T> transpose_batched(const TensorT<T>& a) {
    require_rank(a, 3, "transpose_batched");
    const std::size_t batch = a.dim(0), m = a.dim(1), n = a.dim(2);
    std::vector<T> out(batch * m * n);
    const auto x = a.data();
    for (std::size_t s = 0; s < batch; ++s) {
        const std::size_t off = s * m * n;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) out[off + j * m + i] = x[off + i * n + j];
    }
    return TensorT<T>::from_op({batch, n, m}, std::move(out), {&a}, [batch, m, n](Node<T>& self) {
        auto dA = parent_grad(self, 0);
        for (std::size_t s = 0; s < batch; ++s) {
            const std::size_t off = s * m * n;
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) dA[off + i * n + j] += self.grad[off + j * m + i];
        }
    });
}

template <class T>
TensorT<T> reshape(const TensorT<T>& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                             shape_str(shape));
    }
    return TensorT<T>::from_op(std::move(shape), a.values(), {&a}, [](Node<T>& self) {
        auto dA = parent_grad(self, 0);
        for (std::size_t i = 0; i < dA.size(); ++i) dA[i] += self.grad[i];
    });
}

template <class T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    require_same(a, b, "add");
    std::vector<T> out(a.numel());
    const auto x = a.data();
    const auto y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
    return TensorT<T>::from_op(a.shape(), std::move(out), {&a, &b}, [](Node<T>& self) {
        for (std::size_t p = 0; p < 2; ++p) {
            auto d = parent_grad(self, p);
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
        }
    });
}

template <class T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    require_same(a, b, "sub");
    std::vector<T> out(a.numel());
    const auto x = a.data();
    const auto y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
    return TensorT<T>::from_op(a.shape(), std::move(out), {&a, &b}, [](Node<T>& self) {
        if (auto d = parent_grad(self, 0); !d.empty())
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
        if (auto d = parent_grad(self, 1); !d.empty())
            for (std::size_t i = 0; i < d.size(); ++i) d[i] -= self.grad[i];
    });
}

template <class T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    require_same(a, b, "mul");
    std::vector<T> out(a.numel());
    const auto x = a.data();
    const auto y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
    return TensorT<T>::from_op(a.shape(), std::move(out), {&a, &b}, [](Node<T>& self) {
        const auto& x = self.parents[0]->data;
        const auto& y = self.parents[1]->data;
        if (auto d = parent_grad(self, 0); !d.empty())
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * y[i];
        if (auto d = parent_grad(self, 1); !d.empty())
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * x[i];
    });
}

template <class T>
TensorT<T> scale(const TensorT<T>& a, T s) {
    std::vector<T> out(a.numel());
    const auto x = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * s;
    return TensorT<T>::from_op(a.shape(), std::move(out), {&a}, [s](Node<T>& self) {
        auto d = parent_grad(self, 0);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * s;
    });
}

template <class T>
TensorT<T> add_bias(const TensorT<T>& a, const TensorT<T>& bias) {
    const std::size_t n = a.shape().back();
    if (bias.numel() != n) {
        throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match rows of " +
                             shape_str(a.shape()));
    }
    std::vector<T> out(a.numel());
    const auto x = a.data();
    const auto b = bias.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + b[i % n];
    return TensorT<T>::from_op(a.shape(), std::move(out), {&a, &bias}, [n](Node<T>& self) {
        if (auto d = parent_grad(self, 0); !d.empty())
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
        if (auto d = parent_grad(self, 1); !d.empty())
            for (std::size_t i = 0; i < self.grad.size(); ++i) d[i % n] += self.grad[i];
    });
}

namespace {
thread_local KinkTrace* current_trace = nullptr;
}  // namespace

KinkTrace::KinkTrace() : previous(current_trace) { current_trace = this; }
KinkTrace::~KinkTrace() { current_trace = previous; }
KinkTrace* active_kink_trace() { return current_trace; }

template <class T>
TensorT<T> relu(const TensorT<T>& a) {
    std::vector<T> out(a.numel());
    const auto x = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
    if (current_trace != nullptr) {
        auto& h = current_trace->signature;
        for (std::size_t i = 0; i < out.size(); ++i) h = (h ^ (x[i] > T(0) ? 0x9eu : 0x3du)) * 1099511628211ull;
    }
    return TensorT<T>::from_op(a.shape(), std::move(out), {&a}, [](Node<T>& self) {
        auto d = parent_grad(self, 0);
        const auto& x = self.parents[0]->data;
        for (std::size_t i = 0; i < d.size(); ++i)
            if (x[i] > T(0)) d[i] += self.grad[i];
    });
}

template <class T>
TensorT<T> softmax_rows(const TensorT<T>& x) {
    const std::size_t n = x.shape().back();
    const std::size_t rows = x.numel() / n;
    std::vector<T> out(x.numel());
    const auto in = x.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = in.data() + r * n;
        T* yr = out.data() + r * n;
        const T mx = *std::max_element(xr, xr + n);
        T total = T(0);
        for (std::size_t j = 0; j < n; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            total += yr[j];
        }
        for (std::size_t j = 0; j < n; ++j) yr[j] /= total;
    }
    return TensorT<T>::from_op(x.shape(), std::move(out), {&x}, [rows, n](Node<T>& self) {
        auto d = parent_grad(self, 0);
        const auto& y = self.data;
        for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t off = r * n;
            T dot = T(0);
            for (std::size_t j = 0; j < n; ++j) dot += self.grad[off + j] * y[off + j];
            for (std::size_t j = 0; j < n; ++j) d[off + j] += y[off + j] * (self.grad[off + j] - dot);
        }
    });
}

template <class T>
TensorT<T> concat_tokens(const TensorT<T>& a, const TensorT<T>& b) {
    require_rank(a, 3, "concat_tokens");
    require_rank(b, 3, "concat_tokens");
    const std::size_t batch = a.dim(0), m = a.dim(1), n = b.dim(1), d = a.dim(2);
    if (b.dim(0) != batch || b.dim(2) != d) {
        throw DimensionError("concat_tokens: incompatible shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    }
    std::vector<T> out(batch * (m + n) * d);
    const auto x = a.data();
    const auto y = b.data();
    for (std::size_t s = 0; s < batch; ++s) {
        std::copy_n(x.data() + s * m * d, m * d, out.data() + s * (m + n) * d);
        std::copy_n(y.data() + s * n * d, n * d, out.data() + s * (m + n) * d + m * d);
    }
    return TensorT<T>::from_op({batch, m + n, d}, std::move(out), {&a, &b},
                               [batch, m, n, d](Node<T>& self) {
        auto da = parent_grad(self, 0);
        auto db = parent_grad(self, 1);
        for (std::size_t s = 0; s < batch; ++s) {
            const T* g = self.grad.data() + s * (m + n) * d;
            if (!da.empty())
                for (std::size_t i = 0; i < m * d; ++i) da[s * m * d + i] += g[i];
            if (!db.empty())
                for (std::size_t i = 0; i < n * d; ++i) db[s * n * d + i] += g[m * d + i];
        }
    });
}

template <class T>
TensorT<T> concat_cols(std::span<const TensorT<T>> parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no inputs");
    const std::size_t batch = parts[0].dim(0);
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        require_rank(p, 2, "concat_cols");
        if (p.dim(0) != batch) {
            throw DimensionError("concat_cols: row count mismatch " + shape_str(parts[0].shape()) +
                                 " vs " + shape_str(p.shape()));
        }
        widths.push_back(p.dim(1));
        total += p.dim(1);
    }
    std::vector<T> out(batch * total);
    std::size_t col = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const auto x = parts[i].data();
        for (std::size_t r = 0; r < batch; ++r)
            std::copy_n(x.data() + r * widths[i], widths[i], out.data() + r * total + col);
        col += widths[i];
    }
    std::vector<const TensorT<T>*> ptrs;
    for (const auto& p : parts) ptrs.push_back(&p);
    return TensorT<T>::from_op({batch, total}, std::move(out),
                               std::span<const TensorT<T>* const>(ptrs),
                               [batch, total, widths](Node<T>& self) {
        std::size_t col = 0;
        for (std::size_t i = 0; i < widths.size(); ++i) {
            if (auto d = parent_grad(self, i); !d.empty()) {
                for (std::size_t r = 0; r < batch; ++r)
                    for (std::size_t j = 0; j < widths[i]; ++j)
                        d[r * widths[i] + j] += self.grad[r * total + col + j];
            }
            col += widths[i];
        }
    });
}

template <class T>
TensorT<T> repeat_batch(const TensorT<T>& p, std::size_t batch) {
    require_rank(p, 2, "repeat_batch");
    if (batch == 0) throw DimensionError("repeat_batch: batch must be positive");
    const std::size_t k = p.dim(0), d = p.dim(1);
    std::vector<T> out(batch * k * d);
    for (std::size_t s = 0; s < batch; ++s) std::copy_n(p.data().data(), k * d, out.data() + s * k * d);
    return TensorT<T>::from_op({batch, k, d}, std::move(out), {&p}, [batch, k, d](Node<T>& self) {
        auto dp = parent_grad(self, 0);
        for (std::size_t s = 0; s < batch; ++s)
            for (std::size_t i = 0; i < k * d; ++i) dp[i] += self.grad[s * k * d + i];
    });
}

template <class T>
TensorT<T> gather_rows(const TensorT<T>& table, std::span<const std::size_t> ids) {
    require_rank(table, 2, "gather_rows");
    const std::size_t rows = table.dim(0), d = table.dim(1);
    if (ids.empty()) throw DimensionError("gather_rows: empty index list");
    std::vector<T> out(ids.size() * d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= rows) {
            throw DimensionError("gather_rows: index " + std::to_string(ids[i]) +
                                 " out of range for " + shape_str(table.shape()));
        }
        std::copy_n(table.data().data() + ids[i] * d, d, out.data() + i * d);
    }
    std::vector<std::size_t> idx(ids.begin(), ids.end());
    return TensorT<T>::from_op({ids.size(), d}, std::move(out), {&table},
                               [idx = std::move(idx), d](Node<T>& self) {
        auto dt = parent_grad(self, 0);
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t j = 0; j < d; ++j) dt[idx[i] * d + j] += self.grad[i * d + j];
    });
}

template <class T>
TensorT<T> mean_tokens(const TensorT<T>& x) {
    require_rank(x, 3, "mean_tokens");
    const std::size_t batch = x.dim(0), k = x.dim(1), d = x.dim(2);
    std::vector<T> out(batch * d, T(0));
    const auto in = x.data();
    const T inv = T(1) / static_cast<T>(k);
    for (std::size_t s = 0; s < batch; ++s) {
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = 0; j < d; ++j) out[s * d + j] += in[(s * k + i) * d + j];
        for (std::size_t j = 0; j < d; ++j) out[s * d + j] *= inv;
    }
    return TensorT<T>::from_op({batch, d}, std::move(out), {&x}, [batch, k, d, inv](Node<T>& self) {
        auto dx = parent_grad(self, 0);
        for (std::size_t s = 0; s < batch; ++s)
            for (std::size_t i = 0; i < k; ++i)
                for (std::size_t j = 0; j < d; ++j) dx[(s * k + i) * d + j] += self.grad[s * d + j] * inv;
    });
}

template <class T>
TensorT<T> mse(const TensorT<T>& pred, const TensorT<T>& target) {
    require_same(pred, target, "mse");
    const auto p = pred.data();
    const auto t = target.data();
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double diff = static_cast<double>(p[i]) - static_cast<double>(t[i]);
        acc += diff * diff;
    }
    const double count = static_cast<double>(p.size());
    std::vector<T> out{static_cast<T>(acc / count)};
    return TensorT<T>::from_op({1}, std::move(out), {&pred, &target}, [count](Node<T>& self) {
        const auto& p = self.parents[0]->data;
        const auto& t = self.parents[1]->data;
        const T g = static_cast<T>(2.0 * static_cast<double>(self.grad[0]) / count);
        if (auto d = parent_grad(self, 0); !d.empty())
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g * (p[i] - t[i]);
        if (auto d = parent_grad(self, 1); !d.empty())
            for (std::size_t i = 0; i < d.size(); ++i) d[i] -= g * (p[i] - t[i]);
    });
}

template <class T>
TensorT<T> sum(const TensorT<T>& x) {
    double acc = 0.0;
    for (auto v : x.data()) acc += static_cast<double>(v);
    return TensorT<T>::from_op({1}, {static_cast<T>(acc)}, {&x}, [](Node<T>& self) {
        auto d = parent_grad(self, 0);
        for (auto& v : d) v += self.grad[0];
    });
}

template <class T>
TensorT<T> stop_gradient(const TensorT<T>& x) {
    return TensorT<T>(x.shape(), x.values(), false);
}

#define DI2_INSTANTIATE_OPS(T)                                                              \
    template TensorT<T> matmul(const TensorT<T>&, const TensorT<T>&);                       \
    template TensorT<T> bmm(const TensorT<T>&, const TensorT<T>&);                          \
    template TensorT<T> transpose(const TensorT<T>&);                                       \
    template TensorT<T> transpose_batched(const TensorT<T>&);                               \
    template TensorT<T> reshape(const TensorT<T>&, Shape);                                  \
    template TensorT<T> add(const TensorT<T>&, const TensorT<T>&);                          \
    template TensorT<T> sub(const TensorT<T>&, const TensorT<T>&);                          \
    template TensorT<T> mul(const TensorT<T>&, const TensorT<T>&);                          \
    template TensorT<T> scale(const TensorT<T>&, T);                                        \
    template TensorT<T> add_bias(const TensorT<T>&, const TensorT<T>&);                     \
    template TensorT<T> relu(const TensorT<T>&);                                            \
    template TensorT<T> softmax_rows(const TensorT<T>&);                                    \
    template TensorT<T> concat_tokens(const TensorT<T>&, const TensorT<T>&);                \
    template TensorT<T> concat_cols(std::span<const TensorT<T>>);                           \
    template TensorT<T> repeat_batch(const TensorT<T>&, std::size_t);                       \
    template TensorT<T> gather_rows(const TensorT<T>&, std::span<const std::size_t>);       \
    template TensorT<T> mean_tokens(const TensorT<T>&);                                     \
    template TensorT<T> mse(const TensorT<T>&, const TensorT<T>&);                          \
    template TensorT<T> sum(const TensorT<T>&);                                             \
    template TensorT<T> stop_gradient(const TensorT<T>&);

DI2_INSTANTIATE_OPS(float)
DI2_INSTANTIATE_OPS(double)

#undef DI2_INSTANTIATE_OPS

}  // namespace di2::ops
