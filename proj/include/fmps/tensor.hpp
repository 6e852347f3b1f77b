#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "fmps/errors.hpp"

namespace fmps {

// Dense row-major tensor of 64-bit reals. Value-semantic; safe to copy and
// move across threads.
class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape)
        : shape_(std::move(shape)), data_(count(shape_), 0.0) {
        check_shape(shape_);
    }

    Tensor(std::vector<std::size_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        check_shape(shape_);
        if (count(shape_) != data_.size()) {
            throw ContractViolation("tensor data length " + std::to_string(data_.size()) +
                                    " does not match shape " + shape_string(shape_));
        }
    }

    // Constructor for data arriving from outside the process (files, user
    // input): rejects NaN/Inf up front.
    static Tensor validated(std::vector<std::size_t> shape, std::vector<double> data) {
        Tensor t(std::move(shape), std::move(data));
        if (!t.all_finite()) {
            throw ContractViolation("external tensor contains non-finite elements");
        }
        return t;
    }

    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<std::size_t> shape, double v) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    std::size_t rank() const { return shape_.size(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    Tensor reshaped(std::vector<std::size_t> shape) const {
        if (count(shape) != data_.size()) {
            throw ContractViolation("reshape from " + shape_string(shape_) + " to " +
                                    shape_string(shape) + " changes element count");
        }
        return Tensor(std::move(shape), data_);
    }

    static std::string shape_string(const std::vector<std::size_t>& s) {
        std::ostringstream os;
        os << "(";
        for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
        os << ")";
        return os.str();
    }

    static std::size_t count(const std::vector<std::size_t>& s) {
        return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
    }

  private:
    static void check_shape(const std::vector<std::size_t>& s) {
        for (std::size_t d : s)
            if (d == 0) throw ContractViolation("zero extent in shape " + shape_string(s));
    }

    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

namespace detail {
inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
        throw ContractViolation(std::string(op) + ": shape mismatch " +
                                Tensor::shape_string(a.shape()) + " vs " +
                                Tensor::shape_string(b.shape()));
    }
}
}  // namespace detail

inline Tensor operator+(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "add");
    Tensor r = a;
    for (std::size_t i = 0; i < r.size(); ++i) r[i] += b[i];
    return r;
}

inline Tensor operator-(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "sub");
    Tensor r = a;
    for (std::size_t i = 0; i < r.size(); ++i) r[i] -= b[i];
    return r;
}

// Element-wise (Hadamard) product.
inline Tensor operator*(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "mul");
    Tensor r = a;
    for (std::size_t i = 0; i < r.size(); ++i) r[i] *= b[i];
    return r;
}

inline Tensor operator*(double c, const Tensor& a) {
    Tensor r = a;
    for (std::size_t i = 0; i < r.size(); ++i) r[i] *= c;
    return r;
}

inline Tensor operator*(const Tensor& a, double c) { return c * a; }

inline Tensor& operator+=(Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "add");
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    return a;
}

inline double sum(const Tensor& a) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i];
    return s;
}

inline double mean(const Tensor& a) { return sum(a) / static_cast<double>(a.size()); }

inline double squared_l2(const Tensor& a) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * a[i];
    return s;
}

inline double l2_norm(const Tensor& a) { return std::sqrt(squared_l2(a)); }

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "max_abs_diff");
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// C = A * B for 2-D operands, (m x k)(k x n) -> (m x n).
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
        throw ContractViolation("matmul: incompatible shapes " +
                                Tensor::shape_string(a.shape()) + " vs " +
                                Tensor::shape_string(b.shape()));
    }
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    Tensor c({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a.data() + i * k;
        double* crow = c.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

// A^T * B without materializing the transpose.
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape()[0] != b.shape()[0]) {
        throw ContractViolation("matmul_tn: incompatible shapes " +
                                Tensor::shape_string(a.shape()) + " vs " +
                                Tensor::shape_string(b.shape()));
    }
    const std::size_t k = a.shape()[0], m = a.shape()[1], n = b.shape()[1];
    Tensor c({m, n});
    for (std::size_t p = 0; p < k; ++p) {
        const double* arow = a.data() + p * m;
        const double* brow = b.data() + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = arow[i];
            double* crow = c.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

// A * B^T without materializing the transpose.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[1]) {
        throw ContractViolation("matmul_nt: incompatible shapes " +
                                Tensor::shape_string(a.shape()) + " vs " +
                                Tensor::shape_string(b.shape()));
    }
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
    Tensor c({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a.data() + i * k;
        double* crow = c.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b.data() + j * k;
            double s = 0;
            for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
            crow[j] += s;
        }
    }
    return c;
}

// Non-overlapping k x k average pooling of an (h x w) map; h and w must be
// divisible by k.
inline Tensor avg_pool2(const Tensor& x, std::size_t k) {
    if (x.rank() != 2 || k == 0 || x.shape()[0] % k != 0 || x.shape()[1] % k != 0) {
        throw ContractViolation("avg_pool2: shape " + Tensor::shape_string(x.shape()) +
                                " not divisible by pool factor " + std::to_string(k));
    }
    const std::size_t oh = x.shape()[0] / k, ow = x.shape()[1] / k;
    Tensor y({oh, ow});
    const double inv = 1.0 / static_cast<double>(k * k);
    for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
            double s = 0;
            for (std::size_t u = 0; u < k; ++u)
                for (std::size_t v = 0; v < k; ++v) s += x.at(i * k + u, j * k + v);
            y.at(i, j) = s * inv;
        }
    return y;
}

// Zero-padded same-size 2-D convolution of an (h x w) map with an odd square
// kernel.
inline Tensor conv2d_same(const Tensor& x, const Tensor& kernel) {
    if (x.rank() != 2 || kernel.rank() != 2 || kernel.shape()[0] != kernel.shape()[1] ||
        kernel.shape()[0] % 2 == 0) {
        throw ContractViolation("conv2d_same: needs 2-D input and odd square kernel, got " +
                                Tensor::shape_string(x.shape()) + " and " +
                                Tensor::shape_string(kernel.shape()));
    }
    const std::size_t h = x.shape()[0], w = x.shape()[1], ks = kernel.shape()[0];
    const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(ks / 2);
    Tensor y({h, w});
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
            double s = 0;
            for (std::size_t u = 0; u < ks; ++u)
                for (std::size_t v = 0; v < ks; ++v) {
                    const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i) + static_cast<std::ptrdiff_t>(u) - p;
                    const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(j) + static_cast<std::ptrdiff_t>(v) - p;
                    if (ii < 0 || jj < 0 || ii >= static_cast<std::ptrdiff_t>(h) ||
                        jj >= static_cast<std::ptrdiff_t>(w))
                        continue;
                    s += kernel.at(u, v) * x.at(static_cast<std::size_t>(ii), static_cast<std::size_t>(jj));
                }
            y.at(i, j) = s;
        }
    return y;
}

// Normalized Gaussian blur kernel, odd size.
inline Tensor gaussian_kernel(std::size_t size, double sigma) {
    if (size % 2 == 0 || size == 0 || sigma <= 0) {
        throw ContractViolation("gaussian_kernel: size must be odd and sigma > 0");
    }
    Tensor k({size, size});
    const double c = static_cast<double>(size / 2);
    double total = 0;
    for (std::size_t i = 0; i < size; ++i)
        for (std::size_t j = 0; j < size; ++j) {
            const double di = static_cast<double>(i) - c, dj = static_cast<double>(j) - c;
            const double v = std::exp(-(di * di + dj * dj) / (2 * sigma * sigma));
            k.at(i, j) = v;
            total += v;
        }
    for (std::size_t i = 0; i < k.size(); ++i) k[i] /= total;
    return k;
}

}  // namespace fmps
