#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "llcm/rng.hpp"

namespace llcm {

/// Raised for any contract violation (bad shapes, out-of-range arguments,
/// malformed inputs). Numeric blow-ups use NumericError instead.
class Error : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

class NumericError : public Error {
   public:
    using Error::Error;
};

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
    os << ')';
    return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

/// Dense row-major tensor of doubles. Most operations treat it as a matrix
/// of shape (rows, cols); a 1-D tensor is a single row.
class Tensor {
   public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

    Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (shape_numel(shape_) != data_.size())
            throw Error("tensor: shape " + shape_str(shape_) + " does not match " + std::to_string(data_.size()) + " values");
    }

    static Tensor zeros(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}); }
    static Tensor full(std::size_t rows, std::size_t cols, double v) { return Tensor({rows, cols}, v); }
    static Tensor scalar(double v) { return Tensor({1, 1}, v); }

    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
        return Tensor({rows, cols}, std::move(data));
    }

    static Tensor randn(std::size_t rows, std::size_t cols, Rng& rng) {
        Tensor t({rows, cols});
        for (auto& v : t.data_) v = rng.normal();
        return t;
    }

    const Shape& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::size_t rows() const {
        if (shape_.empty()) return 0;
        return shape_.size() == 1 ? 1 : shape_[0];
    }
    std::size_t cols() const {
        if (shape_.empty()) return 0;
        return shape_.size() == 1 ? shape_[0] : size() / shape_[0];
    }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }
    std::span<double> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    double sum() const {
        double s = 0.0;
        for (double v : data_) s += v;
        return s;
    }

    double max_abs() const {
        double m = 0.0;
        for (double v : data_) m = std::max(m, std::abs(v));
        return m;
    }

    bool operator==(const Tensor& o) const = default;

   private:
    Shape shape_;
    std::vector<double> data_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b))
        throw Error(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

inline void require_finite(const Tensor& t, const std::string& what) {
    if (!t.all_finite()) throw NumericError(what + ": non-finite value");
}

// Elementwise helpers used by the samplers; the autodiff tape has its own ops.

inline Tensor axpby(double a, const Tensor& x, double b, const Tensor& y) {
    require_same_shape(x, y, "axpby");
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = a * x[i] + b * y[i];
    return out;
}

/// out[r, :] = a[r] * x[r, :] + b[r] * y[r, :]
inline Tensor row_axpby(std::span<const double> a, const Tensor& x, std::span<const double> b, const Tensor& y) {
    require_same_shape(x, y, "row_axpby");
    if (a.size() != x.rows() || b.size() != x.rows()) throw Error("row_axpby: coefficient count does not match batch");
    Tensor out(x.shape());
    const std::size_t c = x.cols();
    for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t j = 0; j < c; ++j) out(r, j) = a[r] * x(r, j) + b[r] * y(r, j);
    return out;
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return axpby(1.0, a, 1.0, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return axpby(1.0, a, -1.0, b); }

inline Tensor operator*(double s, const Tensor& a) {
    Tensor out = a;
    for (auto& v : out.values()) v *= s;
    return out;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

/// Rows [begin, end) as a new tensor.
inline Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end) {
    if (begin > end || end > t.rows()) throw Error("slice_rows: range out of bounds");
    const std::size_t c = t.cols();
    std::vector<double> d(t.values().begin() + static_cast<std::ptrdiff_t>(begin * c),
                          t.values().begin() + static_cast<std::ptrdiff_t>(end * c));
    return Tensor::matrix(end - begin, c, std::move(d));
}

}  // namespace llcm
