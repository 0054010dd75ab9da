#include "sid/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace sid {

static int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
        if (d < 0) throw std::invalid_argument("tensor dimension must be nonnegative");
        n *= d;
    }
    return n;
}

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0);
}

Tensor Tensor::full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    t.fill(v);
    return t;
}

Tensor Tensor::randn(std::vector<int> shape, Rng& rng, double stddev) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal() * stddev;
    return t;
}

Tensor Tensor::from_vector(std::vector<int> shape, std::vector<double> values) {
    if (shape_numel(shape) != static_cast<int64_t>(values.size()))
        throw std::invalid_argument("from_vector: element count does not match shape");
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(values);
    return t;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor& Tensor::add_(const Tensor& other) {
    check_same_shape(*this, other, "add_");
    const double* o = other.data();
    double* d = data();
    for (int64_t i = 0, n = numel(); i < n; ++i) d[i] += o[i];
    return *this;
}

Tensor& Tensor::axpy_(double a, const Tensor& other) {
    check_same_shape(*this, other, "axpy_");
    const double* o = other.data();
    double* d = data();
    for (int64_t i = 0, n = numel(); i < n; ++i) d[i] += a * o[i];
    return *this;
}

Tensor& Tensor::scale_(double a) {
    for (auto& v : data_) v *= a;
    return *this;
}

Tensor& Tensor::mul_(const Tensor& other) {
    check_same_shape(*this, other, "mul_");
    const double* o = other.data();
    double* d = data();
    for (int64_t i = 0, n = numel(); i < n; ++i) d[i] *= o[i];
    return *this;
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

double Tensor::min_value() const {
    return data_.empty() ? 0.0 : *std::min_element(data_.begin(), data_.end());
}

double Tensor::max_value() const {
    return data_.empty() ? 0.0 : *std::max_element(data_.begin(), data_.end());
}

double Tensor::abs_max() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::fabs(v));
    return m;
}

double Tensor::sum() const {
    double s = 0.0;
    for (double v : data_) s += v;
    return s;
}

double Tensor::dot(const Tensor& other) const {
    check_same_shape(*this, other, "dot");
    double s = 0.0;
    for (int64_t i = 0, n = numel(); i < n; ++i) s += data_[static_cast<size_t>(i)] * other[i];
    return s;
}

double Tensor::l2_norm() const { return std::sqrt(dot(*this)); }

std::string Tensor::shape_string() const {
    std::ostringstream os;
    os << '(';
    for (size_t i = 0; i < shape_.size(); ++i) {
        if (i) os << 'x';
        os << shape_[i];
    }
    os << ')';
    return os.str();
}

Tensor operator+(const Tensor& a, const Tensor& b) {
    Tensor r = a;
    r.add_(b);
    return r;
}

Tensor operator-(const Tensor& a, const Tensor& b) {
    Tensor r = a;
    r.axpy_(-1.0, b);
    return r;
}

Tensor operator*(const Tensor& a, double s) {
    Tensor r = a;
    r.scale_(s);
    return r;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape_string() +
                                    " vs " + b.shape_string());
    }
}

}  // namespace sid
