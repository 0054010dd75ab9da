#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "sid/rng.hpp"

namespace sid {

// Dense row-major double tensor. Images are stored channel-major (C, H, W).
// Small fixed API; hot loops work on raw pointers.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);
    Tensor(std::initializer_list<int> shape) : Tensor(std::vector<int>(shape)) {}

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<int> shape, double v);
    static Tensor randn(std::vector<int> shape, Rng& rng, double stddev = 1.0);
    static Tensor from_vector(std::vector<int> shape, std::vector<double> values);

    const std::vector<int>& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    double& at(int i0) { return data_[static_cast<size_t>(i0)]; }
    double& at(int i0, int i1) { return data_[static_cast<size_t>(i0) * shape_[1] + i1]; }
    double& at(int i0, int i1, int i2) {
        return data_[(static_cast<size_t>(i0) * shape_[1] + i1) * shape_[2] + i2];
    }
    double& at(int i0, int i1, int i2, int i3) {
        return data_[((static_cast<size_t>(i0) * shape_[1] + i1) * shape_[2] + i2) * shape_[3] + i3];
    }
    double at(int i0) const { return data_[static_cast<size_t>(i0)]; }
    double at(int i0, int i1) const { return data_[static_cast<size_t>(i0) * shape_[1] + i1]; }
    double at(int i0, int i1, int i2) const {
        return data_[(static_cast<size_t>(i0) * shape_[1] + i1) * shape_[2] + i2];
    }
    double at(int i0, int i1, int i2, int i3) const {
        return data_[((static_cast<size_t>(i0) * shape_[1] + i1) * shape_[2] + i2) * shape_[3] + i3];
    }

    void fill(double v);
    void zero() { fill(0.0); }

    Tensor& add_(const Tensor& other);               // this += other
    Tensor& axpy_(double a, const Tensor& other);    // this += a * other
    Tensor& scale_(double a);                        // this *= a
    Tensor& mul_(const Tensor& other);               // elementwise

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;
    double min_value() const;
    double max_value() const;
    double abs_max() const;
    double sum() const;
    double dot(const Tensor& other) const;
    double l2_norm() const;

    std::string shape_string() const;

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, double s);

// Throws std::invalid_argument naming `what` when shapes differ.
void check_same_shape(const Tensor& a, const Tensor& b, const char* what);

}  // namespace sid
