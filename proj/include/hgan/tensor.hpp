#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace hgan {

/// Dense row-major tensor of 64-bit floats. Rank 1 and 2 cover everything
/// this project needs; rank is kept generic for the blob format.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape);
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor scalar(double v);
    static Tensor vec(std::vector<double> v);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v);
    static Tensor zeros_like(const Tensor& t);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    // rank-2 accessors; rank-1 tensors count as a single row
    std::size_t rows() const;
    std::size_t cols() const;

    double operator[](std::size_t i) const { return data_[i]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
    double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }

    const double* data() const { return data_.data(); }
    double* data() { return data_.data(); }
    const std::vector<double>& values() const { return data_; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    bool all_finite() const;
    void fill(double v);

    std::string shape_str() const;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

// Plain kernels used by forward ops and backward closures.
Tensor tmatmul(const Tensor& a, const Tensor& b);     // (N,K)x(K,M) -> (N,M)
Tensor tmatmul_nt(const Tensor& a, const Tensor& b);  // (N,K)x(M,K) -> (N,M), a.b^T
Tensor tmatmul_tn(const Tensor& a, const Tensor& b);  // (K,N)x(K,M) -> (N,M), a^T.b
Tensor touter(const Tensor& u, const Tensor& v);      // (R)x(C) -> (R,C)
double tdot(const Tensor& u, const Tensor& v);
double tnorm(const Tensor& u);
void taxpy(double a, const Tensor& x, Tensor& y);     // y += a*x

void require_same_shape(const Tensor& a, const Tensor& b, const char* op);

} // namespace hgan
