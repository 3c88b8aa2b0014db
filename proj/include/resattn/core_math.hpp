#pragma once

// Dense 64-bit linear algebra and elementwise nonlinearities.
//
// Every reduction has a fixed order, so results are bit-reproducible for a
// given build. Dot products keep eight interleaved partial sums (lane
// i mod 8) combined in a fixed tree, then add the tail. Matrix products
// accumulate each output entry over k in ascending order.

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace resattn {

struct Seed {
    std::uint64_t value = 0;
};

class Vector {
public:
    Vector() = default;
    explicit Vector(std::size_t dim) : data_(dim, 0.0) {}
    Vector(std::initializer_list<double> values) : data_(values) {}
    explicit Vector(std::vector<double> values) : data_(std::move(values)) {}

    std::size_t dim() const { return data_.size(); }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }
    const std::vector<double>& data() const { return data_; }

    Vector& operator+=(const Vector& other);
    Vector& operator-=(const Vector& other);
    Vector& operator*=(double scale);

    bool operator==(const Vector& other) const = default;

private:
    std::vector<double> data_;
};

Vector operator+(Vector lhs, const Vector& rhs);
Vector operator-(Vector lhs, const Vector& rhs);
Vector operator*(double scale, Vector v);

class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> row_major);

    static Matrix identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }

    Matrix& operator+=(const Matrix& other);
    Matrix& operator-=(const Matrix& other);
    Matrix& operator*=(double scale);

    bool operator==(const Matrix& other) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

std::string shape_string(const Matrix& m);

double dot(std::span<const double> a, std::span<const double> b);
double dot(const Vector& a, const Vector& b);
double norm2(const Vector& x);
double max_abs(std::span<const double> values);
double max_abs_diff(std::span<const double> a, std::span<const double> b);
// Sum over entries of a .* b.
double frobenius_dot(const Matrix& a, const Matrix& b);

// m x, row-major ascending summation.
Vector matvec(const Matrix& m, const Vector& x);
// m^T x.
Vector matvec_transposed(const Matrix& m, const Vector& x);
Matrix outer(const Vector& u, const Vector& w);
// m += scale * u w^T
void add_outer(Matrix& m, double scale, const Vector& u, const Vector& w);

Matrix transpose(const Matrix& m);
// a b
Matrix matmul(const Matrix& a, const Matrix& b);
// a b^T
Matrix matmul_nt(const Matrix& a, const Matrix& b);
// a^T b
Matrix matmul_tn(const Matrix& a, const Matrix& b);

double sigmoid(double x);
// ln(1 + e^x), exact branches beyond |x| > 30.
double softplus(double x);
double silu(double x);
double clip(double x, double c);
// Inverse of softplus for y > 0.
double softplus_inverse(double y);

struct Nonlinearity {
    enum class Kind { kSilu, kSigmoid, kSoftplus, kTanh, kClip };
    Kind kind = Kind::kSilu;
    double clip_c = 0.0;

    static Nonlinearity silu() { return {Kind::kSilu, 0.0}; }
    static Nonlinearity sigmoid() { return {Kind::kSigmoid, 0.0}; }
    static Nonlinearity softplus() { return {Kind::kSoftplus, 0.0}; }
    static Nonlinearity tanh() { return {Kind::kTanh, 0.0}; }
    static Nonlinearity clip(double c) { return {Kind::kClip, c}; }
};

double apply(const Nonlinearity& f, double x);
// Throws std::domain_error on non-finite entries, std::invalid_argument on clip c <= 0.
Vector elementwise(const Nonlinearity& f, const Vector& x);
Matrix elementwise(const Nonlinearity& f, const Matrix& x);

// x / max(||x||, eps)
Vector l2_normalize(const Vector& x, double eps = 1e-12);

}  // namespace resattn
