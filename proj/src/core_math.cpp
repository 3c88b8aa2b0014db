#include "resattn/core_math.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace resattn {

namespace {

[[noreturn, gnu::cold, gnu::noinline]] void dim_mismatch(std::size_t a, std::size_t b, const char* what) {
    throw std::invalid_argument(std::string(what) + ": dimension mismatch " + std::to_string(a) + " vs " +
                                std::to_string(b));
}

inline void require_same_dim(std::size_t a, std::size_t b, const char* what) {
    if (a != b) [[unlikely]] dim_mismatch(a, b, what);
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_string(a) + " vs " +
                                    shape_string(b));
    }
}

void require_finite(double x) {
    if (!std::isfinite(x)) {
        throw std::domain_error("non-finite input to elementwise nonlinearity");
    }
}

}  // namespace

Vector& Vector::operator+=(const Vector& other) {
    require_same_dim(dim(), other.dim(), "Vector +=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

Vector& Vector::operator-=(const Vector& other) {
    require_same_dim(dim(), other.dim(), "Vector -=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
    return *this;
}

Vector& Vector::operator*=(double scale) {
    for (double& x : data_) x *= scale;
    return *this;
}

Vector operator+(Vector lhs, const Vector& rhs) { return lhs += rhs; }
Vector operator-(Vector lhs, const Vector& rhs) { return lhs -= rhs; }
Vector operator*(double scale, Vector v) { return v *= scale; }

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> row_major)
    : rows_(rows), cols_(cols), data_(std::move(row_major)) {
    if (data_.size() != rows * cols) {
        throw std::invalid_argument("Matrix: " + std::to_string(data_.size()) + " values for shape " +
                                    std::to_string(rows) + "x" + std::to_string(cols));
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix& Matrix::operator+=(const Matrix& other) {
    require_same_shape(*this, other, "Matrix +=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

Matrix& Matrix::operator-=(const Matrix& other) {
    require_same_shape(*this, other, "Matrix -=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
    return *this;
}

Matrix& Matrix::operator*=(double scale) {
    for (double& x : data_) x *= scale;
    return *this;
}

std::string shape_string(const Matrix& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }

double dot(std::span<const double> a, std::span<const double> b) {
    require_same_dim(a.size(), b.size(), "dot");
    constexpr std::size_t kLanes = 8;
    double lane[kLanes] = {};
    const std::size_t n = a.size();
    std::size_t i = 0;
    for (; i + kLanes <= n; i += kLanes) {
        for (std::size_t l = 0; l < kLanes; ++l) lane[l] += a[i + l] * b[i + l];
    }
    double tail = 0.0;
    for (; i < n; ++i) tail += a[i] * b[i];
    return (((lane[0] + lane[4]) + (lane[2] + lane[6])) + ((lane[1] + lane[5]) + (lane[3] + lane[7]))) + tail;
}

double dot(const Vector& a, const Vector& b) { return dot(a.values(), b.values()); }

double norm2(const Vector& x) { return std::sqrt(dot(x, x)); }

double max_abs(std::span<const double> values) {
    double m = 0.0;
    for (double x : values) m = std::max(m, std::abs(x));
    return m;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    require_same_dim(a.size(), b.size(), "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

double frobenius_dot(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "frobenius_dot");
    return dot(a.values(), b.values());
}

Vector matvec(const Matrix& m, const Vector& x) {
    if (m.cols() != x.dim()) {
        throw std::invalid_argument("matvec: matrix " + shape_string(m) + " vs vector of dim " +
                                    std::to_string(x.dim()));
    }
    Vector y(m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) y[i] = dot(m.row(i), x.values());
    return y;
}

Vector matvec_transposed(const Matrix& m, const Vector& x) {
    if (m.rows() != x.dim()) {
        throw std::invalid_argument("matvec_transposed: matrix " + shape_string(m) + " vs vector of dim " +
                                    std::to_string(x.dim()));
    }
    Vector y(m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const double xi = x[i];
        const auto row = m.row(i);
        for (std::size_t j = 0; j < m.cols(); ++j) y[j] += xi * row[j];
    }
    return y;
}

Matrix outer(const Vector& u, const Vector& w) {
    Matrix m(u.dim(), w.dim());
    for (std::size_t i = 0; i < u.dim(); ++i) {
        auto row = m.row(i);
        for (std::size_t j = 0; j < w.dim(); ++j) row[j] = u[i] * w[j];
    }
    return m;
}

void add_outer(Matrix& m, double scale, const Vector& u, const Vector& w) {
    if (m.rows() != u.dim() || m.cols() != w.dim()) {
        throw std::invalid_argument("add_outer: matrix " + shape_string(m) + " vs outer " +
                                    std::to_string(u.dim()) + "x" + std::to_string(w.dim()));
    }
    for (std::size_t i = 0; i < u.dim(); ++i) {
        const double ui = scale * u[i];
        auto row = m.row(i);
        for (std::size_t j = 0; j < w.dim(); ++j) row[j] += ui * w[j];
    }
}

Matrix transpose(const Matrix& m) {
    Matrix t(m.cols(), m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
    }
    return t;
}

namespace {

// c = A b where A(i, k) = a[i * a_row + k * a_col]. Every c(i, j) is summed
// over k in ascending order from zero, whatever the tiling, so the result
// does not depend on the tile sizes.
void gemm(std::size_t m, std::size_t kdim, std::size_t n, const double* a, std::size_t a_row, std::size_t a_col,
          const double* b, double* c) {
    constexpr std::size_t kTi = 4;
    constexpr std::size_t kTj = 8;
    std::vector<double> panel(kdim * kTi);
    std::size_t i = 0;
    for (; i + kTi <= m; i += kTi) {
        for (std::size_t k = 0; k < kdim; ++k) {
            for (std::size_t r = 0; r < kTi; ++r) panel[k * kTi + r] = a[(i + r) * a_row + k * a_col];
        }
        std::size_t j = 0;
        for (; j + kTj <= n; j += kTj) {
            double acc[kTi][kTj] = {};
            for (std::size_t k = 0; k < kdim; ++k) {
                const double* brow = b + k * n + j;
                const double* ak = panel.data() + k * kTi;
                for (std::size_t r = 0; r < kTi; ++r) {
                    for (std::size_t jj = 0; jj < kTj; ++jj) acc[r][jj] += ak[r] * brow[jj];
                }
            }
            for (std::size_t r = 0; r < kTi; ++r) {
                for (std::size_t jj = 0; jj < kTj; ++jj) c[(i + r) * n + j + jj] = acc[r][jj];
            }
        }
        for (; j < n; ++j) {
            for (std::size_t r = 0; r < kTi; ++r) {
                double acc = 0.0;
                for (std::size_t k = 0; k < kdim; ++k) acc += a[(i + r) * a_row + k * a_col] * b[k * n + j];
                c[(i + r) * n + j] = acc;
            }
        }
    }
    for (; i < m; ++i) {
        double* out = c + i * n;
        for (std::size_t k = 0; k < kdim; ++k) {
            const double aik = a[i * a_row + k * a_col];
            const double* brow = b + k * n;
            for (std::size_t j = 0; j < n; ++j) out[j] += aik * brow[j];
        }
    }
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw std::invalid_argument("matmul: " + shape_string(a) + " times " + shape_string(b));
    }
    Matrix c(a.rows(), b.cols());
    gemm(a.rows(), a.cols(), b.cols(), a.values().data(), a.cols(), 1, b.values().data(), c.values().data());
    return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) {
        throw std::invalid_argument("matmul_nt: " + shape_string(a) + " times transpose of " + shape_string(b));
    }
    return matmul(a, transpose(b));
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) {
        throw std::invalid_argument("matmul_tn: transpose of " + shape_string(a) + " times " + shape_string(b));
    }
    Matrix c(a.cols(), b.cols());
    gemm(a.cols(), a.rows(), b.cols(), a.values().data(), 1, a.cols(), b.values().data(), c.values().data());
    return c;
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

double silu(double x) { return x * sigmoid(x); }

double clip(double x, double c) { return std::min(std::max(x, -c), c); }

double softplus_inverse(double y) {
    if (!(y > 0.0)) throw std::domain_error("softplus_inverse: argument must be positive");
    if (y > 30.0) return y;
    return std::log(std::expm1(y));
}

double apply(const Nonlinearity& f, double x) {
    switch (f.kind) {
        case Nonlinearity::Kind::kSilu:
            return silu(x);
        case Nonlinearity::Kind::kSigmoid:
            return sigmoid(x);
        case Nonlinearity::Kind::kSoftplus:
            return softplus(x);
        case Nonlinearity::Kind::kTanh:
            return std::tanh(x);
        case Nonlinearity::Kind::kClip:
            return clip(x, f.clip_c);
    }
    throw std::invalid_argument("unknown nonlinearity");
}

namespace {

void apply_in_place(const Nonlinearity& f, std::span<double> values) {
    if (f.kind == Nonlinearity::Kind::kClip && !(f.clip_c > 0.0)) {
        throw std::invalid_argument("clip threshold must be positive");
    }
    for (double& x : values) {
        require_finite(x);
        x = apply(f, x);
    }
}

}  // namespace

Vector elementwise(const Nonlinearity& f, const Vector& x) {
    Vector y = x;
    apply_in_place(f, y.values());
    return y;
}

Matrix elementwise(const Nonlinearity& f, const Matrix& x) {
    Matrix y = x;
    apply_in_place(f, y.values());
    return y;
}

Vector l2_normalize(const Vector& x, double eps) {
    const double denom = std::max(norm2(x), eps);
    Vector y = x;
    for (double& v : y.values()) v /= denom;
    return y;
}

}  // namespace resattn
