#pragma once

#include <cstddef>
#include <vector>

namespace feddm {

// Dense square matrix, row-major. Everything in this project is small
// (dimension <= 16), so no effort is spent on blocking or sparsity.
struct Matrix {
    std::size_t dim = 0;
    std::vector<double> a;

    Matrix() = default;
    explicit Matrix(std::size_t d) : dim(d), a(d * d, 0.0) {}

    double& at(std::size_t r, std::size_t c) { return a[r * dim + c]; }
    double at(std::size_t r, std::size_t c) const { return a[r * dim + c]; }

    static Matrix identity(std::size_t d);
    static Matrix scaled_identity(std::size_t d, double s);
};

Matrix operator*(const Matrix& x, const Matrix& y);

double frobenius_norm(const Matrix& m);
double trace(const Matrix& m);
bool is_symmetric(const Matrix& m, double tol);

// Eigendecomposition of a symmetric matrix: m = vectors * diag(values) * vectors^T,
// eigenvectors in columns, eigenvalues ascending.
struct SymEigen {
    std::vector<double> values;
    Matrix vectors;
};

// Cyclic Jacobi sweeps; stops once the off-diagonal Frobenius mass drops
// below 1e-12 (or rotations stop making progress). Input must be symmetric.
SymEigen jacobi_eigen(const Matrix& m);

// Symmetric PSD square root via eigendecomposition. Eigenvalues in
// [-clamp_tol, 0) are clamped to zero; anything below -clamp_tol throws.
Matrix psd_sqrt(const Matrix& m, double clamp_tol = 1e-10);

// Factor F with F * F^T = m (eigen-based, not Cholesky), for sampling.
Matrix psd_factor(const Matrix& m, double clamp_tol = 1e-10);

}  // namespace feddm
