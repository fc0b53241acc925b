#include "feddm/linalg.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace feddm {

Matrix Matrix::identity(std::size_t d) {
    Matrix m(d);
    for (std::size_t i = 0; i < d; ++i) m.at(i, i) = 1.0;
    return m;
}

Matrix Matrix::scaled_identity(std::size_t d, double s) {
    Matrix m(d);
    for (std::size_t i = 0; i < d; ++i) m.at(i, i) = s;
    return m;
}

Matrix operator*(const Matrix& x, const Matrix& y) {
    if (x.dim != y.dim) throw std::invalid_argument("matrix dimension mismatch");
    Matrix out(x.dim);
    for (std::size_t r = 0; r < x.dim; ++r) {
        for (std::size_t k = 0; k < x.dim; ++k) {
            const double xv = x.at(r, k);
            if (xv == 0.0) continue;
            for (std::size_t c = 0; c < x.dim; ++c) {
                out.at(r, c) += xv * y.at(k, c);
            }
        }
    }
    return out;
}

double frobenius_norm(const Matrix& m) {
    double s = 0.0;
    for (double v : m.a) s += v * v;
    return std::sqrt(s);
}

double trace(const Matrix& m) {
    double s = 0.0;
    for (std::size_t i = 0; i < m.dim; ++i) s += m.at(i, i);
    return s;
}

bool is_symmetric(const Matrix& m, double tol) {
    for (std::size_t r = 0; r < m.dim; ++r) {
        for (std::size_t c = r + 1; c < m.dim; ++c) {
            if (std::fabs(m.at(r, c) - m.at(c, r)) > tol) return false;
        }
    }
    return true;
}

namespace {

double offdiag_mass(const Matrix& m) {
    double s = 0.0;
    for (std::size_t r = 0; r < m.dim; ++r) {
        for (std::size_t c = 0; c < m.dim; ++c) {
            if (r != c) s += m.at(r, c) * m.at(r, c);
        }
    }
    return std::sqrt(s);
}

}  // namespace

SymEigen jacobi_eigen(const Matrix& input) {
    if (!is_symmetric(input, 1e-9 * (1.0 + frobenius_norm(input)))) {
        throw std::invalid_argument("jacobi_eigen: matrix not symmetric");
    }
    const std::size_t n = input.dim;
    Matrix a = input;
    Matrix v = Matrix::identity(n);

    constexpr double kOffTol = 1e-12;
    constexpr int kMaxSweeps = 64;
    for (int sweep = 0; sweep < kMaxSweeps && offdiag_mass(a) >= kOffTol; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a.at(p, q);
                if (apq == 0.0) continue;
                const double app = a.at(p, p);
                const double aqq = a.at(q, q);
                // classic symmetric Schur rotation
                const double tau = (aqq - app) / (2.0 * apq);
                double t;
                if (tau >= 0.0) {
                    t = 1.0 / (tau + std::sqrt(1.0 + tau * tau));
                } else {
                    t = -1.0 / (-tau + std::sqrt(1.0 + tau * tau));
                }
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = t * c;
                if (s == 0.0) continue;
                rotated = true;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a.at(k, p);
                    const double akq = a.at(k, q);
                    a.at(k, p) = c * akp - s * akq;
                    a.at(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a.at(p, k);
                    const double aqk = a.at(q, k);
                    a.at(p, k) = c * apk - s * aqk;
                    a.at(q, k) = s * apk + c * aqk;
                }
                a.at(p, q) = 0.0;
                a.at(q, p) = 0.0;
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v.at(k, p);
                    const double vkq = v.at(k, q);
                    v.at(k, p) = c * vkp - s * vkq;
                    v.at(k, q) = s * vkp + c * vkq;
                }
            }
        }
        if (!rotated) break;
    }

    SymEigen out;
    out.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.values[i] = a.at(i, i);
    out.vectors = v;

    // sort ascending, reordering eigenvector columns to match
    for (std::size_t i = 0; i + 1 < n; ++i) {
        std::size_t min_j = i;
        for (std::size_t j = i + 1; j < n; ++j) {
            if (out.values[j] < out.values[min_j]) min_j = j;
        }
        if (min_j != i) {
            std::swap(out.values[i], out.values[min_j]);
            for (std::size_t k = 0; k < n; ++k) {
                std::swap(out.vectors.at(k, i), out.vectors.at(k, min_j));
            }
        }
    }
    return out;
}

namespace {

// Columns of Q scaled by sqrt(clamped eigenvalues); F with F F^T = m.
Matrix spectral_root_factor(const Matrix& m, double clamp_tol, const char* what) {
    SymEigen eig = jacobi_eigen(m);
    for (double& lam : eig.values) {
        if (lam < -clamp_tol) {
            throw std::invalid_argument(std::string(what) +
                                        ": matrix not PSD (eigenvalue " +
                                        std::to_string(lam) + ")");
        }
        lam = lam < 0.0 ? 0.0 : std::sqrt(lam);
    }
    Matrix f = eig.vectors;
    for (std::size_t c = 0; c < m.dim; ++c) {
        for (std::size_t r = 0; r < m.dim; ++r) {
            f.at(r, c) *= eig.values[c];
        }
    }
    return f;
}

}  // namespace

Matrix psd_sqrt(const Matrix& m, double clamp_tol) {
    SymEigen eig = jacobi_eigen(m);
    std::vector<double> root(m.dim);
    for (std::size_t i = 0; i < m.dim; ++i) {
        const double lam = eig.values[i];
        if (lam < -clamp_tol) {
            throw std::invalid_argument("psd_sqrt: matrix not PSD (eigenvalue " +
                                        std::to_string(lam) + ")");
        }
        root[i] = lam < 0.0 ? 0.0 : std::sqrt(lam);
    }
    Matrix out(m.dim);
    for (std::size_t r = 0; r < m.dim; ++r) {
        for (std::size_t c = 0; c < m.dim; ++c) {
            double s = 0.0;
            for (std::size_t k = 0; k < m.dim; ++k) {
                s += eig.vectors.at(r, k) * root[k] * eig.vectors.at(c, k);
            }
            out.at(r, c) = s;
        }
    }
    return out;
}

Matrix psd_factor(const Matrix& m, double clamp_tol) {
    return spectral_root_factor(m, clamp_tol, "psd_factor");
}

}  // namespace feddm
