#pragma once

#include "snell/error.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <vector>

namespace snell {

/// Monomials of total degree <= degree in d variables, evaluated on
/// standardized coordinates (x - center) / scale.
class PolynomialBasis {
public:
    PolynomialBasis(std::size_t dim, int degree) : dim_(dim), degree_(degree), center_(dim, 0.0), scale_(dim, 1.0) {
        require(dim >= 1, ErrorKind::dimension, "basis dimension must be positive");
        require(degree >= 0, ErrorKind::spec, "basis degree must be non-negative");
        std::vector<int> e(dim, 0);
        build(0, degree, e);
    }

    std::size_t dim() const { return dim_; }
    int degree() const { return degree_; }
    std::size_t size() const { return exponents_.size(); }
    const std::vector<std::vector<int>>& exponents() const { return exponents_; }

    /// Sets center and scale from the sample mean and standard deviation.
    void standardize(const Eigen::MatrixXd& x) {
        require(static_cast<std::size_t>(x.cols()) == dim_, ErrorKind::dimension, "sample has the wrong width");
        for (std::size_t c = 0; c < dim_; ++c) {
            const auto col = x.col(static_cast<Eigen::Index>(c));
            const double mean = col.mean();
            const double var = (col.array() - mean).square().mean();
            center_[c] = mean;
            scale_[c] = var > 1e-24 ? std::sqrt(var) : 1.0;
        }
    }

    void eval(std::span<const double> x, double* out) const {
        std::vector<double> z(dim_);
        for (std::size_t c = 0; c < dim_; ++c) z[c] = (x[c] - center_[c]) / scale_[c];
        for (std::size_t j = 0; j < exponents_.size(); ++j) {
            double v = 1.0;
            for (std::size_t c = 0; c < dim_; ++c)
                for (int p = 0; p < exponents_[j][c]; ++p) v *= z[c];
            out[j] = v;
        }
    }

    Eigen::MatrixXd design(const Eigen::MatrixXd& x) const {
        Eigen::MatrixXd a(x.rows(), static_cast<Eigen::Index>(size()));
        std::vector<double> row(dim_), vals(size());
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
            for (std::size_t c = 0; c < dim_; ++c) row[c] = x(r, static_cast<Eigen::Index>(c));
            eval(row, vals.data());
            for (std::size_t j = 0; j < size(); ++j) a(r, static_cast<Eigen::Index>(j)) = vals[j];
        }
        return a;
    }

private:
    void build(std::size_t c, int left, std::vector<int>& e) {
        if (c == dim_) {
            exponents_.push_back(e);
            return;
        }
        for (int p = 0; p <= left; ++p) {
            e[c] = p;
            build(c + 1, left - p, e);
        }
        e[c] = 0;
    }

    std::size_t dim_;
    int degree_;
    std::vector<double> center_;
    std::vector<double> scale_;
    std::vector<std::vector<int>> exponents_;
};

/// Least-squares fit of several targets at once on a shared design.
class Regression {
public:
    Regression(PolynomialBasis basis, const Eigen::MatrixXd& x, const Eigen::MatrixXd& targets)
        : basis_(std::move(basis)) {
        require(x.rows() == targets.rows(), ErrorKind::dimension, "regression sample sizes differ");
        basis_.standardize(x);
        const Eigen::MatrixXd a = basis_.design(x);
        coef_ = a.colPivHouseholderQr().solve(targets);
    }

    std::size_t targets() const { return static_cast<std::size_t>(coef_.cols()); }
    const Eigen::MatrixXd& coefficients() const { return coef_; }

    double predict(std::span<const double> x, std::size_t target) const {
        std::vector<double> v(basis_.size());
        basis_.eval(x, v.data());
        double s = 0.0;
        for (std::size_t j = 0; j < v.size(); ++j) s += v[j] * coef_(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(target));
        return s;
    }

    std::vector<double> predict_all(std::span<const double> x) const {
        std::vector<double> v(basis_.size());
        basis_.eval(x, v.data());
        std::vector<double> out(targets(), 0.0);
        for (std::size_t t = 0; t < out.size(); ++t)
            for (std::size_t j = 0; j < v.size(); ++j)
                out[t] += v[j] * coef_(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(t));
        return out;
    }

private:
    PolynomialBasis basis_;
    Eigen::MatrixXd coef_;
};

}  // namespace snell
