#include "babyit/regression.hpp"

#include <cmath>
#include <numeric>

#include <Eigen/Dense>
#include <fmt/format.h>
#include <fmt/ranges.h>

namespace babyit::stats {

namespace {

constexpr double kPivotTolerance = 1e-10;

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

struct Factor {
    Mat l;                      // lower-triangular, in pivoted order
    std::vector<Eigen::Index> perm;  // perm[k] = original column at pivot k
    Eigen::Index rank = 0;
};

// Outer-product Cholesky with the largest remaining diagonal as pivot; stops
// at the first pivot below tolerance.
Factor pivoted_cholesky(Mat a) {
    const auto p = a.rows();
    Factor f;
    f.l = Mat::Zero(p, p);
    f.perm.resize(static_cast<std::size_t>(p));
    std::iota(f.perm.begin(), f.perm.end(), Eigen::Index{0});
    for (Eigen::Index k = 0; k < p; ++k) {
        Eigen::Index best = k;
        for (Eigen::Index j = k + 1; j < p; ++j) {
            if (a(j, j) > a(best, best)) {
                best = j;
            }
        }
        if (a(best, best) <= kPivotTolerance) {
            f.rank = k;
            return f;
        }
        if (best != k) {
            a.row(k).swap(a.row(best));
            a.col(k).swap(a.col(best));
            f.l.row(k).swap(f.l.row(best));
            std::swap(f.perm[static_cast<std::size_t>(k)], f.perm[static_cast<std::size_t>(best)]);
        }
        const double pivot = std::sqrt(a(k, k));
        f.l(k, k) = pivot;
        for (Eigen::Index i = k + 1; i < p; ++i) {
            f.l(i, k) = a(i, k) / pivot;
        }
        for (Eigen::Index i = k + 1; i < p; ++i) {
            for (Eigen::Index j = k + 1; j <= i; ++j) {
                a(i, j) -= f.l(i, k) * f.l(j, k);
                a(j, i) = a(i, j);
            }
        }
    }
    f.rank = p;
    return f;
}

}  // namespace

OlsFit ols(const std::vector<std::vector<double>>& predictors, const std::vector<std::string>& names, const std::vector<double>& y) {
    const auto n = static_cast<Eigen::Index>(y.size());
    const auto p = static_cast<Eigen::Index>(predictors.size()) + 1;
    if (names.size() != predictors.size()) {
        throw Error("ols: one name per predictor required");
    }
    if (n < p + 1) {
        throw Error(fmt::format("ols: {} observations for {} coefficients", n, p));
    }
    Mat x(n, p);
    x.col(0).setOnes();
    for (Eigen::Index j = 1; j < p; ++j) {
        const auto& col = predictors[static_cast<std::size_t>(j - 1)];
        if (static_cast<Eigen::Index>(col.size()) != n) {
            throw Error(fmt::format("ols: predictor '{}' has {} values, expected {}", names[static_cast<std::size_t>(j - 1)], col.size(), n));
        }
        x.col(j) = Eigen::Map<const Vec>(col.data(), n);
    }
    const Eigen::Map<const Vec> yv(y.data(), n);
    const double mean = yv.mean();
    const double tss = (yv.array() - mean).square().sum();
    if (!(tss > 0.0)) {
        throw Error("ols: response has zero variance");
    }
    auto column_name = [&](Eigen::Index j) { return j == 0 ? std::string("intercept") : names[static_cast<std::size_t>(j - 1)]; };

    const Mat a = x.transpose() * x;
    const Vec b = x.transpose() * yv;
    Vec scale(p);
    for (Eigen::Index j = 0; j < p; ++j) {
        if (!(a(j, j) > 0.0)) {
            throw CollinearityError(fmt::format("ols: column '{}' is identically zero", column_name(j)), {column_name(j)});
        }
        scale(j) = 1.0 / std::sqrt(a(j, j));
    }
    const Mat as = scale.asDiagonal() * a * scale.asDiagonal();
    const auto f = pivoted_cholesky(as);
    if (f.rank < p) {
        // Name the first dependent column and the independent columns that
        // reproduce it.
        const auto r = f.rank;
        const auto dependent = f.perm[static_cast<std::size_t>(r)];
        std::vector<std::string> cols{column_name(dependent)};
        std::vector<std::string> partners;
        if (r > 0) {
            Mat ass(r, r);
            Vec rhs(r);
            for (Eigen::Index i = 0; i < r; ++i) {
                for (Eigen::Index j = 0; j < r; ++j) {
                    ass(i, j) = as(f.perm[static_cast<std::size_t>(i)], f.perm[static_cast<std::size_t>(j)]);
                }
                rhs(i) = as(f.perm[static_cast<std::size_t>(i)], dependent);
            }
            const Vec c = ass.llt().solve(rhs);
            for (Eigen::Index i = 0; i < r; ++i) {
                if (std::abs(c(i)) > 1e-8) {
                    partners.push_back(column_name(f.perm[static_cast<std::size_t>(i)]));
                }
            }
        }
        cols.insert(cols.end(), partners.begin(), partners.end());
        throw CollinearityError(fmt::format("ols: design matrix is rank deficient; column '{}' is collinear with [{}]", cols.front(),
                                            fmt::join(partners, ", ")),
                                cols);
    }

    Vec rhs(p);
    for (Eigen::Index k = 0; k < p; ++k) {
        const auto j = f.perm[static_cast<std::size_t>(k)];
        rhs(k) = scale(j) * b(j);
    }
    const auto lower = f.l.triangularView<Eigen::Lower>();
    const Vec w = lower.transpose().solve(lower.solve(rhs));
    Vec beta(p);
    for (Eigen::Index k = 0; k < p; ++k) {
        const auto j = f.perm[static_cast<std::size_t>(k)];
        beta(j) = scale(j) * w(k);
    }

    OlsFit fit;
    fit.coefficients.assign(beta.data(), beta.data() + p);
    fit.rss = (yv - x * beta).squaredNorm();
    fit.tss = tss;
    fit.r2 = 1.0 - fit.rss / tss;
    return fit;
}

double residual_share(const std::vector<std::vector<double>>& predictors, const std::vector<double>& x) {
    const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
    double tss = 0.0;
    for (double v : x) {
        tss += (v - mean) * (v - mean);
    }
    if (!(tss > 0.0)) {
        return 0.0;
    }
    std::vector<std::string> names(predictors.size());
    for (std::size_t i = 0; i < names.size(); ++i) {
        names[i] = fmt::format("x{}", i);
    }
    return 1.0 - ols(predictors, names, x).r2;
}

}  // namespace babyit::stats
