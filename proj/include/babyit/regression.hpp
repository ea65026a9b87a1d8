#pragma once

// Ordinary least squares through the normal equations, factored with a
// diagonally pivoted Cholesky decomposition.

#include <string>
#include <vector>

#include "babyit/common.hpp"

namespace babyit::stats {

struct OlsFit {
    std::vector<double> coefficients;  // intercept first, then one per predictor
    double r2 = 0.0;
    double rss = 0.0;
    double tss = 0.0;
};

// Raised for a rank-deficient design. columns names the dependent column
// followed by the columns it is a combination of.
class CollinearityError : public Error {
public:
    CollinearityError(const std::string& what, std::vector<std::string> columns) : Error(what), columns(std::move(columns)) {}
    std::vector<std::string> columns;
};

// Fits y ~ 1 + predictors. predictors holds one vector per column; names
// labels them in diagnostics. Throws Error when y has zero variance or the
// sizes disagree.
OlsFit ols(const std::vector<std::vector<double>>& predictors, const std::vector<std::string>& names, const std::vector<double>& y);

// Share of the variance of x (around its mean) left after projecting onto
// 1 + predictors. 0 means x lies in their span.
double residual_share(const std::vector<std::vector<double>>& predictors, const std::vector<double>& x);

}  // namespace babyit::stats
