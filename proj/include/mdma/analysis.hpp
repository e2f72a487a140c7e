#pragma once

#include <string>
#include <vector>

#include "mdma/eval.hpp"

namespace mdma {

/// Covariate selection for the per-segment perplexity regression:
/// response pp, numeric covariates, decade as categorical (reference level =
/// lowest decade), and politics dummy columns.
struct Formula {
    std::vector<std::string> numeric;      // subset of {"ocr", "year", "n"}
    std::vector<std::string> categorical;  // subset of {"decade"}
    std::vector<std::string> dummies;      // subset of {"con", "rad", "lib", "neu", "non"}

    static Formula standard();  // pp ~ ocr + C(decade) + con + rad + lib
};

struct DesignMatrix {
    std::vector<std::string> columns;  // first is "intercept"
    int rows = 0;
    int cols = 0;
    std::vector<double> x;  // row-major rows x cols
    std::vector<double> y;
};

DesignMatrix design(const std::vector<EvalRecord>& records, const Formula& formula);

struct RegressionTerm {
    std::string name;
    double coef = 0.0;
    double std_error = 0.0;
    double t = 0.0;
    double p = 0.0;
};

struct RegressionResult {
    std::vector<RegressionTerm> terms;
    double r_squared = 0.0;
    int df_resid = 0;
};

/// Least squares via Householder QR; standard errors from sigma^2 (X'X)^-1;
/// two-sided p-values from the Student-t distribution.
RegressionResult ols(const DesignMatrix& matrix);

void write_regression_csv(const RegressionResult& result, const std::string& path);

struct TTestResult {
    double t = 0.0;
    double p = 0.0;
    double df = 0.0;
};

/// Paired t-test on a-b with alternative "greater".
TTestResult paired_t_greater(const std::vector<double>& a, const std::vector<double>& b);

/// Welch two-sample t-test, two-sided.
TTestResult t_two_sided(const std::vector<double>& a, const std::vector<double>& b);

/// CDF of Student's t with (possibly fractional) df, via the regularized
/// incomplete beta function.
double student_t_cdf(double t, double df);

/// I_x(a, b) by continued fraction, converged to 1e-12.
double regularized_incomplete_beta(double a, double b, double x);

}  // namespace mdma
