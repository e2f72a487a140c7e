#include "mdma/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace mdma {

namespace {

double numeric_covariate(const EvalRecord& record, const std::string& name) {
    if (name == "ocr") return record.ocr;
    if (name == "year") return static_cast<double>(record.year);
    if (name == "n") return static_cast<double>(record.n);
    throw std::invalid_argument("unknown numeric covariate: '" + name + "'");
}

Politics dummy_politics(const std::string& name) {
    if (name == "con") return Politics::Conservative;
    if (name == "rad") return Politics::Radical;
    if (name == "lib") return Politics::Liberal;
    if (name == "neu") return Politics::Neutral;
    if (name == "non") return Politics::None;
    throw std::invalid_argument("unknown politics dummy: '" + name + "'");
}

std::string format_double(double v) {
    std::ostringstream out;
    out.precision(12);
    out << v;
    return out.str();
}

}  // namespace

Formula Formula::standard() {
    Formula f;
    f.numeric = {"ocr"};
    f.categorical = {"decade"};
    f.dummies = {"con", "rad", "lib"};
    return f;
}

DesignMatrix design(const std::vector<EvalRecord>& records, const Formula& formula) {
    if (records.empty()) {
        throw std::invalid_argument("design: no records");
    }
    for (const std::string& name : formula.categorical) {
        if (name != "decade") {
            throw std::invalid_argument("unknown categorical covariate: '" + name + "'");
        }
    }

    DesignMatrix m;
    m.columns.push_back("intercept");
    for (const std::string& name : formula.numeric) {
        m.columns.push_back(name);
    }
    std::vector<int> decade_levels;
    if (!formula.categorical.empty()) {
        std::set<int> decades;
        for (const EvalRecord& r : records) {
            decades.insert(r.decade);
        }
        // lowest decade is the reference level
        decade_levels.assign(std::next(decades.begin()), decades.end());
        for (int decade : decade_levels) {
            m.columns.push_back("dec_" + std::to_string(decade));
        }
    }
    for (const std::string& name : formula.dummies) {
        dummy_politics(name);  // validates
        m.columns.push_back(name);
    }

    m.rows = static_cast<int>(records.size());
    m.cols = static_cast<int>(m.columns.size());
    if (m.rows <= m.cols) {
        throw std::invalid_argument("design: " + std::to_string(m.rows) + " records cannot fit " +
                                    std::to_string(m.cols) +
                                    " columns with residual degrees of freedom");
    }
    m.x.assign(static_cast<std::size_t>(m.rows) * m.cols, 0.0);
    m.y.resize(m.rows);
    for (int r = 0; r < m.rows; ++r) {
        const EvalRecord& record = records[r];
        double* row = m.x.data() + static_cast<std::size_t>(r) * m.cols;
        int c = 0;
        row[c++] = 1.0;
        for (const std::string& name : formula.numeric) {
            row[c++] = numeric_covariate(record, name);
        }
        for (int decade : decade_levels) {
            row[c++] = record.decade == decade ? 1.0 : 0.0;
        }
        for (const std::string& name : formula.dummies) {
            row[c++] = record.politics == dummy_politics(name) ? 1.0 : 0.0;
        }
        m.y[r] = record.pp;
    }

    // a constant non-intercept column is collinear with the intercept
    for (int c = 1; c < m.cols; ++c) {
        const double first = m.x[c];
        bool constant = true;
        for (int r = 1; r < m.rows && constant; ++r) {
            constant = m.x[static_cast<std::size_t>(r) * m.cols + c] == first;
        }
        if (constant) {
            throw std::runtime_error("design: column '" + m.columns[c] +
                                     "' is constant over the sample");
        }
    }
    return m;
}

RegressionResult ols(const DesignMatrix& matrix) {
    const int n = matrix.rows;
    const int k = matrix.cols;
    if (n <= k) {
        throw std::invalid_argument("ols: need more rows than columns");
    }

    // Householder QR of X (n x k), applied to y as we go.
    std::vector<double> a = matrix.x;  // becomes R in the upper triangle
    std::vector<double> qty = matrix.y;
    std::vector<double> house(n);
    double max_diag = 0.0;
    for (int j = 0; j < k; ++j) {
        double norm = 0.0;
        for (int i = j; i < n; ++i) {
            const double v = a[static_cast<std::size_t>(i) * k + j];
            norm += v * v;
        }
        norm = std::sqrt(norm);
        const double ajj = a[static_cast<std::size_t>(j) * k + j];
        const double alpha = ajj >= 0.0 ? -norm : norm;
        double vnorm_sq = 0.0;
        for (int i = j; i < n; ++i) {
            house[i] = a[static_cast<std::size_t>(i) * k + j];
        }
        house[j] -= alpha;
        for (int i = j; i < n; ++i) {
            vnorm_sq += house[i] * house[i];
        }
        if (vnorm_sq > 0.0) {
            for (int c = j; c < k; ++c) {
                double dot = 0.0;
                for (int i = j; i < n; ++i) {
                    dot += house[i] * a[static_cast<std::size_t>(i) * k + c];
                }
                const double scale = 2.0 * dot / vnorm_sq;
                for (int i = j; i < n; ++i) {
                    a[static_cast<std::size_t>(i) * k + c] -= scale * house[i];
                }
            }
            double dot = 0.0;
            for (int i = j; i < n; ++i) {
                dot += house[i] * qty[i];
            }
            const double scale = 2.0 * dot / vnorm_sq;
            for (int i = j; i < n; ++i) {
                qty[i] -= scale * house[i];
            }
        }
        max_diag = std::max(max_diag, std::abs(a[static_cast<std::size_t>(j) * k + j]));
    }

    const double tol = 1e-10 * std::max(1.0, max_diag);
    for (int j = 0; j < k; ++j) {
        if (std::abs(a[static_cast<std::size_t>(j) * k + j]) < tol) {
            throw std::runtime_error("ols: rank-deficient design, column '" + matrix.columns[j] +
                                     "' is linearly dependent on earlier columns");
        }
    }

    // back-substitution for beta
    std::vector<double> beta(k, 0.0);
    for (int j = k - 1; j >= 0; --j) {
        double acc = qty[j];
        for (int c = j + 1; c < k; ++c) {
            acc -= a[static_cast<std::size_t>(j) * k + c] * beta[c];
        }
        beta[j] = acc / a[static_cast<std::size_t>(j) * k + j];
    }

    // R^{-1} (upper triangular), then (X'X)^{-1} = R^{-1} R^{-T}
    std::vector<double> rinv(static_cast<std::size_t>(k) * k, 0.0);
    for (int j = 0; j < k; ++j) {
        rinv[static_cast<std::size_t>(j) * k + j] = 1.0 / a[static_cast<std::size_t>(j) * k + j];
        for (int i = j - 1; i >= 0; --i) {
            double acc = 0.0;
            for (int c = i + 1; c <= j; ++c) {
                acc += a[static_cast<std::size_t>(i) * k + c] * rinv[static_cast<std::size_t>(c) * k + j];
            }
            rinv[static_cast<std::size_t>(i) * k + j] = -acc / a[static_cast<std::size_t>(i) * k + i];
        }
    }

    // residuals and fit quality
    std::vector<double> residuals(n);
    double rss = 0.0;
    for (int r = 0; r < n; ++r) {
        double fitted = 0.0;
        const double* row = matrix.x.data() + static_cast<std::size_t>(r) * k;
        for (int c = 0; c < k; ++c) {
            fitted += row[c] * beta[c];
        }
        residuals[r] = matrix.y[r] - fitted;
        rss += residuals[r] * residuals[r];
    }
    double y_mean = 0.0;
    for (double v : matrix.y) {
        y_mean += v;
    }
    y_mean /= n;
    double tss = 0.0;
    for (double v : matrix.y) {
        tss += (v - y_mean) * (v - y_mean);
    }

    const int df = n - k;
    const double sigma_sq = rss / df;

    RegressionResult result;
    result.df_resid = df;
    result.r_squared = tss > 0.0 ? 1.0 - rss / tss : 1.0;
    result.terms.reserve(k);
    for (int j = 0; j < k; ++j) {
        double diag = 0.0;  // ((X'X)^{-1})_{jj} = sum_c R^{-1}[j,c]^2
        for (int c = j; c < k; ++c) {
            const double v = rinv[static_cast<std::size_t>(j) * k + c];
            diag += v * v;
        }
        RegressionTerm term;
        term.name = matrix.columns[j];
        term.coef = beta[j];
        term.std_error = std::sqrt(sigma_sq * diag);
        term.t = term.std_error > 0.0 ? term.coef / term.std_error : 0.0;
        term.p = 2.0 * (1.0 - student_t_cdf(std::abs(term.t), df));
        result.terms.push_back(std::move(term));
    }
    return result;
}

void write_regression_csv(const RegressionResult& result, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot open for writing: " + path);
    }
    out << "term,coefficient,std_error,t,p\n";
    for (const RegressionTerm& term : result.terms) {
        out << term.name << ',' << format_double(term.coef) << ',' << format_double(term.std_error)
            << ',' << format_double(term.t) << ',' << format_double(term.p) << '\n';
    }
}

double regularized_incomplete_beta(double a, double b, double x) {
    if (x < 0.0 || x > 1.0) {
        throw std::invalid_argument("regularized_incomplete_beta: x outside [0,1]");
    }
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;
    if (x > (a + 1.0) / (a + b + 2.0)) {
        return 1.0 - regularized_incomplete_beta(b, a, 1.0 - x);
    }

    const double log_front = a * std::log(x) + b * std::log(1.0 - x) + std::lgamma(a + b) -
                             std::lgamma(a) - std::lgamma(b);

    // Lentz continued fraction for I_x(a,b); the initial d already carries the
    // i = 1 coefficient, so the loop starts at i = 2
    constexpr double kTiny = 1e-300;
    constexpr double kThreshold = 1e-12;
    double c = 1.0;
    double d = 1.0 - (a + b) * x / (a + 1.0);
    if (std::abs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double f = d;
    for (int i = 2; i <= 1000; ++i) {
        const int m = i / 2;
        double numerator;
        if (i % 2 == 0) {
            numerator = m * (b - m) * x / ((a + 2.0 * m - 1.0) * (a + 2.0 * m));
        } else {
            numerator = -((a + m) * (a + b + m) * x) / ((a + 2.0 * m) * (a + 2.0 * m + 1.0));
        }
        d = 1.0 + numerator * d;
        if (std::abs(d) < kTiny) d = kTiny;
        d = 1.0 / d;
        c = 1.0 + numerator / c;
        if (std::abs(c) < kTiny) c = kTiny;
        const double delta = c * d;
        f *= delta;
        if (std::abs(delta - 1.0) < kThreshold) {
            break;
        }
    }
    return std::exp(log_front) * f / a;
}

double student_t_cdf(double t, double df) {
    if (df <= 0.0) {
        throw std::invalid_argument("student_t_cdf: df must be positive");
    }
    if (t == 0.0) {
        return 0.5;
    }
    const double x = df / (df + t * t);
    const double tail = 0.5 * regularized_incomplete_beta(0.5 * df, 0.5, x);
    return t > 0.0 ? 1.0 - tail : tail;
}

TTestResult paired_t_greater(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) {
        throw std::invalid_argument("paired_t_greater: length mismatch");
    }
    const std::size_t n = a.size();
    if (n < 2) {
        throw std::invalid_argument("paired_t_greater: need at least 2 pairs");
    }
    std::vector<double> diff(n);
    for (std::size_t i = 0; i < n; ++i) {
        diff[i] = a[i] - b[i];
    }
    double mean = 0.0;
    for (double d : diff) {
        mean += d;
    }
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double d : diff) {
        var += (d - mean) * (d - mean);
    }
    var /= static_cast<double>(n - 1);
    if (var == 0.0) {
        throw std::runtime_error("paired_t_greater: differences have zero variance");
    }
    TTestResult result;
    result.df = static_cast<double>(n - 1);
    result.t = mean / std::sqrt(var / static_cast<double>(n));
    result.p = 1.0 - student_t_cdf(result.t, result.df);
    return result;
}

TTestResult t_two_sided(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() < 2 || b.size() < 2) {
        throw std::invalid_argument("t_two_sided: each sample needs at least 2 values");
    }
    auto moments = [](const std::vector<double>& v) {
        double mean = 0.0;
        for (double x : v) {
            mean += x;
        }
        mean /= static_cast<double>(v.size());
        double var = 0.0;
        for (double x : v) {
            var += (x - mean) * (x - mean);
        }
        var /= static_cast<double>(v.size() - 1);
        return std::make_pair(mean, var);
    };
    const auto [mean_a, var_a] = moments(a);
    const auto [mean_b, var_b] = moments(b);
    if (var_a == 0.0 && var_b == 0.0) {
        throw std::runtime_error("t_two_sided: zero variance in both samples");
    }
    const double sa = var_a / static_cast<double>(a.size());
    const double sb = var_b / static_cast<double>(b.size());
    TTestResult result;
    result.t = (mean_a - mean_b) / std::sqrt(sa + sb);
    result.df = (sa + sb) * (sa + sb) /
                (sa * sa / static_cast<double>(a.size() - 1) +
                 sb * sb / static_cast<double>(b.size() - 1));
    result.p = 2.0 * (1.0 - student_t_cdf(std::abs(result.t), result.df));
    return result;
}

}  // namespace mdma
