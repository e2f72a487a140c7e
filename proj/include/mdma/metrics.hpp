#pragma once

#include <vector>

namespace mdma {

double mae(const std::vector<int>& predictions, const std::vector<int>& truths);

struct MacroPrf {
    double f1 = 0.0;
    double precision = 0.0;
    double recall = 0.0;
};

/// Per-class precision/recall/F1 with zero-division treated as 0, averaged
/// unweighted over every class in `classes` (including never-predicted ones).
MacroPrf macro_prf(const std::vector<int>& predictions, const std::vector<int>& truths,
                   const std::vector<int>& classes);

double accuracy(const std::vector<int>& predictions, const std::vector<int>& truths);

/// F1 of the positive class.
double binary_f1(const std::vector<int>& predictions, const std::vector<int>& truths,
                 int positive_class = 1);

}  // namespace mdma
