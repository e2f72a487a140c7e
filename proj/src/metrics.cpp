#include "mdma/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <stdexcept>

namespace mdma {

double mae(const std::vector<int>& predictions, const std::vector<int>& truths) {
    if (predictions.size() != truths.size()) {
        throw std::invalid_argument("mae: length mismatch (" + std::to_string(predictions.size()) +
                                    " vs " + std::to_string(truths.size()) + ")");
    }
    if (predictions.empty()) {
        throw std::invalid_argument("mae: empty input");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        sum += std::abs(predictions[i] - truths[i]);
    }
    return sum / static_cast<double>(predictions.size());
}

MacroPrf macro_prf(const std::vector<int>& predictions, const std::vector<int>& truths,
                   const std::vector<int>& classes) {
    if (predictions.size() != truths.size()) {
        throw std::invalid_argument("macro_prf: length mismatch");
    }
    if (classes.empty()) {
        throw std::invalid_argument("macro_prf: empty class list");
    }
    std::map<int, std::size_t> index;
    for (std::size_t i = 0; i < classes.size(); ++i) {
        index[classes[i]] = i;
    }
    const std::size_t k = classes.size();
    std::vector<long long> tp(k, 0), fp(k, 0), fn(k, 0);
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const auto p = index.find(predictions[i]);
        const auto t = index.find(truths[i]);
        if (p == index.end()) {
            throw std::invalid_argument("macro_prf: unknown predicted label " +
                                        std::to_string(predictions[i]));
        }
        if (t == index.end()) {
            throw std::invalid_argument("macro_prf: unknown true label " +
                                        std::to_string(truths[i]));
        }
        if (p->second == t->second) {
            ++tp[p->second];
        } else {
            ++fp[p->second];
            ++fn[t->second];
        }
    }
    MacroPrf out;
    for (std::size_t c = 0; c < k; ++c) {
        const double prec = tp[c] + fp[c] > 0 ? static_cast<double>(tp[c]) / (tp[c] + fp[c]) : 0.0;
        const double rec = tp[c] + fn[c] > 0 ? static_cast<double>(tp[c]) / (tp[c] + fn[c]) : 0.0;
        const double f1 = prec + rec > 0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
        out.precision += prec;
        out.recall += rec;
        out.f1 += f1;
    }
    out.precision /= static_cast<double>(k);
    out.recall /= static_cast<double>(k);
    out.f1 /= static_cast<double>(k);
    return out;
}

double accuracy(const std::vector<int>& predictions, const std::vector<int>& truths) {
    if (predictions.size() != truths.size() || predictions.empty()) {
        throw std::invalid_argument("accuracy: bad input sizes");
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        hits += predictions[i] == truths[i] ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

double binary_f1(const std::vector<int>& predictions, const std::vector<int>& truths,
                 int positive_class) {
    if (predictions.size() != truths.size() || predictions.empty()) {
        throw std::invalid_argument("binary_f1: bad input sizes");
    }
    long long tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const bool p = predictions[i] == positive_class;
        const bool t = truths[i] == positive_class;
        if (p && t) ++tp;
        if (p && !t) ++fp;
        if (!p && t) ++fn;
    }
    const double prec = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
    const double rec = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
    return prec + rec > 0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
}

}  // namespace mdma
