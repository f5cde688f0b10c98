#include "neurosleep/loss.hpp"

#include <cmath>
#include <stdexcept>

namespace nsn {

WeightScheme weight_scheme_from_string(const std::string& name) {
    if (name == "none") return WeightScheme::None;
    if (name == "regular") return WeightScheme::Regular;
    if (name == "balanced") return WeightScheme::Balanced;
    if (name == "log" || name == "log_scaled") return WeightScheme::LogScaled;
    throw std::invalid_argument("unknown weight scheme: " + name +
                                " (expected none|regular|balanced|log)");
}

std::string to_string(WeightScheme s) {
    switch (s) {
        case WeightScheme::None: return "none";
        case WeightScheme::Regular: return "regular";
        case WeightScheme::Balanced: return "balanced";
        case WeightScheme::LogScaled: return "log_scaled";
    }
    return "?";
}

std::vector<std::size_t> class_frequencies(const std::vector<std::size_t>& labels,
                                           std::size_t Y) {
    if (labels.empty()) throw std::invalid_argument("class_frequencies: empty label list");
    std::vector<std::size_t> f(Y, 0);
    for (std::size_t l : labels) {
        if (l >= Y)
            throw std::invalid_argument("class_frequencies: label " + std::to_string(l) +
                                        " out of range [0," + std::to_string(Y) + ")");
        ++f[l];
    }
    return f;
}

namespace {
void reject_zero_frequency(const std::vector<std::size_t>& f) {
    for (std::size_t i = 0; i < f.size(); ++i)
        if (f[i] == 0)
            throw std::invalid_argument(
                "class " + std::to_string(i) +
                " has zero training frequency; exclude the class or use scheme 'none'");
}
}  // namespace

std::vector<double> regular_weights(const std::vector<std::size_t>& f, std::size_t n) {
    reject_zero_frequency(f);
    std::vector<double> w(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) w[i] = double(n) / double(f[i]);
    return w;
}

std::vector<double> balanced_weights(const std::vector<std::size_t>& f, std::size_t n,
                                     std::size_t Y) {
    reject_zero_frequency(f);
    std::vector<double> w(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) w[i] = double(n) / (double(f[i]) * double(Y));
    return w;
}

std::vector<double> log_scaled_weights(const std::vector<std::size_t>& f, std::size_t n) {
    reject_zero_frequency(f);
    std::vector<double> w(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) w[i] = std::log(double(n) / double(f[i]));
    return w;
}

ClassWeights compute_class_weights(const std::vector<std::size_t>& labels, std::size_t Y,
                                   WeightScheme scheme) {
    ClassWeights cw;
    cw.scheme = scheme;
    cw.frequencies = class_frequencies(labels, Y);
    cw.total = labels.size();
    switch (scheme) {
        case WeightScheme::None:
            cw.weights.assign(Y, 1.0);
            break;
        case WeightScheme::Regular:
            cw.weights = regular_weights(cw.frequencies, cw.total);
            break;
        case WeightScheme::Balanced:
            cw.weights = balanced_weights(cw.frequencies, cw.total, Y);
            break;
        case WeightScheme::LogScaled:
            cw.weights = log_scaled_weights(cw.frequencies, cw.total);
            for (std::size_t i = 0; i < Y; ++i)
                if (cw.frequencies[i] == cw.total)
                    cw.warnings.push_back("class " + std::to_string(i) +
                                          " fills the whole training set; its log-scaled weight "
                                          "is 0 and it contributes no loss");
            break;
    }
    return cw;
}

Var weighted_cross_entropy(const Var& logits, const std::vector<std::size_t>& labels,
                           const ClassWeights& weights, Reduction reduction) {
    return weighted_cross_entropy(logits, labels, weights.weights, reduction);
}

}  // namespace nsn
