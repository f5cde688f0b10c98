#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "neurosleep/ops.hpp"

namespace nsn {

enum class WeightScheme { None, Regular, Balanced, LogScaled };

WeightScheme weight_scheme_from_string(const std::string& name);
std::string to_string(WeightScheme s);

struct ClassWeights {
    std::vector<std::size_t> frequencies;
    std::size_t total = 0;
    WeightScheme scheme = WeightScheme::None;
    std::vector<double> weights;
    std::vector<std::string> warnings;
};

// Exact per-class counts; rejects an empty label list.
std::vector<std::size_t> class_frequencies(const std::vector<std::size_t>& labels, std::size_t Y);

// w_i = n / f_i. Zero-frequency classes are rejected.
std::vector<double> regular_weights(const std::vector<std::size_t>& f, std::size_t n);

// w_i = n / (f_i * Y).
std::vector<double> balanced_weights(const std::vector<std::size_t>& f, std::size_t n,
                                     std::size_t Y);

// w_i = ln(n / f_i). A class with f_i == n gets weight 0 (warned, not rejected).
std::vector<double> log_scaled_weights(const std::vector<std::size_t>& f, std::size_t n);

ClassWeights compute_class_weights(const std::vector<std::size_t>& labels, std::size_t Y,
                                   WeightScheme scheme);

// weighted_cross_entropy lives in ops.hpp; this is the ClassWeights-typed front.
Var weighted_cross_entropy(const Var& logits, const std::vector<std::size_t>& labels,
                           const ClassWeights& weights, Reduction reduction = Reduction::Mean);

}  // namespace nsn
