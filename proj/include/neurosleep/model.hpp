#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "neurosleep/ops.hpp"

namespace nsn {

// Everything needed to determine the layer chain and parameter shapes.
struct ModelConfig {
    std::size_t channels = 2;          // C
    std::size_t samples_per_epoch = 3000;  // T (30 s at 100 Hz)
    std::size_t scales = 3;            // P, parallel temporal conv blocks
    std::size_t filters_per_block = 8; // L
    std::size_t base_kernel = 25;      // K1, 0.25 s at 100 Hz
    std::size_t pool_factor = 12;      // r
    std::size_t encoder_layers = 2;    // N, 0 disables the encoder
    std::size_t heads = 4;
    std::size_t ff_width = 2048;
    double dropout_rate = 0.25;
    std::size_t sequence_length = 1;   // S
    std::size_t class_count = 5;       // Y

    std::size_t input_width() const { return sequence_length * samples_per_epoch; }
    std::size_t d_h() const { return filters_per_block * channels; }
    std::size_t d_w() const { return (input_width() / pool_factor) / pool_factor; }
    std::size_t kernel_of_scale(std::size_t i) const { return i * base_kernel; }  // i in 1..P

    // Returns a list of field-level problems; empty means valid.
    std::vector<std::string> validate() const;
    void validate_or_throw() const;
};

struct ParamDef {
    std::string name;
    std::vector<std::size_t> shape;
    bool weight_decay;  // layer-norm gains/offsets and biases are exempt
};

// Fixed registry order; checkpoints and the optimizer rely on it.
std::vector<ParamDef> param_registry(const ModelConfig& cfg);

struct ModelParams {
    ModelConfig cfg;
    std::vector<Tensor> values;  // aligned with param_registry(cfg)

    std::size_t index_of(const std::string& name) const;
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
};

ModelParams build_model(const ModelConfig& cfg, std::uint64_t seed);

std::size_t param_count(const ModelConfig& cfg);

// Named intermediate shapes of one forward pass.
using ForwardTrace = std::vector<std::pair<std::string, std::vector<std::size_t>>>;

// input: Var over [C, S*T]. leaves: one Var per registry entry, same order.
// Returns [1, Y] logits.
Var forward_logits(const Var& input, const std::vector<Var>& leaves, const ModelConfig& cfg,
                   bool train, std::mt19937_64& rng, ForwardTrace* trace = nullptr);

// Eval-mode convenience: probabilities [Y] for one input.
Tensor predict_probs(const Tensor& input, const ModelParams& params,
                     ForwardTrace* trace = nullptr);

std::vector<Var> params_as_leaves(const ModelParams& params, bool requires_grad = true);

}  // namespace nsn
