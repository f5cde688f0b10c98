#include "neurosleep/model.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_map>

namespace nsn {

std::vector<std::string> ModelConfig::validate() const {
    std::vector<std::string> errs;
    if (channels < 1) errs.push_back("channels must be >= 1");
    if (samples_per_epoch < 1) errs.push_back("samples_per_epoch must be >= 1");
    if (scales < 1 || scales > 5) errs.push_back("scales must be in [1,5]");
    if (filters_per_block < 1) errs.push_back("filters_per_block must be >= 1");
    if (base_kernel < 1) errs.push_back("base_kernel must be >= 1");
    if (pool_factor < 1) errs.push_back("pool_factor must be >= 1");
    if (heads < 1) errs.push_back("heads must be >= 1");
    if (ff_width < 1) errs.push_back("ff_width must be >= 1");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) errs.push_back("dropout_rate must be in [0,1)");
    if (sequence_length < 1 || sequence_length > 5) errs.push_back("sequence_length must be in [1,5]");
    if (class_count < 2) errs.push_back("class_count must be >= 2");
    if (heads >= 1 && d_h() % heads != 0)
        errs.push_back("d_h = filters_per_block*channels (" + std::to_string(d_h()) +
                       ") must be divisible by heads (" + std::to_string(heads) + ")");
    if (pool_factor >= 1 && d_w() < 1)
        errs.push_back("pooled sequence length d_w is zero; input too short for pool_factor");
    return errs;
}

void ModelConfig::validate_or_throw() const {
    auto errs = validate();
    if (!errs.empty()) {
        std::string msg = "invalid model config:";
        for (const auto& e : errs) msg += "\n  - " + e;
        throw std::invalid_argument(msg);
    }
}

std::vector<ParamDef> param_registry(const ModelConfig& cfg) {
    std::vector<ParamDef> defs;
    const std::size_t C = cfg.channels, L = cfg.filters_per_block, D = cfg.d_h();
    if (C > 1) {
        defs.push_back({"spatial_w", {C, 1, C, 1}, true});
        defs.push_back({"spatial_b", {C}, false});
    }
    for (std::size_t i = 1; i <= cfg.scales; ++i) {
        const std::string p = "mtcl" + std::to_string(i);
        defs.push_back({p + "_w", {L, 1, 1, cfg.kernel_of_scale(i)}, true});
        defs.push_back({p + "_b", {L}, false});
    }
    defs.push_back({"pcc_w", {L, cfg.scales * L, 1, cfg.base_kernel}, true});
    defs.push_back({"pcc_b", {L}, false});
    for (std::size_t l = 0; l < cfg.encoder_layers; ++l) {
        const std::string p = "enc" + std::to_string(l);
        for (const char* proj : {"q", "k", "v", "o"}) {
            defs.push_back({p + "_w" + proj, {D, D}, true});
            defs.push_back({p + "_b" + proj, {D}, false});
        }
        defs.push_back({p + "_ln1_g", {D}, false});
        defs.push_back({p + "_ln1_b", {D}, false});
        defs.push_back({p + "_ff1_w", {D, cfg.ff_width}, true});
        defs.push_back({p + "_ff1_b", {cfg.ff_width}, false});
        defs.push_back({p + "_ff2_w", {cfg.ff_width, D}, true});
        defs.push_back({p + "_ff2_b", {D}, false});
        defs.push_back({p + "_ln2_g", {D}, false});
        defs.push_back({p + "_ln2_b", {D}, false});
    }
    defs.push_back({"head_w", {D, L * C}, true});
    defs.push_back({"head_b", {L * C}, false});
    defs.push_back({"out_w", {L * C, cfg.class_count}, true});
    defs.push_back({"out_b", {cfg.class_count}, false});
    return defs;
}

std::size_t ModelParams::index_of(const std::string& name) const {
    auto defs = param_registry(cfg);
    for (std::size_t i = 0; i < defs.size(); ++i)
        if (defs[i].name == name) return i;
    throw std::out_of_range("unknown parameter: " + name);
}

Tensor& ModelParams::at(const std::string& name) { return values[index_of(name)]; }
const Tensor& ModelParams::at(const std::string& name) const { return values[index_of(name)]; }

namespace {

// Glorot uniform for weights; zeros for biases; ones for layer-norm gains.
Tensor init_param(const ParamDef& def, std::mt19937_64& rng) {
    Tensor t(def.shape);
    const bool is_ln_gain = def.name.size() > 2 && def.name.rfind("_g") == def.name.size() - 2 &&
                            def.name.find("_ln") != std::string::npos;
    if (is_ln_gain) {
        t.fill(1.0);
        return t;
    }
    if (!def.weight_decay) return t;  // biases and ln offsets start at zero
    std::size_t fan_in = 1, fan_out = 1;
    if (def.shape.size() == 4) {
        fan_in = def.shape[1] * def.shape[2] * def.shape[3];
        fan_out = def.shape[0] * def.shape[2] * def.shape[3];
    } else if (def.shape.size() == 2) {
        fan_in = def.shape[0];
        fan_out = def.shape[1];
    }
    const double limit = std::sqrt(6.0 / double(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-limit, limit);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = u(rng);
    return t;
}

}  // namespace

ModelParams build_model(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate_or_throw();
    std::mt19937_64 rng(seed);
    ModelParams p;
    p.cfg = cfg;
    for (const auto& def : param_registry(cfg)) p.values.push_back(init_param(def, rng));
    return p;
}

std::size_t param_count(const ModelConfig& cfg) {
    std::size_t n = 0;
    for (const auto& def : param_registry(cfg)) n += Tensor::count(def.shape);
    return n;
}

namespace {

struct LeafLookup {
    const std::vector<ParamDef> defs;
    const std::vector<Var>& leaves;
    std::unordered_map<std::string, std::size_t> index;

    LeafLookup(const ModelConfig& cfg, const std::vector<Var>& lv)
        : defs(param_registry(cfg)), leaves(lv) {
        if (leaves.size() != defs.size())
            throw std::invalid_argument("forward: expected " + std::to_string(defs.size()) +
                                        " parameter leaves, got " + std::to_string(leaves.size()));
        for (std::size_t i = 0; i < defs.size(); ++i) index[defs[i].name] = i;
    }
    const Var& operator()(const std::string& name) const { return leaves.at(index.at(name)); }
};

void push_trace(ForwardTrace* trace, const std::string& name, const Var& v) {
    if (trace) trace->emplace_back(name, v->value.shape());
}

}  // namespace

Var forward_logits(const Var& input, const std::vector<Var>& leaves, const ModelConfig& cfg,
                   bool train, std::mt19937_64& rng, ForwardTrace* trace) {
    const std::size_t C = cfg.channels, W = cfg.input_width(), L = cfg.filters_per_block;
    if (input->value.rank() != 2 || input->value.dim(0) != C || input->value.dim(1) != W)
        throw std::invalid_argument("forward: input must be " + Tensor::shape_str({C, W}) +
                                    ", got " + Tensor::shape_str(input->value.shape()));
    LeafLookup P(cfg, leaves);
    push_trace(trace, "input", input);

    // Spatial filtering: C filters of kernel (C,1), linear activation. The
    // (C,1,W) output is memory-identical to (1,C,W) virtual channels.
    Var v;
    if (C > 1) {
        Var x3 = reshape(input, {1, C, W});
        ConvSpec spec;
        spec.num_filters = C;
        spec.kernel_h = C;
        Var sp = conv2d(x3, spec, P("spatial_w"), P("spatial_b"));
        push_trace(trace, "spatial", sp);
        v = reshape(sp, {1, C, W});
    } else {
        v = reshape(input, {1, 1, W});
    }
    push_trace(trace, "virtual", v);

    // MTCL: P parallel same-width conv -> ReLU -> pool branches, filter concat.
    std::vector<Var> branches;
    for (std::size_t i = 1; i <= cfg.scales; ++i) {
        const std::string p = "mtcl" + std::to_string(i);
        Var c = conv2d(v, ConvSpec::same_width(L, cfg.kernel_of_scale(i)), P(p + "_w"),
                       P(p + "_b"));
        push_trace(trace, p + "_conv", c);
        Var pooled = maxpool2d(relu(c), cfg.pool_factor);
        push_trace(trace, p + "_pool", pooled);
        branches.push_back(pooled);
    }
    Var cat = concat_axis0(branches);
    push_trace(trace, "concat", cat);

    // PCC: same parameters as the smallest-scale MTCL block.
    Var pcc = conv2d(cat, ConvSpec::same_width(L, cfg.base_kernel), P("pcc_w"), P("pcc_b"));
    push_trace(trace, "pcc_conv", pcc);
    Var pooled = maxpool2d(relu(pcc), cfg.pool_factor);
    push_trace(trace, "pcc_pool", pooled);

    // Dimension fusion (L,C,d_w) -> (L*C, d_w), then permute for the encoder.
    Var fused = reshape(pooled, {cfg.d_h(), cfg.d_w()});
    push_trace(trace, "fused", fused);
    Var seq = transpose2d(fused);
    push_trace(trace, "encoder_in", seq);

    // Post-norm transformer encoder, no positional encoding.
    for (std::size_t l = 0; l < cfg.encoder_layers; ++l) {
        const std::string p = "enc" + std::to_string(l);
        Var att = multi_head_self_attention(seq, cfg.heads, P(p + "_wq"), P(p + "_bq"),
                                            P(p + "_wk"), P(p + "_bk"), P(p + "_wv"),
                                            P(p + "_bv"), P(p + "_wo"), P(p + "_bo"));
        seq = layer_norm(add(seq, att), P(p + "_ln1_g"), P(p + "_ln1_b"));
        Var h = relu(linear(seq, P(p + "_ff1_w"), P(p + "_ff1_b")));
        h = dropout(h, cfg.dropout_rate, train, rng);
        Var ff = linear(h, P(p + "_ff2_w"), P(p + "_ff2_b"));
        seq = layer_norm(add(seq, ff), P(p + "_ln2_g"), P(p + "_ln2_b"));
    }
    push_trace(trace, "encoder_out", seq);

    // Temporal mean, hidden layer of L*C units, output projection.
    Var pooled_vec = mean_over_rows(seq);
    push_trace(trace, "pooled", pooled_vec);
    Var flat = reshape(pooled_vec, {1, cfg.d_h()});
    Var hidden = relu(linear(flat, P("head_w"), P("head_b")));
    Var logits = linear(hidden, P("out_w"), P("out_b"));
    push_trace(trace, "logits", logits);
    return logits;
}

std::vector<Var> params_as_leaves(const ModelParams& params, bool requires_grad) {
    std::vector<Var> leaves;
    leaves.reserve(params.values.size());
    for (const auto& t : params.values) leaves.push_back(make_leaf(t, requires_grad));
    return leaves;
}

Tensor predict_probs(const Tensor& input, const ModelParams& params, ForwardTrace* trace) {
    std::mt19937_64 rng(0);  // unused in eval mode
    auto leaves = params_as_leaves(params, false);
    Var logits = forward_logits(make_leaf(input, false), leaves, params.cfg, false, rng, trace);
    Var probs = softmax(logits);
    if (trace) trace->emplace_back("probs", std::vector<std::size_t>{params.cfg.class_count});
    return Tensor({params.cfg.class_count}, probs->value.vec());
}

}  // namespace nsn
