#include "neurosleep/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>
#include <stdexcept>
#include <thread>

namespace nsn {

namespace {

constexpr std::size_t kBlock = 16;  // unit of deterministic parallel reduction

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return splitmix64(a ^ splitmix64(b)); }

Tensor epoch_input(const EpochRecord& ep) {
    return Tensor({ep.channels, ep.width}, ep.samples);
}

std::vector<double> effective_weights(const ClassWeights& w, std::size_t Y) {
    if (!w.weights.empty()) return w.weights;
    return std::vector<double>(Y, 1.0);
}

// Forward (and optionally backward) over index blocks, reduced in block
// order so the result is independent of the thread count.
struct BlockResult {
    double loss_sum = 0.0;
    std::vector<Tensor> grads;
    std::vector<std::size_t> preds;
};

std::vector<BlockResult> run_blocks(const ModelParams& params,
                                    const std::vector<EpochRecord>& epochs,
                                    const std::vector<std::size_t>& indices,
                                    const std::vector<double>& weights, bool train,
                                    bool want_grads, bool want_preds,
                                    std::uint64_t dropout_salt, std::size_t threads) {
    const std::size_t n = indices.size();
    const std::size_t n_blocks = (n + kBlock - 1) / kBlock;
    std::vector<BlockResult> results(n_blocks);
    std::atomic<std::size_t> next{0};

    auto worker = [&]() {
        for (;;) {
            const std::size_t b = next.fetch_add(1);
            if (b >= n_blocks) return;
            const std::size_t lo = b * kBlock;
            const std::size_t hi = std::min(n, lo + kBlock);
            auto leaves = params_as_leaves(params, want_grads);
            BlockResult res;
            for (std::size_t p = lo; p < hi; ++p) {
                const EpochRecord& ep = epochs[indices[p]];
                Var input = make_leaf(epoch_input(ep), false);
                std::mt19937_64 rng(mix(dropout_salt, p));
                Var logits = forward_logits(input, leaves, params.cfg, train, rng);
                Var loss = weighted_cross_entropy(logits, {ep.label}, weights, Reduction::Sum);
                res.loss_sum += loss->value[0];
                if (want_grads) backward(loss);
                if (want_preds) {
                    const Tensor& lv = logits->value;
                    std::size_t best = 0;
                    for (std::size_t y = 1; y < lv.size(); ++y)
                        if (lv[y] > lv[best]) best = y;
                    res.preds.push_back(best);
                }
            }
            if (want_grads) {
                res.grads.reserve(leaves.size());
                for (auto& leaf : leaves) res.grads.push_back(std::move(leaf->grad));
            }
            results[b] = std::move(res);
        }
    };

    const std::size_t nt = std::min(std::max<std::size_t>(1, threads), n_blocks);
    if (nt <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(nt);
        for (std::size_t t = 0; t < nt; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    return results;
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(std::uint8_t(v & 0xFF));
    out.push_back(std::uint8_t(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(std::uint8_t((v >> (8 * i)) & 0xFF));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(std::uint8_t((v >> (8 * i)) & 0xFF));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
    put_u64(out, std::bit_cast<std::uint64_t>(v));
}

struct ByteReader {
    const std::vector<std::uint8_t>& bytes;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > bytes.size())
            throw std::invalid_argument("checkpoint: truncated at byte " + std::to_string(pos));
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = std::uint16_t(bytes[pos] | (bytes[pos + 1] << 8));
        pos += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(bytes[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
};

}  // namespace

void TrainConfig::validate_or_throw() const {
    if (learning_rate <= 0.0) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
    if (weight_decay < 0.0) throw std::invalid_argument("TrainConfig: weight_decay must be >= 0");
    if (beta1 <= 0.0 || beta1 >= 1.0 || beta2 <= 0.0 || beta2 >= 1.0)
        throw std::invalid_argument("TrainConfig: betas must lie in (0, 1)");
    if (eps <= 0.0) throw std::invalid_argument("TrainConfig: eps must be > 0");
    if (train_batch == 0 || val_batch == 0)
        throw std::invalid_argument("TrainConfig: batch sizes must be > 0");
    if (max_epochs == 0) throw std::invalid_argument("TrainConfig: max_epochs must be > 0");
    if (folds < 2) throw std::invalid_argument("TrainConfig: folds must be >= 2");
}

std::size_t resolve_threads(std::size_t requested) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("NEUROSLEEP_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v > 0) return std::size_t(v);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw ? hw : 1;
}

OptimizerState make_optimizer_state(const ModelConfig& cfg) {
    OptimizerState st;
    for (const auto& def : param_registry(cfg)) {
        st.m.emplace_back(def.shape);
        st.v.emplace_back(def.shape);
    }
    return st;
}

void adam_step(ModelParams& params, const std::vector<Tensor>& grads, OptimizerState& state,
               const TrainConfig& cfg) {
    const auto registry = param_registry(params.cfg);
    if (grads.size() != registry.size() || state.m.size() != registry.size())
        throw std::invalid_argument("adam_step: parameter/gradient count mismatch");
    for (std::size_t i = 0; i < grads.size(); ++i) {
        if (!grads[i].same_shape(params.values[i]))
            throw std::invalid_argument("adam_step: gradient shape mismatch on " +
                                        registry[i].name);
        for (double g : grads[i].vec())
            if (!std::isfinite(g))
                throw std::runtime_error("adam_step: non-finite gradient in " + registry[i].name +
                                         ", step aborted");
    }

    state.step += 1;
    const double t = double(state.step);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);

    for (std::size_t i = 0; i < grads.size(); ++i) {
        Tensor& theta = params.values[i];
        Tensor& m = state.m[i];
        Tensor& v = state.v[i];
        const Tensor& g = grads[i];
        const bool decay = registry[i].weight_decay && cfg.weight_decay > 0.0;
        for (std::size_t j = 0; j < theta.size(); ++j) {
            if (decay) theta[j] -= cfg.learning_rate * cfg.weight_decay * theta[j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            theta[j] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

std::pair<double, std::vector<Tensor>> batch_gradients(const ModelParams& params,
                                                       const std::vector<EpochRecord>& epochs,
                                                       const std::vector<std::size_t>& indices,
                                                       const ClassWeights& weights, bool train,
                                                       std::uint64_t dropout_salt,
                                                       std::size_t threads) {
    if (indices.empty()) throw std::invalid_argument("batch_gradients: empty batch");
    const auto w = effective_weights(weights, params.cfg.class_count);
    auto blocks = run_blocks(params, epochs, indices, w, train, /*grads=*/true,
                             /*preds=*/false, dropout_salt, resolve_threads(threads));

    double loss_sum = 0.0;
    std::vector<Tensor> grads;
    for (const auto& def : param_registry(params.cfg)) grads.emplace_back(def.shape);
    for (auto& blk : blocks) {
        loss_sum += blk.loss_sum;
        for (std::size_t i = 0; i < grads.size(); ++i)
            for (std::size_t j = 0; j < grads[i].size(); ++j) grads[i][j] += blk.grads[i][j];
    }
    const double inv_n = 1.0 / double(indices.size());
    for (auto& g : grads)
        for (double& v : g.vec()) v *= inv_n;
    return {loss_sum * inv_n, grads};
}

namespace {

std::pair<double, std::vector<std::size_t>> eval_loss_and_preds(
    const ModelParams& params, const std::vector<EpochRecord>& epochs,
    const std::vector<double>& weights, std::size_t threads) {
    std::vector<std::size_t> indices(epochs.size());
    for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
    auto blocks = run_blocks(params, epochs, indices, weights, /*train=*/false,
                             /*grads=*/false, /*preds=*/true, 0, resolve_threads(threads));
    double loss_sum = 0.0;
    std::vector<std::size_t> preds;
    preds.reserve(epochs.size());
    for (auto& blk : blocks) {
        loss_sum += blk.loss_sum;
        preds.insert(preds.end(), blk.preds.begin(), blk.preds.end());
    }
    return {loss_sum / double(epochs.size()), preds};
}

}  // namespace

std::vector<std::size_t> predict_labels(const ModelParams& params,
                                        const std::vector<EpochRecord>& epochs,
                                        std::size_t threads) {
    if (epochs.empty()) throw std::invalid_argument("predict_labels: empty epoch list");
    const std::vector<double> unit(params.cfg.class_count, 1.0);
    return eval_loss_and_preds(params, epochs, unit, threads).second;
}

EvalReport evaluate(const ModelParams& params, const std::vector<EpochRecord>& epochs,
                    std::size_t threads) {
    if (epochs.empty()) throw std::invalid_argument("evaluate: empty epoch list");
    const auto preds = predict_labels(params, epochs, threads);
    std::vector<std::size_t> truth;
    truth.reserve(epochs.size());
    for (const auto& ep : epochs) truth.push_back(ep.label);
    return evaluate_predictions(truth, preds, params.cfg.class_count);
}

TrainResult train(const std::vector<EpochRecord>& train_epochs,
                  const std::vector<EpochRecord>& val_epochs, const ModelConfig& model_cfg,
                  const TrainConfig& train_cfg) {
    model_cfg.validate_or_throw();
    train_cfg.validate_or_throw();
    if (train_epochs.empty() || val_epochs.empty())
        throw std::invalid_argument("train: both splits must be non-empty");
    for (const auto& ep : train_epochs)
        if (ep.channels != model_cfg.channels || ep.width != model_cfg.input_width())
            throw std::invalid_argument("train: epoch geometry does not match the model config");

    std::vector<std::size_t> train_labels;
    train_labels.reserve(train_epochs.size());
    for (const auto& ep : train_epochs) train_labels.push_back(ep.label);

    TrainResult res;
    res.weights = compute_class_weights(train_labels, model_cfg.class_count, train_cfg.scheme);
    res.final_params = build_model(model_cfg, train_cfg.seed);
    res.best_params = res.final_params;

    OptimizerState opt = make_optimizer_state(model_cfg);
    std::mt19937_64 shuffle_rng(splitmix64(train_cfg.seed));
    const std::size_t threads = resolve_threads(train_cfg.threads);
    const std::vector<double> w = effective_weights(res.weights, model_cfg.class_count);

    double best_val = std::numeric_limits<double>::infinity();
    std::size_t wait = 0;

    std::vector<std::size_t> perm(train_epochs.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;

    for (std::size_t epoch = 1; epoch <= train_cfg.max_epochs; ++epoch) {
        std::shuffle(perm.begin(), perm.end(), shuffle_rng);
        double train_loss_sum = 0.0;
        bool bad_step = false;
        for (std::size_t start = 0; start < perm.size(); start += train_cfg.train_batch) {
            const std::size_t end = std::min(perm.size(), start + train_cfg.train_batch);
            std::vector<std::size_t> batch(perm.begin() + start, perm.begin() + end);
            const std::uint64_t salt = mix(mix(train_cfg.seed, epoch), start);
            auto [loss, grads] = batch_gradients(res.final_params, train_epochs, batch,
                                                 res.weights, true, salt, threads);
            train_loss_sum += loss * double(batch.size());
            if (!std::isfinite(loss)) {
                bad_step = true;
                break;
            }
            try {
                adam_step(res.final_params, grads, opt, train_cfg);
            } catch (const std::runtime_error&) {
                bad_step = true;
                break;
            }
        }
        const double train_loss = train_loss_sum / double(train_epochs.size());
        if (bad_step || !std::isfinite(train_loss)) {
            res.diverged = true;
            break;
        }

        auto [val_loss, val_preds] = eval_loss_and_preds(res.final_params, val_epochs, w, threads);
        std::vector<std::size_t> val_truth;
        val_truth.reserve(val_epochs.size());
        for (const auto& ep : val_epochs) val_truth.push_back(ep.label);
        const EvalReport rep = evaluate_predictions(val_truth, val_preds, model_cfg.class_count);

        HistoryRow row;
        row.epoch = epoch;
        row.train_loss = train_loss;
        row.val_loss = val_loss;
        row.val_accuracy = rep.accuracy;
        row.val_macro_f1 = rep.macro_f1;
        row.val_kappa = rep.kappa.value_or(0.0);
        res.history.push_back(row);

        if (!std::isfinite(val_loss)) {
            res.diverged = true;
            break;
        }
        if (val_loss < best_val) {
            best_val = val_loss;
            res.best_params = res.final_params;
            res.best_epoch = epoch;
            wait = 0;
        } else {
            ++wait;
            if (wait > train_cfg.patience) break;
        }
    }
    if (res.best_epoch == 0) res.best_params = res.final_params;
    return res;
}

std::vector<Fold> subject_kfold_split(const std::vector<EpochRecord>& epochs, std::size_t k,
                                      std::uint64_t seed) {
    if (k < 2) throw std::invalid_argument("subject_kfold_split: k must be >= 2");
    std::vector<std::string> subjects;
    for (const auto& ep : epochs)
        if (std::find(subjects.begin(), subjects.end(), ep.subject_id) == subjects.end())
            subjects.push_back(ep.subject_id);
    if (subjects.size() < k)
        throw std::invalid_argument("subject_kfold_split: " + std::to_string(subjects.size()) +
                                    " subjects is fewer than k=" + std::to_string(k));

    std::mt19937_64 rng(splitmix64(seed));
    std::shuffle(subjects.begin(), subjects.end(), rng);

    // Near-equal fold sizes: the first n % k folds take one extra subject.
    std::vector<std::size_t> fold_of_subject_pos(subjects.size());
    std::size_t pos = 0;
    for (std::size_t f = 0; f < k; ++f) {
        const std::size_t size = subjects.size() / k + (f < subjects.size() % k ? 1 : 0);
        for (std::size_t j = 0; j < size; ++j) fold_of_subject_pos[pos++] = f;
    }

    std::vector<Fold> folds(k);
    for (std::size_t i = 0; i < epochs.size(); ++i) {
        const std::size_t spos =
            std::size_t(std::find(subjects.begin(), subjects.end(), epochs[i].subject_id) -
                        subjects.begin());
        const std::size_t f = fold_of_subject_pos[spos];
        for (std::size_t g = 0; g < k; ++g) {
            if (g == f)
                folds[g].val_indices.push_back(i);
            else
                folds[g].train_indices.push_back(i);
        }
    }
    return folds;
}

std::vector<std::uint8_t> save_checkpoint(const ModelParams& params) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), {'N', 'S', 'C', '1'});
    put_u16(out, 1);  // version
    const ModelConfig& c = params.cfg;
    for (std::size_t v : {c.channels, c.samples_per_epoch, c.scales, c.filters_per_block,
                          c.base_kernel, c.pool_factor, c.encoder_layers, c.heads, c.ff_width,
                          c.sequence_length, c.class_count})
        put_u32(out, std::uint32_t(v));
    put_f64(out, c.dropout_rate);
    std::uint64_t total = 0;
    for (const auto& t : params.values) total += t.size();
    put_u64(out, total);
    for (const auto& t : params.values)
        for (double v : t.vec()) put_f64(out, v);
    return out;
}

ModelParams load_checkpoint(const std::vector<std::uint8_t>& bytes) {
    ByteReader r{bytes};
    r.need(4);
    if (std::memcmp(bytes.data(), "NSC1", 4) != 0)
        throw std::invalid_argument("checkpoint: bad magic, expected NSC1");
    r.pos = 4;
    const std::uint16_t version = r.u16();
    if (version != 1)
        throw std::invalid_argument("checkpoint: unsupported version " + std::to_string(version));

    ModelConfig c;
    c.channels = r.u32();
    c.samples_per_epoch = r.u32();
    c.scales = r.u32();
    c.filters_per_block = r.u32();
    c.base_kernel = r.u32();
    c.pool_factor = r.u32();
    c.encoder_layers = r.u32();
    c.heads = r.u32();
    c.ff_width = r.u32();
    c.sequence_length = r.u32();
    c.class_count = r.u32();
    c.dropout_rate = r.f64();
    c.validate_or_throw();

    const std::uint64_t total = r.u64();
    if (total != param_count(c))
        throw std::invalid_argument("checkpoint: parameter count " + std::to_string(total) +
                                    " does not match the stored config (" +
                                    std::to_string(param_count(c)) + ")");

    ModelParams params;
    params.cfg = c;
    for (const auto& def : param_registry(c)) {
        Tensor t(def.shape);
        for (std::size_t j = 0; j < t.size(); ++j) t[j] = r.f64();
        params.values.push_back(std::move(t));
    }
    if (r.pos != bytes.size())
        throw std::invalid_argument("checkpoint: " + std::to_string(bytes.size() - r.pos) +
                                    " trailing bytes");
    return params;
}

void save_checkpoint_file(const std::string& path, const ModelParams& params) {
    const auto bytes = save_checkpoint(params);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!f) throw std::runtime_error("write failed on " + path);
}

ModelParams load_checkpoint_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    return load_checkpoint(bytes);
}

std::string history_to_csv(const std::vector<HistoryRow>& history) {
    std::string out = "epoch,train_loss,val_loss,val_accuracy,val_macro_f1,val_kappa\n";
    char buf[192];
    for (const auto& r : history) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.epoch,
                      r.train_loss, r.val_loss, r.val_accuracy, r.val_macro_f1, r.val_kappa);
        out += buf;
    }
    return out;
}

}  // namespace nsn
