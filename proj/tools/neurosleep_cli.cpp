// Batch front end: preprocess / train / eval / sweep / gradcheck / synth.
// Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "neurosleep/dsp.hpp"
#include "neurosleep/edfio.hpp"
#include "neurosleep/loss.hpp"
#include "neurosleep/metrics.hpp"
#include "neurosleep/model.hpp"
#include "neurosleep/prep.hpp"
#include "neurosleep/synthgen.hpp"
#include "neurosleep/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace nsn;

namespace {

constexpr const char* kToolVersion = "0.1.0";

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << text;
}

// ----------------------------------------------------------------- config

// Flat TOML subset: `key = value` lines, `#` comments, quoted strings,
// numbers and booleans. Enough for the documented key set; nothing nested.
std::map<std::string, std::string> parse_flat_toml(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    std::size_t lineno = 0;
    auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t\r");
        const auto b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    while (std::getline(in, line)) {
        ++lineno;
        // strip comments outside quotes
        bool quoted = false;
        for (std::size_t i = 0; i < line.size(); ++i) {
            if (line[i] == '"') quoted = !quoted;
            if (line[i] == '#' && !quoted) {
                line.resize(i);
                break;
            }
        }
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        if (key.empty() || val.empty())
            throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key or value");
        if (val.size() >= 2 && val.front() == '"' && val.back() == '"')
            val = val.substr(1, val.size() - 2);
        if (kv.count(key))
            throw ConfigError(path + ":" + std::to_string(lineno) + ": duplicate key " + key);
        kv[key] = val;
    }
    return kv;
}

struct Options {
    ModelConfig model;
    TrainConfig train;
    std::string store;
    std::string val_store;
    std::string out = "run";
    std::string axis;
    std::string checkpoint;
    std::string policy = "sleep-edfx";
    std::vector<std::string> channel_filter;
    // synthetic data
    SynthSpec synth;
};

std::size_t parse_uint(const std::string& key, const std::string& val) {
    try {
        std::size_t pos = 0;
        const auto v = std::stoull(val, &pos);
        if (pos != val.size()) throw std::invalid_argument(val);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": not a non-negative integer: " + val);
    }
}

double parse_real(const std::string& key, const std::string& val) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(val, &pos);
        if (pos != val.size()) throw std::invalid_argument(val);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": not a number: " + val);
    }
}

void apply_config_file(Options& o, const std::string& path) {
    for (const auto& [key, val] : parse_flat_toml(path)) {
        if (key == "channels") o.model.channels = parse_uint(key, val);
        else if (key == "samples_per_epoch") o.model.samples_per_epoch = parse_uint(key, val);
        else if (key == "scales") o.model.scales = parse_uint(key, val);
        else if (key == "filters_per_block") o.model.filters_per_block = parse_uint(key, val);
        else if (key == "base_kernel") o.model.base_kernel = parse_uint(key, val);
        else if (key == "pool_factor") o.model.pool_factor = parse_uint(key, val);
        else if (key == "encoder_layers") o.model.encoder_layers = parse_uint(key, val);
        else if (key == "heads") o.model.heads = parse_uint(key, val);
        else if (key == "ff_width") o.model.ff_width = parse_uint(key, val);
        else if (key == "dropout") o.model.dropout_rate = parse_real(key, val);
        else if (key == "sequence_length") o.model.sequence_length = parse_uint(key, val);
        else if (key == "class_count") o.model.class_count = parse_uint(key, val);
        else if (key == "learning_rate") o.train.learning_rate = parse_real(key, val);
        else if (key == "weight_decay") o.train.weight_decay = parse_real(key, val);
        else if (key == "beta1") o.train.beta1 = parse_real(key, val);
        else if (key == "beta2") o.train.beta2 = parse_real(key, val);
        else if (key == "eps") o.train.eps = parse_real(key, val);
        else if (key == "train_batch") o.train.train_batch = parse_uint(key, val);
        else if (key == "val_batch") o.train.val_batch = parse_uint(key, val);
        else if (key == "max_epochs") o.train.max_epochs = parse_uint(key, val);
        else if (key == "patience") o.train.patience = parse_uint(key, val);
        else if (key == "seed") o.train.seed = parse_uint(key, val);
        else if (key == "scheme") o.train.scheme = weight_scheme_from_string(val);
        else if (key == "folds") o.train.folds = parse_uint(key, val);
        else if (key == "threads") o.train.threads = parse_uint(key, val);
        else if (key == "store") o.store = val;
        else if (key == "val_store") o.val_store = val;
        else if (key == "out") o.out = val;
        else throw ConfigError("unknown config key " + key + " in " + path);
    }
}

json config_json(const Options& o) {
    return json{
        {"channels", o.model.channels},
        {"samples_per_epoch", o.model.samples_per_epoch},
        {"scales", o.model.scales},
        {"filters_per_block", o.model.filters_per_block},
        {"base_kernel", o.model.base_kernel},
        {"pool_factor", o.model.pool_factor},
        {"encoder_layers", o.model.encoder_layers},
        {"heads", o.model.heads},
        {"ff_width", o.model.ff_width},
        {"dropout", o.model.dropout_rate},
        {"sequence_length", o.model.sequence_length},
        {"class_count", o.model.class_count},
        {"learning_rate", o.train.learning_rate},
        {"weight_decay", o.train.weight_decay},
        {"beta1", o.train.beta1},
        {"beta2", o.train.beta2},
        {"eps", o.train.eps},
        {"train_batch", o.train.train_batch},
        {"val_batch", o.train.val_batch},
        {"max_epochs", o.train.max_epochs},
        {"patience", o.train.patience},
        {"seed", o.train.seed},
        {"scheme", to_string(o.train.scheme)},
        {"folds", o.train.folds},
        {"threads", o.train.threads},
    };
}

struct Manifest {
    std::string command;
    std::string started = utc_now();
    json inputs = json::object();
    json outputs = json::object();

    void write(const Options& o, const fs::path& path) const {
        json m{
            {"command", command},
            {"tool_version", kToolVersion},
            {"seed", o.train.seed},
            {"started", started},
            {"finished", utc_now()},
            {"inputs", inputs},
            {"outputs", outputs},
            {"config", config_json(o)},
        };
        write_text(path, m.dump(2) + "\n");
    }
};

// ------------------------------------------------------------- summaries

void print_store_summary(const std::vector<EpochRecord>& epochs) {
    std::size_t counts[kStageCount] = {};
    for (const auto& ep : epochs)
        if (ep.label < kStageCount) ++counts[ep.label];
    std::printf("epochs: %zu\n", epochs.size());
    for (std::size_t c = 0; c < kStageCount; ++c)
        std::printf("  %-3s %zu\n", kStageNames[c], counts[c]);
}

std::vector<EpochRecord> load_store_or_throw(const std::string& path, const char* what) {
    if (path.empty()) throw ConfigError(std::string("missing config key: ") + what);
    return edf::load_epoch_store(path);
}

// ------------------------------------------------------------- hypnogram

// Conventional hypnogram layout: W on top, then R, N1, N2, N3.
constexpr std::size_t kHypnoRow[kStageCount] = {0, 2, 3, 4, 1};  // stage -> row
constexpr const char* kHypnoRowName[kStageCount] = {"W", "R", "N1", "N2", "N3"};

std::string hypnogram_svg(const std::vector<std::size_t>& truth,
                          const std::vector<std::size_t>& pred) {
    const double width = 900, height = 260, left = 50, top = 20, bottom = 30, right = 20;
    const double plot_w = width - left - right, plot_h = height - top - bottom;
    const std::size_t n = truth.size();
    auto xat = [&](std::size_t i) { return left + plot_w * double(i) / double(std::max<std::size_t>(n, 1)); };
    auto yat = [&](std::size_t stage) {
        return top + plot_h * double(kHypnoRow[stage]) / double(kStageCount - 1);
    };
    auto steps = [&](const std::vector<std::size_t>& labels) {
        std::ostringstream p;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            const double y = yat(labels[i]);
            p << (i ? "L" : "M") << xat(i) << " " << y << " L" << xat(i + 1) << " " << y << " ";
        }
        return p.str();
    };
    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    for (std::size_t row = 0; row < kStageCount; ++row) {
        const double y = top + plot_h * double(row) / double(kStageCount - 1);
        svg << "<line x1=\"" << left << "\" y1=\"" << y << "\" x2=\"" << width - right
            << "\" y2=\"" << y << "\" stroke=\"#ddd\"/>\n";
        svg << "<text x=\"" << left - 8 << "\" y=\"" << y + 4
            << "\" text-anchor=\"end\" font-size=\"12\">" << kHypnoRowName[row] << "</text>\n";
    }
    svg << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << height - 8
        << "\" text-anchor=\"middle\" font-size=\"12\">epoch</text>\n";
    svg << "<path d=\"" << steps(truth) << "\" fill=\"none\" stroke=\"black\"/>\n";
    svg << "<path d=\"" << steps(pred)
        << "\" fill=\"none\" stroke=\"#d62728\" stroke-dasharray=\"4 3\"/>\n";
    svg << "</svg>\n";
    return svg.str();
}

// -------------------------------------------------------------- commands

int cmd_synth(Options& o) {
    Manifest man;
    man.command = "synth";
    o.synth.seed = o.train.seed;
    o.synth.samples_per_epoch = o.model.samples_per_epoch;
    o.synth.channels = o.model.channels;
    auto epochs = generate_dataset(o.synth);
    if (o.out.empty()) throw ConfigError("missing config key: out");
    edf::save_epoch_store(o.out, epochs);
    print_store_summary(epochs);
    man.outputs["store"] = o.out;
    man.write(o, fs::path(o.out).replace_extension(".manifest.json"));
    return 0;
}

int cmd_preprocess(Options& o, const std::vector<std::string>& psg,
                   const std::vector<std::string>& hyp, bool use_synth) {
    Manifest man;
    man.command = "preprocess";
    std::vector<EpochRecord> all;
    EpochizeStats total;
    if (use_synth) {
        o.synth.seed = o.train.seed;
        o.synth.samples_per_epoch = o.model.samples_per_epoch;
        o.synth.channels = o.model.channels;
        all = generate_dataset(o.synth);
        for (const auto& ep : all) ++total.class_counts[ep.label];
        total.kept = all.size();
    } else {
        if (psg.empty()) throw ConfigError("missing config key: psg");
        if (psg.size() != hyp.size())
            throw ConfigError("each --psg needs a matching --hypnogram");
        PrepOptions prep;
        prep.policy = o.policy == "strict" ? WakePolicy::Strict : WakePolicy::SleepEdfx;
        if (o.policy != "strict" && o.policy != "sleep-edfx")
            throw ConfigError("unknown policy " + o.policy);
        for (std::size_t i = 0; i < psg.size(); ++i) {
            const std::string subject = fs::path(psg[i]).stem().string();
            auto rec = edf::load_recording(psg[i], hyp[i], o.channel_filter, subject);
            EpochizeStats stats;
            auto eps = preprocess_recording(rec, prep, &stats);
            total.kept += stats.kept;
            total.dropped_unannotated += stats.dropped_unannotated;
            total.dropped_excluded += stats.dropped_excluded;
            total.dropped_incomplete += stats.dropped_incomplete;
            for (std::size_t c = 0; c < kStageCount; ++c)
                total.class_counts[c] += stats.class_counts[c];
            all.insert(all.end(), eps.begin(), eps.end());
            man.inputs["recordings"].push_back({{"psg", psg[i]}, {"hypnogram", hyp[i]}});
        }
    }
    if (o.out.empty()) throw ConfigError("missing config key: out");
    edf::save_epoch_store(o.out, all);
    std::printf("kept %zu  dropped: unannotated %zu, excluded %zu, incomplete %zu\n",
                total.kept, total.dropped_unannotated, total.dropped_excluded,
                total.dropped_incomplete);
    print_store_summary(all);
    man.outputs["store"] = o.out;
    man.write(o, fs::path(o.out).replace_extension(".manifest.json"));
    return 0;
}

void check_geometry(const ModelConfig& cfg, const std::vector<EpochRecord>& epochs) {
    for (const auto& ep : epochs) {
        if (ep.channels != cfg.channels || ep.width != cfg.input_width())
            throw ConfigError("store geometry (" + std::to_string(ep.channels) + " x " +
                              std::to_string(ep.width) + ") does not match the model (" +
                              std::to_string(cfg.channels) + " x " +
                              std::to_string(cfg.input_width()) + ")");
    }
}

std::pair<std::vector<EpochRecord>, std::vector<EpochRecord>> split_for_training(
    const Options& o, const std::vector<EpochRecord>& epochs) {
    if (!o.val_store.empty())
        return {epochs, edf::load_epoch_store(o.val_store)};
    auto folds = subject_kfold_split(epochs, o.train.folds, o.train.seed);
    std::vector<EpochRecord> tr, va;
    for (auto i : folds[0].train_indices) tr.push_back(epochs[i]);
    for (auto i : folds[0].val_indices) va.push_back(epochs[i]);
    return {tr, va};
}

int cmd_train(Options& o) {
    Manifest man;
    man.command = "train";
    auto epochs = load_store_or_throw(o.store, "store");
    if (o.model.sequence_length > 1)
        epochs = pack_sequences(epochs, o.model.sequence_length);
    check_geometry(o.model, epochs);
    auto [tr, va] = split_for_training(o, epochs);
    std::printf("train %zu epochs, validation %zu epochs\n", tr.size(), va.size());
    std::printf("parameters: %zu (reference models: 2.18e5 bivariate, 1.17e5 univariate)\n",
                param_count(o.model));

    fs::create_directories(o.out);
    auto res = train(tr, va, o.model, o.train);

    const fs::path out(o.out);
    save_checkpoint_file((out / "checkpoint.nsc").string(), res.best_params);
    save_checkpoint_file((out / "final.nsc").string(), res.final_params);
    write_text(out / "history.csv", history_to_csv(res.history));
    man.inputs["store"] = o.store;
    man.outputs["checkpoint"] = (out / "checkpoint.nsc").string();
    man.outputs["final"] = (out / "final.nsc").string();
    man.outputs["history"] = (out / "history.csv").string();
    man.write(o, out / "manifest.json");
    if (res.diverged) {
        std::fprintf(stderr, "training diverged; last checkpoint preserved in %s\n",
                     o.out.c_str());
        return 3;
    }
    const auto& best = res.history[res.best_epoch - 1];
    std::printf("best epoch %zu: val loss %.4f, accuracy %.4f, macro-F1 %.4f\n",
                res.best_epoch, best.val_loss, best.val_accuracy, best.val_macro_f1);
    return 0;
}

int cmd_eval(Options& o) {
    Manifest man;
    man.command = "eval";
    if (o.checkpoint.empty()) throw ConfigError("missing config key: checkpoint");
    auto params = load_checkpoint_file(o.checkpoint);
    auto epochs = load_store_or_throw(o.store, "store");
    if (params.cfg.sequence_length > 1)
        epochs = pack_sequences(epochs, params.cfg.sequence_length);
    check_geometry(params.cfg, epochs);

    auto preds = predict_labels(params, epochs, o.train.threads);
    std::vector<std::size_t> truth;
    for (const auto& ep : epochs) truth.push_back(ep.label);
    auto report = evaluate_predictions(truth, preds, params.cfg.class_count);

    fs::create_directories(o.out);
    const fs::path out(o.out);
    write_text(out / "report.json", report_to_json(report));
    write_text(out / "confusion.txt",
               report_to_table(report, {kStageNames, kStageNames + kStageCount}));
    std::fputs(report_to_table(report, {kStageNames, kStageNames + kStageCount}).c_str(),
               stdout);

    // Per-subject hypnograms, epoch order as stored.
    std::map<std::string, std::vector<std::size_t>> rows;
    for (std::size_t i = 0; i < epochs.size(); ++i) rows[epochs[i].subject_id].push_back(i);
    for (const auto& [subject, idx] : rows) {
        std::ostringstream tsv;
        std::vector<std::size_t> t, p;
        tsv << "epoch_index\ttrue\tpredicted\n";
        for (auto i : idx) {
            tsv << epochs[i].epoch_index << "\t" << kStageNames[truth[i]] << "\t"
                << kStageNames[preds[i]] << "\n";
            t.push_back(truth[i]);
            p.push_back(preds[i]);
        }
        write_text(out / ("hypnogram_" + subject + ".tsv"), tsv.str());
        write_text(out / ("hypnogram_" + subject + ".svg"), hypnogram_svg(t, p));
    }
    man.inputs = {{"checkpoint", o.checkpoint}, {"store", o.store}};
    man.outputs = {{"report", (out / "report.json").string()},
                   {"confusion", (out / "confusion.txt").string()},
                   {"subjects", rows.size()}};
    man.write(o, out / "manifest.json");
    return 0;
}

int cmd_sweep(Options& o) {
    Manifest man;
    man.command = "sweep";
    auto base_epochs = load_store_or_throw(o.store, "store");

    struct Setting {
        std::string value;
        ModelConfig model;
        WeightScheme scheme;
    };
    std::vector<Setting> settings;
    if (o.axis == "scales") {
        for (std::size_t p = 1; p <= 5; ++p) {
            auto m = o.model;
            m.scales = p;
            settings.push_back({std::to_string(p), m, o.train.scheme});
        }
    } else if (o.axis == "scheme") {
        for (const char* s : {"none", "regular", "balanced", "log"})
            settings.push_back({s, o.model, weight_scheme_from_string(s)});
    } else if (o.axis == "sequence-length") {
        for (std::size_t s = 1; s <= 5; ++s) {
            auto m = o.model;
            m.sequence_length = s;
            settings.push_back({std::to_string(s), m, o.train.scheme});
        }
    } else if (o.axis == "encoder-layers") {
        for (std::size_t n : {std::size_t(0), std::size_t(2)}) {
            auto m = o.model;
            m.encoder_layers = n;
            settings.push_back({std::to_string(n), m, o.train.scheme});
        }
    } else {
        throw ConfigError("unknown sweep axis " + o.axis +
                          " (scales, scheme, sequence-length, encoder-layers)");
    }

    std::ostringstream csv;
    csv << "axis,setting,accuracy,balanced_accuracy,macro_f1,kappa\n";
    for (const auto& s : settings) {
        auto epochs = base_epochs;
        if (s.model.sequence_length > 1)
            epochs = pack_sequences(epochs, s.model.sequence_length);
        check_geometry(s.model, epochs);
        Options run = o;
        run.model = s.model;
        run.train.scheme = s.scheme;  // seed left fixed across settings
        auto [tr, va] = split_for_training(run, epochs);
        auto res = train(tr, va, run.model, run.train);
        if (res.diverged) throw NumericalError("training diverged at setting " + s.value);
        auto rep = evaluate(res.best_params, va, run.train.threads);
        char row[160];
        std::snprintf(row, sizeof row, "%s,%s,%.6f,%.6f,%.6f,%.6f\n", o.axis.c_str(),
                      s.value.c_str(), rep.accuracy, rep.balanced_accuracy, rep.macro_f1,
                      rep.kappa.value_or(0.0));
        csv << row;
        std::fputs(row, stdout);
    }
    fs::create_directories(fs::path(o.out));
    const fs::path out = fs::path(o.out) / ("sweep_" + o.axis + ".csv");
    write_text(out, csv.str());
    man.inputs = {{"store", o.store}, {"axis", o.axis}};
    man.outputs = {{"csv", out.string()}};
    man.write(o, fs::path(o.out) / ("sweep_" + o.axis + ".manifest.json"));
    return 0;
}

int cmd_gradcheck(Options& o) {
    std::mt19937_64 rng(o.train.seed + 1);
    auto rand_t = [&](std::vector<std::size_t> shape, double lo = -1.0, double hi = 1.0) {
        std::uniform_real_distribution<double> d(lo, hi);
        Tensor t(std::move(shape));
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = d(rng);
        return t;
    };
    auto scalarize = [](const Var& y, std::size_t n) {
        return mean_over_rows(transpose2d(reshape(y, {1, n})));
    };

    struct Row {
        std::string op;
        double err;
    };
    std::vector<Row> rows;

    {
        auto x = rand_t({2, 3});
        auto w = rand_t({3, 4});
        auto b = rand_t({4});
        rows.push_back({"linear", grad_check(
            [&](const std::vector<Var>& L) { return scalarize(linear(L[0], L[1], L[2]), 8); },
            {x, w, b})});
    }
    {
        ConvSpec spec = ConvSpec::same_width(2, 3);
        rows.push_back({"conv2d", grad_check(
            [&](const std::vector<Var>& L) {
                return scalarize(conv2d(L[0], spec, L[1], L[2]), 36);
            },
            {rand_t({2, 2, 9}), rand_t({2, 2, 1, 3}), rand_t({2})})});
    }
    rows.push_back({"relu", grad_check(
        [&](const std::vector<Var>& L) { return scalarize(relu(L[0]), 6); },
        {Tensor({2, 3}, {0.4, -0.9, 1.2, -0.3, 0.8, -1.5})})});
    rows.push_back({"maxpool2d", grad_check(
        [&](const std::vector<Var>& L) { return scalarize(maxpool2d(L[0], 3), 2); },
        {Tensor({1, 1, 6}, {0.9, 0.2, -0.8, 0.4, 1.7, 0.6})})});
    rows.push_back({"softmax_cross_entropy", grad_check(
        [](const std::vector<Var>& L) {
            return weighted_cross_entropy(L[0], {0, 2, 4, 1}, {1.0, 0.5, 2.0, 1.5, 3.0});
        },
        {rand_t({4, 5}, -2.0, 2.0)})});
    rows.push_back({"layer_norm", grad_check(
        [&](const std::vector<Var>& L) {
            auto y = layer_norm(L[0], L[1], L[2]);
            return scalarize(matmul_transb(y, y), 9);
        },
        {rand_t({3, 4}), rand_t({4}, 0.5, 1.5), rand_t({4})})});
    {
        std::vector<Tensor> pts;
        pts.push_back(rand_t({3, 4}));
        for (int i = 0; i < 4; ++i) pts.push_back(rand_t({4, 4}, -0.7, 0.7));
        for (int i = 0; i < 4; ++i) pts.push_back(rand_t({4}, -0.3, 0.3));
        rows.push_back({"attention", grad_check(
            [&](const std::vector<Var>& L) {
                return scalarize(multi_head_self_attention(L[0], 2, L[1], L[5], L[2], L[6],
                                                           L[3], L[7], L[4], L[8]),
                                 12);
            },
            pts)});
    }
    rows.push_back({"transpose2d", grad_check(
        [&](const std::vector<Var>& L) { return scalarize(transpose2d(L[0]), 6); },
        {rand_t({2, 3})})});
    rows.push_back({"mean_over_rows", grad_check(
        [&](const std::vector<Var>& L) {
            return scalarize(reshape(mean_over_rows(L[0]), {1, 3}), 3);
        },
        {rand_t({4, 3})})});
    rows.push_back({"dropout", grad_check(
        [&](const std::vector<Var>& L) {
            std::mt19937_64 r(7);  // fixed mask so differences are consistent
            return scalarize(dropout(L[0], 0.5, true, r), 8);
        },
        {rand_t({2, 4})})});
    {
        ModelConfig cfg;
        cfg.channels = 2;
        cfg.samples_per_epoch = 144;
        cfg.base_kernel = 5;
        cfg.pool_factor = 3;
        cfg.filters_per_block = 2;
        cfg.ff_width = 8;
        auto params = build_model(cfg, o.train.seed + 2);
        const Tensor x = rand_t({2, 144});
        rows.push_back({"end_to_end_loss", grad_check(
            [&](const std::vector<Var>& leaves) {
                std::mt19937_64 r(0);
                Var logits = forward_logits(make_leaf(x, false), leaves, cfg, false, r);
                return weighted_cross_entropy(logits, {3}, {1.0, 0.7, 1.3, 2.0, 0.5});
            },
            params.values)});
    }

    const double threshold = 1e-4;
    bool all_ok = true;
    std::printf("%-22s %14s\n", "op", "max rel error");
    for (const auto& r : rows) {
        const bool ok = r.err <= threshold;
        all_ok = all_ok && ok;
        std::printf("%-22s %14.3e %s\n", r.op.c_str(), r.err, ok ? "" : "FAIL");
    }
    if (!all_ok) throw NumericalError("gradient check exceeded threshold 1e-4");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    Options o;
    std::string config_path;
    std::vector<std::string> psg, hyp;
    bool use_synth = false;
    std::string proportions;

    CLI::App app{"sleep staging pipeline"};
    app.require_subcommand(1);

    // Shared flags; registered per subcommand so help stays local.
    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "flat TOML config file");
        cmd->add_option("--seed", o.train.seed, "random seed");
        cmd->add_option("--out", o.out, "output path or directory");
        cmd->add_option("--channels", o.model.channels, "input channel count");
        cmd->add_option("--sequence-length", o.model.sequence_length,
                        "consecutive epochs per input");
        cmd->add_option("--scales", o.model.scales, "parallel conv scales");
        cmd->add_option("--encoder-layers", o.model.encoder_layers, "encoder layer count");
        cmd->add_option("--samples-per-epoch", o.model.samples_per_epoch,
                        "samples per 30 s epoch");
        cmd->add_option("--threads", o.train.threads, "worker threads (0 = auto)");
        cmd->add_option(
            "--scheme",
            [&](const std::vector<std::string>& v) {
                o.train.scheme = weight_scheme_from_string(v[0]);
                return true;
            },
            "class weight scheme: none, regular, balanced, log");
    };

    auto* c_pre = app.add_subcommand("preprocess", "EDF or synthetic input to an epoch store");
    add_common(c_pre);
    c_pre->add_option("--psg", psg, "PSG EDF file (repeatable)");
    c_pre->add_option("--hypnogram", hyp, "matching hypnogram EDF+ file (repeatable)");
    c_pre->add_option("--channel", o.channel_filter, "channel label filter (repeatable)");
    c_pre->add_option("--policy", o.policy, "wake policy: sleep-edfx or strict");
    c_pre->add_flag("--synth", use_synth, "generate synthetic data instead of reading EDF");

    auto* c_synth = app.add_subcommand("synth", "write a synthetic epoch store");
    add_common(c_synth);
    for (auto* cmd : {c_pre, c_synth}) {
        cmd->add_option("--subjects", o.synth.subjects, "synthetic subject count");
        cmd->add_option("--epochs-per-subject", o.synth.epochs_per_subject,
                        "epochs per synthetic subject");
        cmd->add_option("--noise", o.synth.noise_sigma, "noise standard deviation");
        cmd->add_option("--proportions", proportions, "five class proportions, comma separated");
    }

    auto* c_train = app.add_subcommand("train", "train on an epoch store");
    add_common(c_train);
    c_train->add_option("--store", o.store, "training epoch store");
    c_train->add_option("--val-store", o.val_store, "validation store (default: subject fold)");

    auto* c_eval = app.add_subcommand("eval", "evaluate a checkpoint on a store");
    add_common(c_eval);
    c_eval->add_option("--checkpoint", o.checkpoint, "NSC1 checkpoint");
    c_eval->add_option("--store", o.store, "evaluation epoch store");

    auto* c_sweep = app.add_subcommand("sweep", "compare settings along one axis");
    add_common(c_sweep);
    c_sweep->add_option("--store", o.store, "epoch store");
    c_sweep->add_option("--val-store", o.val_store, "validation store (default: subject fold)");
    c_sweep->add_option("--axis", o.axis,
                        "scales | scheme | sequence-length | encoder-layers");

    auto* c_grad = app.add_subcommand("gradcheck", "finite-difference gradient audit");
    add_common(c_grad);

    try {
        // First pass binds --config; file values are applied, then flags win.
        app.parse(argc, argv);
        if (!config_path.empty()) {
            Options file_defaults;
            apply_config_file(file_defaults, config_path);
            o = file_defaults;
            app.clear();
            app.parse(argc, argv);
        }
        if (!proportions.empty()) {
            std::stringstream ss(proportions);
            std::string tok;
            std::size_t i = 0;
            while (std::getline(ss, tok, ',')) {
                if (i >= kStageCount) throw ConfigError("expected five proportions");
                o.synth.proportions[i++] = parse_real("proportions", tok);
            }
            if (i != kStageCount) throw ConfigError("expected five proportions");
        }
        o.model.validate_or_throw();
        o.train.validate_or_throw();

        if (app.got_subcommand(c_synth)) return cmd_synth(o);
        if (app.got_subcommand(c_pre)) return cmd_preprocess(o, psg, hyp, use_synth);
        if (app.got_subcommand(c_train)) return cmd_train(o);
        if (app.got_subcommand(c_eval)) return cmd_eval(o);
        if (app.got_subcommand(c_sweep)) return cmd_sweep(o);
        if (app.got_subcommand(c_grad)) return cmd_gradcheck(o);
        return 2;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
