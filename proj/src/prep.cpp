#include "neurosleep/prep.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <stdexcept>

#include "neurosleep/dsp.hpp"

namespace nsn {

std::pair<double, double> standard_scale(std::vector<double>& series) {
    if (series.empty()) throw std::invalid_argument("standard_scale: empty series");
    double mean = 0.0;
    for (double v : series) mean += v;
    mean /= double(series.size());
    double var = 0.0;
    for (double v : series) var += (v - mean) * (v - mean);
    var /= double(series.size());
    const double sd = std::sqrt(var);
    if (sd < 1e-12)
        throw std::invalid_argument("standard_scale: channel is constant (std " +
                                    std::to_string(sd) + "), cannot scale");
    for (double& v : series) v = (v - mean) / sd;
    return {mean, sd};
}

std::optional<std::size_t> map_label(const std::string& raw) {
    // Sleep-EDFx / EDF+ hypnogram strings plus bare AASM/R&K names.
    static const std::map<std::string, std::size_t> table = {
        {"Sleep stage W", 0},  {"Sleep stage 1", 1},  {"Sleep stage 2", 2},
        {"Sleep stage 3", 3},  {"Sleep stage 4", 3},  {"Sleep stage R", 4},
        {"Sleep stage N1", 1}, {"Sleep stage N2", 2}, {"Sleep stage N3", 3},
        {"W", 0}, {"N1", 1}, {"N2", 2}, {"N3", 3}, {"R", 4},
        {"S1", 1}, {"S2", 2}, {"S3", 3}, {"S4", 3},
    };
    auto it = table.find(raw);
    if (it != table.end()) return it->second;
    return std::nullopt;  // MOVEMENT, UNKNOWN, '?' and anything unrecognized
}

namespace {

struct MappedSpan {
    double onset, end;
    std::optional<std::size_t> label;
};

}  // namespace

std::vector<EpochRecord> epochize(const Recording& rec, WakePolicy policy,
                                  EpochizeStats* stats) {
    constexpr double kEpochSec = 30.0;
    EpochizeStats local;
    EpochizeStats& st = stats ? *stats : local;

    if (rec.channels.empty()) throw std::invalid_argument("epochize: recording has no channels");
    const double fs = rec.channels[0].fs;
    const std::size_t n_samples = rec.channels[0].samples.size();
    for (const auto& ch : rec.channels) {
        if (ch.fs != fs) throw std::invalid_argument("epochize: mixed sampling rates");
        if (std::llabs(std::int64_t(ch.samples.size()) - std::int64_t(n_samples)) > 1)
            throw std::invalid_argument("epochize: channel duration mismatch on " + ch.name);
    }
    const std::size_t spe = std::size_t(std::llround(kEpochSec * fs));

    std::vector<MappedSpan> spans;
    double prev_onset = -1e300;
    for (const auto& a : rec.annotations) {
        if (a.onset_seconds < prev_onset)
            throw std::invalid_argument("epochize: annotation onsets not non-decreasing");
        prev_onset = a.onset_seconds;
        spans.push_back({a.onset_seconds, a.onset_seconds + a.duration_seconds,
                         map_label(a.raw_label)});
    }

    // Sleep period: first to last non-wake scored span.
    double sleep_start = -1.0, sleep_end = -1.0;
    for (const auto& s : spans)
        if (s.label && *s.label != 0) {
            if (sleep_start < 0.0) sleep_start = s.onset;
            sleep_end = s.end;
        }
    if (sleep_start < 0.0) return {};  // no sleep scored

    double keep_start = sleep_start;
    if (policy == WakePolicy::SleepEdfx) keep_start = std::max(0.0, sleep_start - 20.0 * 60.0);
    const double keep_end = sleep_end;

    auto label_at = [&](double t0, double t1) -> std::optional<MappedSpan> {
        for (const auto& s : spans)
            if (s.onset <= t0 + 1e-9 && s.end >= t1 - 1e-9) return s;
        return std::nullopt;
    };

    std::vector<EpochRecord> out;
    std::uint32_t index = 0;
    for (double t = keep_start; t + kEpochSec <= keep_end + 1e-9; t += kEpochSec, ++index) {
        const auto span = label_at(t, t + kEpochSec);
        if (!span) {
            ++st.dropped_unannotated;
            continue;
        }
        if (!span->label) {
            ++st.dropped_excluded;
            continue;
        }
        const std::size_t s0 = std::size_t(std::llround(t * fs));
        if (s0 + spe > n_samples) {
            ++st.dropped_incomplete;
            continue;
        }
        EpochRecord ep;
        ep.channels = rec.channels.size();
        ep.width = spe;
        ep.samples.resize(ep.channels * spe);
        for (std::size_t c = 0; c < ep.channels; ++c)
            std::copy(rec.channels[c].samples.begin() + s0,
                      rec.channels[c].samples.begin() + s0 + spe,
                      ep.samples.begin() + c * spe);
        ep.label = *span->label;
        ep.subject_id = rec.subject_id;
        ep.epoch_index = index;
        ++st.kept;
        ++st.class_counts[ep.label];
        out.push_back(std::move(ep));
    }
    return out;
}

std::vector<EpochRecord> preprocess_recording(const Recording& rec, const PrepOptions& opt,
                                              EpochizeStats* stats) {
    Recording processed;
    processed.subject_id = rec.subject_id;
    processed.annotations = rec.annotations;
    for (const auto& ch : rec.channels) {
        Channel pc;
        pc.name = ch.name;
        pc.fs = double(opt.target_fs);
        auto filtered = dsp::bandpass(ch.samples, ch.fs, opt.band_low_hz, opt.band_high_hz);
        pc.samples = dsp::resample(filtered, std::size_t(std::llround(ch.fs)), opt.target_fs);
        if (!opt.per_epoch_scale) standard_scale(pc.samples);
        processed.channels.push_back(std::move(pc));
    }
    auto epochs = epochize(processed, opt.policy, stats);
    if (opt.per_epoch_scale) {
        for (auto& ep : epochs)
            for (std::size_t c = 0; c < ep.channels; ++c) {
                std::vector<double> row(ep.samples.begin() + c * ep.width,
                                        ep.samples.begin() + (c + 1) * ep.width);
                standard_scale(row);
                std::copy(row.begin(), row.end(), ep.samples.begin() + c * ep.width);
            }
    }
    return epochs;
}

std::vector<EpochRecord> pack_sequences(const std::vector<EpochRecord>& epochs, std::size_t S,
                                        std::vector<std::string>* warnings) {
    if (S < 1 || S > 5) throw std::invalid_argument("pack_sequences: S must be in [1,5]");
    if (S == 1) return epochs;

    std::vector<EpochRecord> out;
    std::size_t i = 0;
    while (i < epochs.size()) {
        std::size_t j = i;
        while (j < epochs.size() && epochs[j].subject_id == epochs[i].subject_id) ++j;
        const std::size_t count = j - i;
        if (count < S) {
            if (warnings)
                warnings->push_back("subject " + epochs[i].subject_id + " has only " +
                                    std::to_string(count) + " epochs, fewer than S=" +
                                    std::to_string(S) + "; contributes nothing");
        } else {
            for (std::size_t k = i; k + S <= j; ++k) {
                const auto& last = epochs[k + S - 1];
                EpochRecord p;
                p.channels = last.channels;
                p.width = last.width * S;
                p.samples.resize(p.channels * p.width);
                for (std::size_t c = 0; c < p.channels; ++c)
                    for (std::size_t s = 0; s < S; ++s) {
                        const auto& e = epochs[k + s];
                        std::copy(e.samples.begin() + c * e.width,
                                  e.samples.begin() + (c + 1) * e.width,
                                  p.samples.begin() + c * p.width + s * e.width);
                    }
                p.label = last.label;
                p.subject_id = last.subject_id;
                p.epoch_index = last.epoch_index;
                out.push_back(std::move(p));
            }
        }
        i = j;
    }
    return out;
}

}  // namespace nsn
