#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <utility>
#include <string>
#include <vector>

namespace nsn {

// Sleep stage indices used throughout: 0 W, 1 N1, 2 N2, 3 N3, 4 R.
inline constexpr std::size_t kStageCount = 5;
inline constexpr const char* kStageNames[kStageCount] = {"W", "N1", "N2", "N3", "R"};

struct Channel {
    std::string name;
    std::vector<double> samples;
    double fs = 0.0;
};

struct StageAnnotation {
    double onset_seconds = 0.0;
    double duration_seconds = 0.0;
    std::string raw_label;
};

struct Recording {
    std::string subject_id;
    std::vector<Channel> channels;
    std::vector<StageAnnotation> annotations;
};

// One 30 s labeled segment (or S of them packed along time).
struct EpochRecord {
    std::size_t channels = 0;
    std::size_t width = 0;  // samples per channel; 3000 for a single epoch
    std::vector<double> samples;  // channels x width, row-major
    std::size_t label = 0;
    std::string subject_id;
    std::uint32_t epoch_index = 0;
};

// Z-score in place over the whole series; returns (mean, population std).
// Rejects (near-)constant input.
std::pair<double, double> standard_scale(std::vector<double>& series);

enum class WakePolicy {
    SleepEdfx,  // keep 20 minutes of wake before sleep onset, none after
    Strict,     // keep nothing outside the sleep period
};

// AASM label or R&K label (S3 and S4 both map to N3). nullopt = exclude.
std::optional<std::size_t> map_label(const std::string& raw);

struct EpochizeStats {
    std::size_t kept = 0;
    std::size_t dropped_unannotated = 0;
    std::size_t dropped_excluded = 0;
    std::size_t dropped_incomplete = 0;
    std::size_t class_counts[kStageCount] = {0, 0, 0, 0, 0};
};

// Expects all channels already at 100 Hz and equal length. Contiguous 30 s
// windows aligned to the retained span; trailing fragments are dropped.
std::vector<EpochRecord> epochize(const Recording& rec, WakePolicy policy,
                                  EpochizeStats* stats = nullptr);

struct PrepOptions {
    double band_low_hz = 0.5;
    double band_high_hz = 30.0;
    std::size_t target_fs = 100;
    WakePolicy policy = WakePolicy::SleepEdfx;
    bool per_epoch_scale = false;  // default scales per channel over the recording
};

// band-pass -> resample -> standard scale -> epochize.
std::vector<EpochRecord> preprocess_recording(const Recording& rec, const PrepOptions& opt,
                                              EpochizeStats* stats = nullptr);

// Sliding windows of S consecutive same-subject epochs; the label is the
// last epoch's. Epoch order within each subject is preserved.
std::vector<EpochRecord> pack_sequences(const std::vector<EpochRecord>& epochs, std::size_t S,
                                        std::vector<std::string>* warnings = nullptr);

}  // namespace nsn
