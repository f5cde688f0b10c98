#include "neurosleep/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

namespace nsn {

void SynthSpec::validate_or_throw() const {
    for (std::size_t k = 0; k < kStageCount; ++k) {
        const auto& b = bands[k];
        auto check = [&](double lo, double hi) {
            if (lo < 0.5 || hi > 30.0 || lo >= hi)
                throw std::invalid_argument("SynthSpec: class " + std::string(kStageNames[k]) +
                                            " band [" + std::to_string(lo) + ", " +
                                            std::to_string(hi) + "] not inside [0.5, 30] Hz");
        };
        check(b.low_hz, b.high_hz);
        if (b.second_amplitude > 0.0) check(b.second_low_hz, b.second_high_hz);
    }
    double psum = 0.0;
    for (double p : proportions) {
        if (p < 0.0) throw std::invalid_argument("SynthSpec: negative class proportion");
        psum += p;
    }
    if (std::abs(psum - 1.0) > 1e-9)
        throw std::invalid_argument("SynthSpec: proportions sum to " + std::to_string(psum) +
                                    ", expected 1");
    if (channels == 0 || subjects == 0 || epochs_per_subject == 0 || samples_per_epoch == 0)
        throw std::invalid_argument("SynthSpec: counts must be positive");
    if (noise_sigma < 0.0) throw std::invalid_argument("SynthSpec: negative noise sigma");
    if (fs <= 2.0 * 30.0)
        throw std::invalid_argument("SynthSpec: fs must exceed twice the top band edge");
}

std::array<std::size_t, kStageCount> class_allocation(const SynthSpec& spec, std::size_t n) {
    // Largest remainder: exact totals, reproducible, ties broken by class index.
    std::array<std::size_t, kStageCount> counts{};
    std::array<double, kStageCount> rem{};
    std::size_t assigned = 0;
    for (std::size_t k = 0; k < kStageCount; ++k) {
        const double exact = spec.proportions[k] * double(n);
        counts[k] = std::size_t(std::floor(exact + 1e-9));
        rem[k] = exact - double(counts[k]);
        assigned += counts[k];
    }
    while (assigned < n) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < kStageCount; ++k)
            if (rem[k] > rem[best]) best = k;
        ++counts[best];
        rem[best] = -1.0;
        ++assigned;
    }
    return counts;
}

namespace {

void add_band_tone(std::vector<double>& row, double lo, double hi, double amp, double fs,
                   std::mt19937_64& rng) {
    std::uniform_real_distribution<double> freq_d(lo, hi);
    std::uniform_real_distribution<double> phase_d(0.0, 2.0 * std::numbers::pi);
    const double f = freq_d(rng);
    const double phi = phase_d(rng);
    const double w = 2.0 * std::numbers::pi * f / fs;
    for (std::size_t t = 0; t < row.size(); ++t) row[t] += amp * std::sin(w * double(t) + phi);
}

}  // namespace

std::vector<EpochRecord> generate_dataset(const SynthSpec& spec) {
    spec.validate_or_throw();
    const std::size_t n = spec.subjects * spec.epochs_per_subject;
    const auto counts = class_allocation(spec, n);

    std::mt19937_64 rng(spec.seed);

    std::vector<std::size_t> labels;
    labels.reserve(n);
    for (std::size_t k = 0; k < kStageCount; ++k)
        labels.insert(labels.end(), counts[k], k);
    std::shuffle(labels.begin(), labels.end(), rng);

    std::normal_distribution<double> noise(0.0, spec.noise_sigma);
    std::vector<EpochRecord> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t subject = i / spec.epochs_per_subject;
        const auto& band = spec.bands[labels[i]];
        EpochRecord ep;
        ep.channels = spec.channels;
        ep.width = spec.samples_per_epoch;
        ep.samples.assign(ep.channels * ep.width, 0.0);
        ep.label = labels[i];
        char sid[32];
        std::snprintf(sid, sizeof sid, "S%03zu", subject);
        ep.subject_id = sid;
        ep.epoch_index = std::uint32_t(i % spec.epochs_per_subject);
        for (std::size_t c = 0; c < ep.channels; ++c) {
            std::vector<double> row(ep.width, 0.0);
            add_band_tone(row, band.low_hz, band.high_hz, band.amplitude, spec.fs, rng);
            if (band.second_amplitude > 0.0)
                add_band_tone(row, band.second_low_hz, band.second_high_hz,
                              band.second_amplitude, spec.fs, rng);
            if (spec.noise_sigma > 0.0)
                for (double& v : row) v += noise(rng);
            standard_scale(row);
            std::copy(row.begin(), row.end(), ep.samples.begin() + c * ep.width);
        }
        out.push_back(std::move(ep));
    }
    return out;
}

}  // namespace nsn
