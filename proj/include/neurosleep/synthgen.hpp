#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "neurosleep/prep.hpp"

namespace nsn {

struct ClassBand {
    double low_hz;
    double high_hz;
    double amplitude;
    double second_low_hz = 0.0;   // optional second component (REM-style mix)
    double second_high_hz = 0.0;
    double second_amplitude = 0.0;
};

// Class-separable spectral signatures: W alpha, N1 theta, N2 spindle band,
// N3 delta, R mixed theta+beta.
struct SynthSpec {
    std::array<ClassBand, kStageCount> bands = {{
        {8.0, 12.0, 1.0},                       // W
        {4.0, 8.0, 1.0},                        // N1
        {12.0, 14.0, 1.0},                      // N2
        {0.5, 4.0, 1.0},                        // N3
        {4.0, 8.0, 0.7, 15.0, 25.0, 0.7},       // R
    }};
    std::array<double, kStageCount> proportions = {0.2, 0.2, 0.2, 0.2, 0.2};
    double noise_sigma = 0.5;
    std::size_t channels = 2;
    std::size_t subjects = 40;
    std::size_t epochs_per_subject = 50;
    std::size_t samples_per_epoch = 3000;
    double fs = 100.0;
    std::uint64_t seed = 0;

    void validate_or_throw() const;
};

// Deterministic for a given spec. Epochs are grouped into synthetic
// subjects; class counts follow the proportions by largest remainder.
std::vector<EpochRecord> generate_dataset(const SynthSpec& spec);

// Exact per-class allocation of n epochs under the spec's proportions.
std::array<std::size_t, kStageCount> class_allocation(const SynthSpec& spec, std::size_t n);

}  // namespace nsn
