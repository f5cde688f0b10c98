#pragma once

#include <cstddef>
#include <vector>

namespace nsn::dsp {

struct Biquad {
    double b0, b1, b2;  // numerator
    double a1, a2;      // denominator (a0 normalized to 1)
};

// Butterworth designs via analog prototype + bilinear transform. Even order.
std::vector<Biquad> butter_lowpass(std::size_t order, double cutoff_hz, double fs);
std::vector<Biquad> butter_highpass(std::size_t order, double cutoff_hz, double fs);

// Single forward pass through a cascade, steady-state initial conditions.
std::vector<double> sosfilt(const std::vector<Biquad>& sos, const std::vector<double>& x);

// Forward-backward (zero phase) with odd-reflection edge padding.
std::vector<double> filtfilt(const std::vector<Biquad>& sos, const std::vector<double>& x,
                             std::size_t padlen);

// 0.5-30 Hz zero-phase Butterworth band-pass (4th order each edge, applied
// forward and backward). Output length equals input length.
std::vector<double> bandpass(const std::vector<double>& x, double fs, double low_hz = 0.5,
                             double high_hz = 30.0);

// Rational polyphase resampling with a Kaiser-windowed sinc anti-alias
// filter. Downsampling only; output length = round(len * fs_out / fs_in).
std::vector<double> resample(const std::vector<double>& x, std::size_t fs_in,
                             std::size_t fs_out = 100);

}  // namespace nsn::dsp
