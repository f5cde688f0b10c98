#include "neurosleep/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace nsn::dsp {

namespace {

constexpr double pi = std::numbers::pi;

// Normalized (|p| = 1) Butterworth pole pairs for an even order.
std::vector<std::complex<double>> butter_poles(std::size_t order) {
    if (order == 0 || order % 2 != 0)
        throw std::invalid_argument("butterworth: order must be a positive even number");
    std::vector<std::complex<double>> poles;
    for (std::size_t k = 0; k < order / 2; ++k) {
        const double theta = pi * double(2 * k + order + 1) / double(2 * order);
        poles.push_back(std::polar(1.0, theta));  // Re < 0 half of each pair
    }
    return poles;
}

double prewarp(double cutoff_hz, double fs) {
    return 2.0 * fs * std::tan(pi * cutoff_hz / fs);
}

}  // namespace

std::vector<Biquad> butter_lowpass(std::size_t order, double cutoff_hz, double fs) {
    if (cutoff_hz <= 0.0 || cutoff_hz >= fs / 2.0)
        throw std::invalid_argument("butter_lowpass: cutoff must be in (0, fs/2)");
    const double wc = prewarp(cutoff_hz, fs);
    const double K = 2.0 * fs;
    std::vector<Biquad> sos;
    for (const auto& q : butter_poles(order)) {
        const std::complex<double> p = wc * q;
        const double a1 = -2.0 * p.real();
        const double a2 = std::norm(p);
        const double d0 = K * K + a1 * K + a2;
        Biquad s;
        s.b0 = wc * wc / d0;
        s.b1 = 2.0 * wc * wc / d0;
        s.b2 = wc * wc / d0;
        s.a1 = 2.0 * (a2 - K * K) / d0;
        s.a2 = (K * K - a1 * K + a2) / d0;
        sos.push_back(s);
    }
    return sos;
}

std::vector<Biquad> butter_highpass(std::size_t order, double cutoff_hz, double fs) {
    if (cutoff_hz <= 0.0 || cutoff_hz >= fs / 2.0)
        throw std::invalid_argument("butter_highpass: cutoff must be in (0, fs/2)");
    const double wc = prewarp(cutoff_hz, fs);
    const double K = 2.0 * fs;
    std::vector<Biquad> sos;
    for (const auto& q : butter_poles(order)) {
        const std::complex<double> p = wc / q;  // lowpass-to-highpass transform
        const double a1 = -2.0 * p.real();
        const double a2 = std::norm(p);
        const double d0 = K * K + a1 * K + a2;
        Biquad s;
        s.b0 = K * K / d0;
        s.b1 = -2.0 * K * K / d0;
        s.b2 = K * K / d0;
        s.a1 = 2.0 * (a2 - K * K) / d0;
        s.a2 = (K * K - a1 * K + a2) / d0;
        sos.push_back(s);
    }
    return sos;
}

namespace {

// Direct form II transposed, initial state at step steady state for x[0].
void biquad_run(const Biquad& s, std::vector<double>& x) {
    const double dc_gain = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
    const double x0 = x.empty() ? 0.0 : x[0];
    double z1 = (dc_gain - s.b0) * x0;
    double z2 = (s.b2 - s.a2 * dc_gain) * x0;
    for (double& v : x) {
        const double in = v;
        const double out = s.b0 * in + z1;
        z1 = s.b1 * in - s.a1 * out + z2;
        z2 = s.b2 * in - s.a2 * out;
        v = out;
    }
}

}  // namespace

std::vector<double> sosfilt(const std::vector<Biquad>& sos, const std::vector<double>& x) {
    std::vector<double> y = x;
    for (const auto& s : sos) biquad_run(s, y);
    return y;
}

std::vector<double> filtfilt(const std::vector<Biquad>& sos, const std::vector<double>& x,
                             std::size_t padlen) {
    if (x.empty()) return {};
    padlen = std::min(padlen, x.size() - 1);
    const std::size_t n = x.size();
    std::vector<double> ext;
    ext.reserve(n + 2 * padlen);
    for (std::size_t i = padlen; i > 0; --i) ext.push_back(2.0 * x[0] - x[i]);
    ext.insert(ext.end(), x.begin(), x.end());
    for (std::size_t i = 1; i <= padlen; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 1 - i]);

    ext = sosfilt(sos, ext);
    std::reverse(ext.begin(), ext.end());
    ext = sosfilt(sos, ext);
    std::reverse(ext.begin(), ext.end());
    return std::vector<double>(ext.begin() + padlen, ext.begin() + padlen + n);
}

std::vector<double> bandpass(const std::vector<double>& x, double fs, double low_hz,
                             double high_hz) {
    if (fs <= 2.0 * high_hz)
        throw std::invalid_argument("bandpass: sampling rate " + std::to_string(fs) +
                                    " Hz must exceed twice the upper edge " +
                                    std::to_string(high_hz) + " Hz");
    const auto lp = butter_lowpass(4, high_hz, fs);
    const auto hp = butter_highpass(4, low_hz, fs);
    // Transients of the low edge dominate; pad a few of its time constants.
    const std::size_t padlen = std::size_t(3.0 * fs / low_hz);
    return filtfilt(hp, filtfilt(lp, x, padlen), padlen);
}

namespace {

double bessel_i0(double x) {
    double sum = 1.0, term = 1.0;
    for (int k = 1; k < 50; ++k) {
        term *= (x / (2.0 * k)) * (x / (2.0 * k));
        sum += term;
        if (term < 1e-16 * sum) break;
    }
    return sum;
}

}  // namespace

std::vector<double> resample(const std::vector<double>& x, std::size_t fs_in,
                             std::size_t fs_out) {
    if (fs_in < fs_out)
        throw std::invalid_argument("resample: upsampling (" + std::to_string(fs_in) + " -> " +
                                    std::to_string(fs_out) + " Hz) is not supported");
    if (fs_in == fs_out) return x;
    const std::size_t g = std::gcd(fs_in, fs_out);
    const std::size_t up = fs_out / g, down = fs_in / g;
    const std::size_t n = x.size();
    const std::size_t out_len = (n * up + down / 2) / down;

    // Kaiser-windowed sinc at the upsampled rate, cutoff pi/down, gain up.
    const std::size_t half = 10 * std::max(up, down);
    const std::size_t taps = 2 * half + 1;
    const double beta = 8.6;
    const double i0b = bessel_i0(beta);
    std::vector<double> h(taps);
    for (std::size_t k = 0; k < taps; ++k) {
        const double m = double(k) - double(half);
        const double sinc = m == 0.0 ? 1.0 / double(down)
                                     : std::sin(pi * m / double(down)) / (pi * m);
        const double r = 2.0 * double(k) / double(taps - 1) - 1.0;
        const double win = bessel_i0(beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / i0b;
        h[k] = double(up) * sinc * win;
    }

    std::vector<double> y(out_len, 0.0);
    for (std::size_t m = 0; m < out_len; ++m) {
        // Filter center aligned with output position m*down on the upsampled grid.
        const std::ptrdiff_t t = std::ptrdiff_t(m * down + half);
        std::ptrdiff_t n_min = (t - std::ptrdiff_t(taps - 1) + std::ptrdiff_t(up) - 1) /
                               std::ptrdiff_t(up);
        n_min = std::max<std::ptrdiff_t>(n_min, 0);
        const std::ptrdiff_t n_max = std::min<std::ptrdiff_t>(t / std::ptrdiff_t(up),
                                                              std::ptrdiff_t(n) - 1);
        double acc = 0.0;
        for (std::ptrdiff_t j = n_min; j <= n_max; ++j)
            acc += x[std::size_t(j)] * h[std::size_t(t - j * std::ptrdiff_t(up))];
        y[m] = acc;
    }
    return y;
}

}  // namespace nsn::dsp
