#include "core/waveform.hpp"

#include <cmath>
#include <string>

#include "core/error.hpp"

namespace hsflow {

void Waveform::validate() const {
    if (!(period > 0.0)) throw Error::format("waveform: period must be positive");
    if (t.empty() || t.size() != q.size()) {
        throw Error::format("waveform: empty or mismatched sample arrays");
    }
    for (size_t i = 0; i < t.size(); ++i) {
        if (!(t[i] >= 0.0) || !(t[i] < period)) {
            throw Error::format("waveform: sample time " + std::to_string(t[i]) +
                                " outside [0, period)");
        }
        if (i > 0 && !(t[i] > t[i - 1])) {
            throw Error::format("waveform: sample times not strictly increasing");
        }
        if (!(q[i] > 0.0)) {
            throw Error::format("waveform: flow rate must be positive, got " +
                                std::to_string(q[i]));
        }
    }
}

double Waveform::flow_at(double time) const {
    const size_t n = t.size();
    if (n == 1) return q[0];
    double tau = std::fmod(time, period);
    if (tau < 0.0) tau += period;
    // find the segment [t[i], t[i+1]) containing tau, wrapping the last one
    size_t i = n - 1;
    for (size_t k = 0; k + 1 < n; ++k) {
        if (tau >= t[k] && tau < t[k + 1]) {
            i = k;
            break;
        }
    }
    if (tau < t[0]) {
        // before the first sample: wrap segment from (t[n-1] - period) to t[0]
        const double span = t[0] - (t[n - 1] - period);
        const double w = (tau - (t[n - 1] - period)) / span;
        return q[n - 1] + w * (q[0] - q[n - 1]);
    }
    if (i == n - 1) {
        const double span = (t[0] + period) - t[n - 1];
        const double w = (tau - t[n - 1]) / span;
        return q[n - 1] + w * (q[0] - q[n - 1]);
    }
    const double w = (tau - t[i]) / (t[i + 1] - t[i]);
    return q[i] + w * (q[i + 1] - q[i]);
}

double Waveform::mean_flow() const {
    const size_t n = t.size();
    if (n == 1) return q[0];
    // exact integral of the piecewise-linear interpolant over one period
    double integral = 0.0;
    for (size_t i = 0; i + 1 < n; ++i) {
        integral += 0.5 * (q[i] + q[i + 1]) * (t[i + 1] - t[i]);
    }
    integral += 0.5 * (q[n - 1] + q[0]) * ((t[0] + period) - t[n - 1]);
    return integral / period;
}

Waveform make_waveform(const WaveformParams& p) {
    if (p.samples < 2) throw Error::usage("waveform: need at least 2 samples");
    if (std::abs(p.amp1) + std::abs(p.amp2) >= 1.0) {
        throw Error::usage("waveform: harmonic amplitudes would drive Q non-positive");
    }
    Waveform w;
    w.period = p.period;
    for (int i = 0; i < p.samples; ++i) {
        const double time = p.period * double(i) / double(p.samples);
        const double phase = 2.0 * M_PI * double(i) / double(p.samples);
        const double rel = 1.0 + p.amp1 * std::sin(phase + p.phase1) +
                           p.amp2 * std::sin(2.0 * phase + p.phase2);
        w.t.push_back(time);
        w.q.push_back(p.q_mean * rel);
    }
    w.validate();
    return w;
}

}  // namespace hsflow
