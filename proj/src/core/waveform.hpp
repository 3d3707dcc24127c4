#pragma once

#include <vector>

namespace hsflow {

// Periodic volumetric inflow waveform. Samples are (t seconds, Q mm^3/s),
// interpolated piecewise-linearly and wrapped at the period.
struct Waveform {
    double period = 0.8;
    std::vector<double> t;
    std::vector<double> q;

    // throws on empty samples, t outside [0, period), non-increasing t, Q <= 0
    void validate() const;

    // periodic piecewise-linear interpolation, any real time
    double flow_at(double time) const;

    // mean of Q over one period of the piecewise-linear interpolant
    double mean_flow() const;
};

struct WaveformParams {
    double period = 0.8;     // seconds
    double q_mean = 4000.0;  // mm^3/s
    double amp1 = 0.5;       // first harmonic, relative
    double amp2 = 0.2;       // second harmonic, relative
    double phase1 = 1.1;
    double phase2 = 2.2;
    int samples = 32;
};

// Two-harmonic pulsatile waveform sampled at `samples` points. Amplitudes
// must keep Q strictly positive.
Waveform make_waveform(const WaveformParams& p);

}  // namespace hsflow
