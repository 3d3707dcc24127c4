#pragma once

#include <array>
#include <string>
#include <vector>

#include "core/mesh.hpp"

namespace hsflow {

// ------------------------------------------------------------- rheology

// Modified Casson model. tau0 and mu0 derive from the hematocrit:
//   tau0 = (0.888 Hct - 23.753) mPa,  mu0 = (0.073 Hct + 0.599) mPa s.
struct CassonParams {
    double hematocrit = 40.0;  // percent
    double m = 100.0;          // regularization constant

    double tau0() const { return (0.888 * hematocrit - 23.753) * 1e-3; }  // Pa
    double mu0() const { return (0.073 * hematocrit + 0.599) * 1e-3; }    // Pa s
    void validate() const;  // tau0 must be positive (Hct > 26.75)
};

// mu(gamma_dot) = (sqrt(tau0/g (1 - exp(-m g))) + sqrt(mu0))^2, Pa s.
// gamma_dot = 0 evaluates the regularized limit (sqrt(tau0 m) + sqrt(mu0))^2.
double casson_viscosity(double gamma_dot, const CassonParams& params);

// ------------------------------------------------------- velocity gradients

// Constant per-tet velocity gradient du_c/dx_k of the linear interpolant,
// stored row-major as 9 values per tet (1/s for mm and mm/s inputs).
std::vector<double> velocity_gradient(const Mesh& mesh, const std::vector<double>& velocity);

// --------------------------------------------------------------------- WSS

// Viscous tangential traction per wall node, Pa. Strain rates are volume
// weighted over the tets incident to each wall node; the pressure part of the
// stress drops out of the tangential projection.
struct WallSample {
    std::vector<uint64_t> wall_nodes;
    std::vector<double> traction;  // 3 per wall node
};

WallSample wss_vector(const Mesh& mesh, const std::vector<double>& velocity,
                      const CassonParams& params);

// Per-wall-node WSS time series plus derived indicators.
struct WallField {
    std::vector<uint64_t> wall_nodes;
    uint64_t steps = 0;
    double dt = 0.01;
    std::vector<double> traction;  // steps x |wall| x 3, Pa
    std::vector<double> tawss;     // |wall|, Pa
    std::vector<double> osi;       // |wall|, dimensionless

    const double* sample(size_t step, size_t node) const {
        return &traction[(step * wall_nodes.size() + node) * 3];
    }
};

WallField compute_wall_field(const Mesh& mesh, const Trajectory& traj,
                             const CassonParams& params);

// Trapezoidal time average of |tau| over the cycle; a single sample returns
// its own magnitude.
double tawss(const std::vector<std::array<double, 3>>& series, double dt);

// 0.5 (1 - |int tau dt| / int |tau| dt); zero-shear series report 0.
double osi(const std::vector<std::array<double, 3>>& series, double dt);

// ------------------------------------------------------------ risk scoring

struct RiskInputs {
    double tawss_mean = 0.0;         // Pa, over the scored wall region
    double peak_wss = 0.0;           // Pa
    double osi_max = 0.0;            // dimensionless
    double systolic_velocity = 0.0;  // mm/s (or normalized, per flag upstream)
};

struct RiskOptions {
    // main-text variant scores TAWSS >= 6.7 as 2 instead of 1
    bool tawss_main_text_rule = false;
};

// Four {0,1,2} sub-scores in order: TAWSS, peak WSS, OSI, systolic velocity.
std::array<int, 4> risk_subscores(const RiskInputs& inputs, const RiskOptions& opts = {});

enum class RiskBand { low, moderate, high };

struct RiskReport {
    std::array<int, 4> subscores{};
    double average = 0.0;
    RiskBand band = RiskBand::low;
    RiskInputs inputs;
};

// Average of the four sub-scores banded Low (<1), Moderate ([1,2)), High (>=2).
RiskReport aggregate_risk(const std::array<int, 4>& subscores);

const char* risk_band_name(RiskBand band);

// Spatial aggregation of wall indicators into risk inputs. Peaks use the 99th
// percentile over the scored nodes by default; raw max by flag.
struct HemoMetricsOptions {
    bool raw_peaks = false;
    // restrict scoring to these nodes (e.g. the sac wall); empty = all wall
    std::vector<uint64_t> region;
};

RiskInputs hemo_metrics(const Mesh& mesh, const Trajectory& traj, const WallField& field,
                        const std::vector<uint64_t>& bulge_nodes,
                        const HemoMetricsOptions& opts = {});

}  // namespace hsflow
