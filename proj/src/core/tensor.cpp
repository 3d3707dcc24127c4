#include "core/tensor.hpp"

#include <algorithm>

namespace hsflow {

FdReport finite_diff_check(const std::function<double()>& loss,
                           const std::function<void()>& backward,
                           const std::vector<ParamBlockRef>& params, double tolerance) {
    backward();  // analytic gradients at the current point

    FdReport report;
    report.tolerance = tolerance;
    for (const auto& block : params) {
        // scale floor: avoids blowing up the relative error on entries whose
        // true gradient is tiny compared to the rest of the block
        double block_scale = 0.0;
        for (size_t i = 0; i < block.size; ++i) {
            block_scale = std::max(block_scale, std::abs(block.grads[i]));
        }
        FdBlockReport br;
        br.name = block.name;
        for (size_t i = 0; i < block.size; ++i) {
            const double theta = block.values[i];
            const double h = 1e-5 * (1.0 + std::abs(theta));
            block.values[i] = theta + h;
            const double fp = loss();
            block.values[i] = theta - h;
            const double fm = loss();
            block.values[i] = theta;
            const double g_fd = (fp - fm) / (2.0 * h);
            const double g_an = block.grads[i];
            const double denom =
                std::max({std::abs(g_fd), std::abs(g_an), 1e-4 * block_scale, 1e-10});
            const double rel = std::abs(g_fd - g_an) / denom;
            if (rel > br.max_rel_err) {
                br.max_rel_err = rel;
                br.worst_index = i;
            }
        }
        report.worst = std::max(report.worst, br.max_rel_err);
        report.blocks.push_back(br);
    }
    return report;
}

}  // namespace hsflow
