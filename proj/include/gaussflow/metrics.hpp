#pragma once

// Flow evaluation metrics over validity-masked fields. Everything here works
// on plain doubles with no gradient tracking: metrics report quality, they
// are never optimized directly.

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>

#include "gaussflow/flow_net.hpp"
#include "gaussflow/tensor.hpp"

namespace gaussflow {

struct BinnedEpe {
    // Mean endpoint error over pixels whose ground-truth magnitude falls in
    // [0, 10), [10, 40), and [40, inf); a bin with no pixels stays empty.
    std::optional<double> s0_10, s10_40, s40plus;
};

// Streaming accumulator so metrics can be pooled over many samples with the
// same per-pixel definitions as the single-field helpers.
class MetricAccumulator {
public:
    void add(const FlowField& pred, const FlowField& gt, const Tensor& valid) {
        if (pred.u.shape() != gt.u.shape() || gt.u.shape() != valid.shape())
            throw ShapeError("metrics: pred " + shape_str(pred.u.shape()) + " gt " +
                             shape_str(gt.u.shape()) + " valid " + shape_str(valid.shape()));
        std::size_t n = valid.numel();
        for (std::size_t i = 0; i < n; ++i) {
            if (valid[i] < 0.5) continue;
            double du = pred.u[i] - gt.u[i];
            double dv = pred.v[i] - gt.v[i];
            double err = std::sqrt(du * du + dv * dv);
            double mag = std::sqrt(gt.u[i] * gt.u[i] + gt.v[i] * gt.v[i]);
            epe_sum_ += err;
            ++count_;
            if (err > 3.0 && err > 0.05 * mag) ++outlier_;
            int b = mag < 10.0 ? 0 : (mag < 40.0 ? 1 : 2);
            bin_sum_[b] += err;
            ++bin_count_[b];
        }
    }

    std::size_t pixels() const { return count_; }

    double epe() const {
        require_pixels();
        return epe_sum_ / static_cast<double>(count_);
    }

    double f1_percent() const {
        require_pixels();
        return 100.0 * static_cast<double>(outlier_) / static_cast<double>(count_);
    }

    BinnedEpe binned() const {
        require_pixels();
        BinnedEpe out;
        if (bin_count_[0] > 0) out.s0_10 = bin_sum_[0] / static_cast<double>(bin_count_[0]);
        if (bin_count_[1] > 0) out.s10_40 = bin_sum_[1] / static_cast<double>(bin_count_[1]);
        if (bin_count_[2] > 0) out.s40plus = bin_sum_[2] / static_cast<double>(bin_count_[2]);
        return out;
    }

private:
    void require_pixels() const {
        if (count_ == 0) throw ConfigError("metrics: no valid pixels accumulated");
    }

    double epe_sum_ = 0.0;
    std::size_t count_ = 0;
    std::size_t outlier_ = 0;
    double bin_sum_[3] = {0.0, 0.0, 0.0};
    std::size_t bin_count_[3] = {0, 0, 0};
};

// Mean endpoint error over valid pixels.
inline double epe(const FlowField& pred, const FlowField& gt, const Tensor& valid) {
    MetricAccumulator acc;
    acc.add(pred, gt, valid);
    return acc.epe();
}

// Percentage of valid pixels whose endpoint error exceeds both 3 px and 5% of
// the ground-truth magnitude.
inline double f1_all(const FlowField& pred, const FlowField& gt, const Tensor& valid) {
    MetricAccumulator acc;
    acc.add(pred, gt, valid);
    return acc.f1_percent();
}

inline BinnedEpe epe_binned(const FlowField& pred, const FlowField& gt, const Tensor& valid) {
    MetricAccumulator acc;
    acc.add(pred, gt, valid);
    return acc.binned();
}

}  // namespace gaussflow
