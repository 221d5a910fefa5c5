#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace sparselab {

enum class ScheduleVariant { imagenet_style, cifar_style };

// Linear warmup followed by cosine decay, in two flavors:
//  - imagenet_style: peak = eta_base * batch_size / batch_scale_ref, warmup
//    starts at eta_init, decays to eta_end.
//  - cifar_style: peak = eta_base (no batch scaling), warmup starts at 0.
struct LrSchedule {
    ScheduleVariant variant = ScheduleVariant::cifar_style;
    double eta_base = 0.1;
    double eta_init = 1e-5;
    double eta_end = 1e-6;
    long long warmup_epochs = 5;
    long long total_epochs = 100;
    long long batch_scale_ref = 256;

    static LrSchedule imagenet(double eta_base = 0.1, long long warmup = 5, long long total = 90) {
        LrSchedule s;
        s.variant = ScheduleVariant::imagenet_style;
        s.eta_base = eta_base;
        s.eta_init = 1e-5;
        s.eta_end = 1e-5;
        s.warmup_epochs = warmup;
        s.total_epochs = total;
        return s;
    }

    static LrSchedule cifar(double eta_base = 0.1, long long warmup = 5, long long total = 100) {
        LrSchedule s;
        s.variant = ScheduleVariant::cifar_style;
        s.eta_base = eta_base;
        s.eta_init = 0.0;
        s.eta_end = 1e-6;
        s.warmup_epochs = warmup;
        s.total_epochs = total;
        return s;
    }

    void validate() const {
        if (warmup_epochs >= total_epochs)
            throw std::invalid_argument("LrSchedule: warmup_epochs must be < total_epochs");
        if (eta_base < 0.0 || eta_init < 0.0 || eta_end < 0.0)
            throw std::invalid_argument("LrSchedule: rates must be >= 0");
    }
};

// Learning rate at a fractional epoch position t in [0, total_epochs].
inline double lr_at(const LrSchedule& s, double epoch_fraction, std::size_t batch_size) {
    s.validate();
    if (epoch_fraction < 0.0 || epoch_fraction > static_cast<double>(s.total_epochs))
        throw std::invalid_argument("lr_at: epoch_fraction outside [0, total_epochs]");
    const double t = epoch_fraction;
    const double t_w = static_cast<double>(s.warmup_epochs);
    const double t_total = static_cast<double>(s.total_epochs);
    double peak = s.eta_base;
    double start = 0.0;
    if (s.variant == ScheduleVariant::imagenet_style) {
        peak = s.eta_base * static_cast<double>(batch_size) / static_cast<double>(s.batch_scale_ref);
        start = s.eta_init;
    }
    if (t < t_w) return start + (peak - start) * (t / t_w);
    const double progress = (t - t_w) / (t_total - t_w);
    return s.eta_end + 0.5 * (peak - s.eta_end) * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace sparselab
