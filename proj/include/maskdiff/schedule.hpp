#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace maskdiff {

// Survival schedule alpha(t): probability that a token is still intact at
// time t. alpha(0) = 1, alpha(1) = 0, strictly decreasing on [0, 1].
//
// mask_fraction(t) must be the analytic form of 1 - alpha(t), not the
// floating-point subtraction: the general loss weight divides by it and has
// to reproduce 1/t exactly for the linear schedule.
enum class ScheduleKind { linear };

struct NoiseSchedule {
    ScheduleKind kind = ScheduleKind::linear;

    double alpha(double t) const {
        check_time(t);
        switch (kind) {
            case ScheduleKind::linear: return 1.0 - t;
        }
        throw std::logic_error("NoiseSchedule: unknown kind");
    }

    double alpha_prime(double t) const {
        check_time(t);
        switch (kind) {
            case ScheduleKind::linear: return -1.0;
        }
        throw std::logic_error("NoiseSchedule: unknown kind");
    }

    double mask_fraction(double t) const {
        check_time(t);
        switch (kind) {
            case ScheduleKind::linear: return t;
        }
        throw std::logic_error("NoiseSchedule: unknown kind");
    }

private:
    static void check_time(double t) {
        if (!(t >= 0.0 && t <= 1.0))
            throw std::domain_error("NoiseSchedule: time outside [0, 1]");
    }
};

// Survival ratio alpha(t)/alpha(s) of a forward jump s -> t, s <= t.
inline double fwd_ratio(const NoiseSchedule &sched, double s, double t) {
    if (!(s <= t))
        throw std::domain_error("fwd_ratio: requires s <= t");
    double as = sched.alpha(s);
    if (as == 0.0)
        throw std::domain_error("fwd_ratio: alpha(s) is zero");
    return sched.alpha(t) / as;
}

// Mask-mass ratio (1 - alpha(s))/(1 - alpha(t)) of a reverse jump t -> s, s < t.
inline double rev_ratio(const NoiseSchedule &sched, double s, double t) {
    if (!(s < t))
        throw std::domain_error("rev_ratio: requires s < t");
    double mt = sched.mask_fraction(t);
    if (mt == 0.0)
        throw std::domain_error("rev_ratio: mask_fraction(t) is zero");
    return sched.mask_fraction(s) / mt;
}

// Discretization of [1, 0] into K reverse steps. Step k runs from T[k-1]
// down to T[k] (0-based vector, K+1 points). Endpoints are pinned to 1 and
// exactly 0; interior points are strictly decreasing.
enum class TimelineKind { linear, arccos, square, cosine };

inline std::vector<double> timeline_points(int K, TimelineKind kind) {
    if (K < 1) throw std::invalid_argument("timeline_points: K must be >= 1");
    std::vector<double> pts(size_t(K) + 1);
    for (int k = 0; k <= K; ++k) {
        double u = double(k) / double(K);
        switch (kind) {
            case TimelineKind::linear: pts[k] = 1.0 - u; break;
            case TimelineKind::arccos: pts[k] = 2.0 / std::numbers::pi * std::acos(u); break;
            case TimelineKind::square: pts[k] = 1.0 - u * u; break;
            case TimelineKind::cosine: pts[k] = std::cos(std::numbers::pi * u / 2.0); break;
        }
    }
    pts.front() = 1.0;
    pts.back() = 0.0;
    for (int k = 0; k < K; ++k) {
        if (!(pts[k] > pts[k + 1]))
            throw std::domain_error("timeline_points: points must be strictly decreasing");
    }
    return pts;
}

}  // namespace maskdiff
