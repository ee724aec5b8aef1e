#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "evgrid/common.hpp"
#include "evgrid/grid.hpp"
#include "evgrid/traffic.hpp"

namespace evgrid {

/// Charging happens within an 8 h working day split into equal slots.
inline constexpr double kWorkdayHours = 8.0;

inline double slot_duration_hours(int number_of_slots) {
    detail::require(number_of_slots >= 1, "number_of_slots must be >= 1");
    return kWorkdayHours / number_of_slots;
}

struct SlotWeights {
    Eigen::VectorXd weights;

    int number_of_slots() const { return static_cast<int>(weights.size()); }

    static SlotWeights constant(int number_of_slots, double value = 1.0) {
        detail::require(number_of_slots >= 1, "number_of_slots must be >= 1");
        detail::require(value > 0, "slot weight must be positive");
        return {Eigen::VectorXd::Constant(number_of_slots, value)};
    }

    void validate() const {
        detail::require(weights.size() >= 1, "at least one slot required");
        detail::require(weights.allFinite() && (weights.array() > 0).all(),
                        "slot weights must be positive");
    }
};

/// Per-station, per-slot energies in MWh. Rows are stations, columns slots.
struct LoadSchedule {
    Eigen::MatrixXd nonflexible;
    Eigen::MatrixXd flexible;
    bool used_projection_fallback = false;
    int repair_iterations = 0;

    Eigen::MatrixXd total() const { return nonflexible + flexible; }

    void validate() const {
        detail::require(nonflexible.rows() == flexible.rows() &&
                            nonflexible.cols() == flexible.cols(),
                        "schedule matrices must have matching shapes");
        detail::require(nonflexible.rows() >= 1 && nonflexible.cols() >= 1,
                        "schedule must have at least one station and one slot");
        detail::require(nonflexible.allFinite() && (nonflexible.array() >= 0).all(),
                        "nonflexible consumption must be non-negative");
        detail::require(flexible.allFinite() && (flexible.array() >= -1e-9).all(),
                        "flexible charging must be non-negative (within 1e-9)");
    }

    /// Additionally checks that each station's flexible energy meets its need.
    void validate(const ChargingNeeds& needs) const {
        validate();
        detail::require(flexible.rows() == needs.per_evcs_mwh.size(),
                        "schedule rows must match the station count");
        for (Eigen::Index i = 0; i < flexible.rows(); ++i)
            detail::require(std::abs(flexible.row(i).sum() - needs.per_evcs_mwh[i]) <= 1e-9,
                            "station flexible energy must equal its charging need");
    }
};

struct CostReport {
    std::map<std::string, double> cost_by_method;
    std::map<std::string, double> normalized;
    std::string reference_method;
    double reference_toll = 0.0;
};

/// epsilon = (G_m - G_a) / G_a.
inline double normalized_cost(double cost, double reference) {
    detail::require(std::isfinite(reference) && reference > 0,
                    "normalized_cost reference must be positive");
    detail::require(std::isfinite(cost), "normalized_cost input must be finite");
    return (cost - reference) / reference;
}

/// Minimizes sum_t eta_t (l0_t + l_t)^2 over l >= 0 with sum_t l_t = need.
/// Slots sorted by eta_t * l0_t ascending admit a water level: every slot below
/// it is filled up to level / eta_t, slots above it stay untouched.
inline Eigen::VectorXd waterfill(const Eigen::VectorXd& nonflexible, double need,
                                 const SlotWeights& weights) {
    weights.validate();
    const int slots = weights.number_of_slots();
    detail::require(nonflexible.size() == slots, "nonflexible size must match the slot count");
    detail::require(nonflexible.allFinite() && (nonflexible.array() >= 0).all(),
                    "nonflexible consumption must be non-negative");
    detail::require(std::isfinite(need) && need >= 0, "charging need must be non-negative");

    std::vector<int> order(slots);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return weights.weights[a] * nonflexible[a] < weights.weights[b] * nonflexible[b];
    });

    int active = slots;
    double level = 0.0;
    while (true) {
        double base = 0.0;
        double inv = 0.0;
        for (int a = 0; a < active; ++a) {
            base += nonflexible[order[a]];
            inv += 1.0 / weights.weights[order[a]];
        }
        level = (need + base) / inv;
        if (active == 1) break;
        const int last = order[active - 1];
        if (level / weights.weights[last] - nonflexible[last] >= 0) break;
        --active;
    }

    Eigen::VectorXd out = Eigen::VectorXd::Zero(slots);
    for (int a = 0; a < active; ++a) {
        const int t = order[a];
        out[t] = std::max(level / weights.weights[t] - nonflexible[t], 0.0);
    }
    return out;
}

/// Each station schedules its own need against its own nonflexible profile.
inline LoadSchedule schedule_local(const Eigen::MatrixXd& nonflexible, const ChargingNeeds& needs,
                                   const SlotWeights& weights) {
    weights.validate();
    const Eigen::Index stations = nonflexible.rows();
    detail::require(stations >= 1, "at least one station required");
    detail::require(nonflexible.cols() == weights.number_of_slots(),
                    "nonflexible columns must match the slot count");
    detail::require(needs.per_evcs_mwh.size() == stations,
                    "one charging need per station expected");
    LoadSchedule schedule;
    schedule.nonflexible = nonflexible;
    schedule.flexible.resize(stations, nonflexible.cols());
    for (Eigen::Index i = 0; i < stations; ++i) {
        try {
            schedule.flexible.row(i) =
                waterfill(nonflexible.row(i).transpose(), needs.per_evcs_mwh[i], weights);
        } catch (const ValidationError& e) {
            throw ValidationError("evcs " + std::to_string(i) + ": " + e.what());
        }
    }
    return schedule;
}

/// Schedules the pooled need against the pooled profile, then splits the
/// aggregate back onto stations while keeping each station's total: start from
/// the local schedules, spread each slot's aggregate gap equally, then trade
/// away negative entries pairwise until none remain. If that loop does not
/// terminate within the cap (negative = default of 5000 iterations per matrix
/// entry), fall
/// back to an exact least-change projection onto the feasible set and flag it.
inline LoadSchedule schedule_global(const Eigen::MatrixXd& nonflexible, const ChargingNeeds& needs,
                                    const SlotWeights& weights, long repair_cap = -1) {
    LoadSchedule schedule = schedule_local(nonflexible, needs, weights);
    const int stations = static_cast<int>(nonflexible.rows());
    const int slots = static_cast<int>(nonflexible.cols());
    if (stations == 1) return schedule;

    const Eigen::VectorXd aggregate_target =
        waterfill(nonflexible.colwise().sum().transpose(), needs.per_evcs_mwh.sum(), weights);

    Eigen::MatrixXd x = schedule.flexible;
    for (int t = 0; t < slots; ++t) {
        const double gap = aggregate_target[t] - x.col(t).sum();
        x.col(t).array() += gap / stations;
    }

    const Eigen::MatrixXd spread = x;
    const long cap = repair_cap >= 0 ? repair_cap : 5000L * stations * slots;
    long iter = 0;
    for (; iter < cap; ++iter) {
        Eigen::Index wi = 0, wt = 0;
        const double v = x.minCoeff(&wi, &wt);
        if (v >= -1e-12) break;
        if (slots > 1) {
            const double a = v / ((slots - 1) * (stations - 1));
            x.array() -= a;
            x.col(wt).array() += v / (stations - 1) + a;
            x.row(wi).array() += v / (slots - 1) + a;
        } else {
            x.col(wt).array() += v / (stations - 1);
        }
        x(wi, wt) = 0.0;
    }
    schedule.repair_iterations = static_cast<int>(iter);

    if ((x.array() < -1e-12).any()) {
        // Least-squares projection of the spread matrix onto {x >= 0, row sums
        // = needs, column sums = aggregate target} by active-set elimination:
        // free entries take the form spread + alpha_i + beta_t.
        schedule.used_projection_fallback = true;
        Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> zeroed(stations, slots);
        zeroed.setConstant(false);
        const long fallback_cap = 10L * stations * slots + 20;
        for (long pass = 0;; ++pass) {
            if (pass > fallback_cap)
                throw ConvergenceError("schedule_global projection did not settle",
                                       x.array().min(0.0).abs().maxCoeff());
            const int dim = stations + slots;
            Eigen::MatrixXd A = Eigen::MatrixXd::Zero(dim, dim);
            Eigen::VectorXd rhs = Eigen::VectorXd::Zero(dim);
            for (int i = 0; i < stations; ++i) {
                rhs[i] = needs.per_evcs_mwh[i];
                for (int t = 0; t < slots; ++t) {
                    if (zeroed(i, t)) continue;
                    A(i, i) += 1.0;
                    A(i, stations + t) += 1.0;
                    rhs[i] -= spread(i, t);
                }
            }
            for (int t = 0; t < slots; ++t) {
                rhs[stations + t] = aggregate_target[t];
                for (int i = 0; i < stations; ++i) {
                    if (zeroed(i, t)) continue;
                    A(stations + t, i) += 1.0;
                    A(stations + t, stations + t) += 1.0;
                    rhs[stations + t] -= spread(i, t);
                }
            }
            const Eigen::VectorXd ab = A.colPivHouseholderQr().solve(rhs);
            for (int i = 0; i < stations; ++i)
                for (int t = 0; t < slots; ++t)
                    x(i, t) = zeroed(i, t) ? 0.0 : spread(i, t) + ab[i] + ab[stations + t];

            int wi = -1, wt = -1;
            double worst = -1e-12;
            for (int i = 0; i < stations; ++i)
                for (int t = 0; t < slots; ++t)
                    if (!zeroed(i, t) && x(i, t) < worst) {
                        worst = x(i, t);
                        wi = i;
                        wt = t;
                    }
            if (wi >= 0) {
                zeroed(wi, wt) = true;
                continue;
            }
            int ri = -1, rt = -1;
            double release = 1e-12;
            for (int i = 0; i < stations; ++i)
                for (int t = 0; t < slots; ++t)
                    if (zeroed(i, t)) {
                        const double value = spread(i, t) + ab[i] + ab[stations + t];
                        if (value > release) {
                            release = value;
                            ri = i;
                            rt = t;
                        }
                    }
            if (ri >= 0) {
                zeroed(ri, rt) = false;
                continue;
            }
            break;
        }
    }

    schedule.flexible = x;
    return schedule;
}

namespace detail {

/// Head apparent power for one slot's station energies (no validation; used in
/// tight optimizer loops). Throws when the network equations do not converge.
inline double slot_head_mva(const PowerFlowContext& ctx, const Eigen::VectorXd& slot_mwh,
                            int number_of_slots) {
    const Eigen::VectorXd mw = slot_mwh / slot_duration_hours(number_of_slots);
    const PowerFlowSolution sol = solve_with_context(ctx, mw, 1e-8, 50);
    if (!sol.converged)
        throw ConvergenceError("power flow did not converge", sol.max_residual_pu);
    return sol.head_apparent_power_mva;
}

inline double cost_of_totals(const PowerFlowContext& ctx, const Eigen::MatrixXd& total_mwh,
                             const SlotWeights& weights) {
    const int slots = weights.number_of_slots();
    double cost = 0.0;
    for (int t = 0; t < slots; ++t) {
        double s = 0.0;
        try {
            s = slot_head_mva(ctx, total_mwh.col(t), slots);
        } catch (const ConvergenceError& e) {
            throw ConvergenceError(std::string(e.what()) + " in slot " + std::to_string(t),
                                   e.residual());
        }
        cost += weights.weights[t] * s * s;
    }
    return cost;
}

}  // namespace detail

/// G = sum_t eta_t S_t^2 with S_t the head apparent power when every station
/// draws its slot-t total energy over the slot duration. Units: MVA^2 per slot,
/// summed over slots.
inline double grid_cost(const GridModel& grid, const LoadSchedule& schedule,
                        const SlotWeights& weights) {
    weights.validate();
    schedule.validate();
    const auto ctx = detail::make_power_flow_context(grid);
    detail::require(schedule.nonflexible.rows() == static_cast<Eigen::Index>(ctx.stations.size()),
                    "schedule rows must match the grid's station count");
    detail::require(schedule.nonflexible.cols() == weights.number_of_slots(),
                    "schedule columns must match the slot count");
    return detail::cost_of_totals(ctx, schedule.total(), weights);
}

struct GridAwareResult {
    LoadSchedule schedule;
    double cost = 0.0;
    bool converged = false;
    int iterations = 0;
};

namespace detail {

/// Euclidean projection onto {x >= 0, sum x = total}.
inline Eigen::VectorXd project_scaled_simplex(const Eigen::VectorXd& y, double total) {
    const int n = static_cast<int>(y.size());
    if (total <= 0.0) return Eigen::VectorXd::Zero(n);
    std::vector<double> u(y.data(), y.data() + n);
    std::sort(u.begin(), u.end(), std::greater<double>());
    double cumulative = 0.0;
    double tau = (u[0] - total);
    for (int k = 1; k <= n; ++k) {
        cumulative += u[k - 1];
        const double candidate = (cumulative - total) / k;
        if (u[k - 1] - candidate > 0) tau = candidate;
    }
    return (y.array() - tau).max(0.0);
}

struct DescentRun {
    Eigen::MatrixXd flexible;
    double cost = 0.0;
    bool converged = false;
    int iterations = 0;
};

/// Projected gradient descent on G with Barzilai-Borwein steps and an Armijo
/// backtracking search along the projection arc. Gradients come from central
/// finite differences of the per-slot head power (step 1e-4 MWh); each entry
/// only perturbs its own slot, so a full gradient costs 2 * stations * slots
/// power-flow solves.
inline DescentRun descend_grid_cost(const PowerFlowContext& ctx,
                                    const Eigen::MatrixXd& nonflexible,
                                    const Eigen::VectorXd& needs_mwh, const SlotWeights& weights,
                                    Eigen::MatrixXd x, double relative_tolerance,
                                    int max_iterations) {
    const int stations = static_cast<int>(nonflexible.rows());
    const int slots = static_cast<int>(nonflexible.cols());
    const double fd_step = 1e-4;

    auto project = [&](Eigen::MatrixXd m) {
        for (int i = 0; i < stations; ++i)
            m.row(i) = project_scaled_simplex(m.row(i).transpose(), needs_mwh[i]).transpose();
        return m;
    };
    auto evaluate = [&](const Eigen::MatrixXd& flexible) {
        return cost_of_totals(ctx, nonflexible + flexible, weights);
    };
    auto gradient = [&](const Eigen::MatrixXd& flexible) {
        Eigen::MatrixXd g(stations, slots);
        for (int t = 0; t < slots; ++t) {
            Eigen::VectorXd column = (nonflexible + flexible).col(t);
            for (int i = 0; i < stations; ++i) {
                const double base = column[i];
                column[i] = base + fd_step;
                const double up = slot_head_mva(ctx, column, slots);
                column[i] = base - fd_step;
                const double down = slot_head_mva(ctx, column, slots);
                column[i] = base;
                g(i, t) = weights.weights[t] * (up * up - down * down) / (2.0 * fd_step);
            }
        }
        return g;
    };

    DescentRun run;
    x = project(std::move(x));
    double f = evaluate(x);
    Eigen::MatrixXd g = gradient(x);
    run.flexible = x;
    run.cost = f;
    double alpha = 1.0 / std::max(g.cwiseAbs().maxCoeff(), 1e-10);
    alpha = std::clamp(alpha, 1e-10, 1e10);

    for (int iter = 1; iter <= max_iterations; ++iter) {
        const Eigen::MatrixXd candidate = project(x - alpha * g);
        const Eigen::MatrixXd direction = candidate - x;
        const double slope = (g.array() * direction.array()).sum();
        if (slope >= -1e-15) {
            run.converged = true;
            break;
        }
        double lambda = 1.0;
        double f_new = std::numeric_limits<double>::infinity();
        while (lambda > 1e-12) {
            f_new = evaluate(x + lambda * direction);
            if (f_new <= f + 1e-4 * lambda * slope) break;
            lambda *= 0.5;
        }
        if (!(f_new < f)) {
            run.converged = true;
            break;
        }
        const Eigen::MatrixXd x_new = x + lambda * direction;
        const Eigen::MatrixXd g_new = gradient(x_new);
        const double ss = (lambda * direction.array() * (lambda * direction.array())).sum();
        const double sy = (lambda * direction.array() * (g_new - g).array()).sum();
        alpha = sy > 1e-16 ? std::clamp(ss / sy, 1e-10, 1e10) : 1e10;
        const double improvement = (f - f_new) / std::max(f, 1e-300);
        x = x_new;
        g = g_new;
        f = f_new;
        run.iterations = iter;
        if (f < run.cost) {
            run.cost = f;
            run.flexible = x;
        }
        if (improvement < relative_tolerance) {
            run.converged = true;
            break;
        }
    }
    return run;
}

}  // namespace detail

/// Minimizes G over all feasible schedules, starting from the pooled schedule
/// (and from the per-station one if that happens to be cheaper). Convergence
/// means the relative cost improvement dropped below the tolerance; the result
/// always carries the best feasible iterate.
inline GridAwareResult schedule_grid_aware(const GridModel& grid,
                                           const Eigen::MatrixXd& nonflexible,
                                           const ChargingNeeds& needs, const SlotWeights& weights,
                                           double relative_tolerance = 1e-8,
                                           int max_iterations = 2000) {
    detail::require(relative_tolerance > 0, "relative_tolerance must be positive");
    detail::require(max_iterations >= 1, "max_iterations must be >= 1");
    const LoadSchedule global = schedule_global(nonflexible, needs, weights);
    const LoadSchedule local = schedule_local(nonflexible, needs, weights);
    const auto ctx = detail::make_power_flow_context(grid);
    detail::require(nonflexible.rows() == static_cast<Eigen::Index>(ctx.stations.size()),
                    "nonflexible rows must match the grid's station count");

    GridAwareResult result;
    try {
        detail::DescentRun run =
            detail::descend_grid_cost(ctx, nonflexible, needs.per_evcs_mwh, weights,
                                      global.flexible, relative_tolerance, max_iterations);
        const double local_cost = detail::cost_of_totals(ctx, local.total(), weights);
        if (local_cost < run.cost) {
            const detail::DescentRun from_local =
                detail::descend_grid_cost(ctx, nonflexible, needs.per_evcs_mwh, weights,
                                          local.flexible, relative_tolerance, max_iterations);
            if (from_local.cost < run.cost) run = from_local;
        }
        result.schedule.nonflexible = nonflexible;
        result.schedule.flexible = run.flexible;
        result.cost = run.cost;
        result.converged = run.converged;
        result.iterations = run.iterations;
    } catch (const ConvergenceError&) {
        result.schedule = global;
        result.cost = detail::cost_of_totals(ctx, global.total(), weights);
        result.converged = false;
    }
    return result;
}

}  // namespace evgrid
