#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <numbers>
#include <numeric>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "evgrid/common.hpp"
#include "evgrid/grid.hpp"
#include "evgrid/scheduling.hpp"
#include "evgrid/traffic.hpp"

namespace evgrid {

namespace detail {

/// Runs fn(0..count-1) on a small worker pool. Work items must be independent;
/// callers keep determinism by writing to index-addressed slots. The first
/// exception thrown by any item is rethrown after all workers finish.
inline void parallel_for(int count, const std::function<void(int)>& fn) {
    if (count <= 0) return;
    unsigned hw = std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    const int workers = static_cast<int>(std::min<unsigned>(hw, static_cast<unsigned>(count)));
    if (workers <= 1) {
        for (int i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&]() {
        while (true) {
            const int i = next.fetch_add(1);
            if (i >= count || failed.load()) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
                failed.store(true);
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

inline double uniform_unit(std::mt19937_64& engine) {
    return static_cast<double>(engine() >> 11) * 0x1.0p-53;
}

/// Left-to-right accumulation in storage order. Unlike Eigen's sum(), the
/// order is pinned, so "sums to the target exactly" is a testable statement.
inline double sequential_sum(const Eigen::MatrixXd& m) {
    return std::accumulate(m.data(), m.data() + m.size(), 0.0);
}

/// Rewrites the last entry so the sequential sum hits the target exactly. The
/// entries are all small against the target, so the closing subtraction is
/// exact (Sterbenz) and the result survives re-accumulation bit for bit.
inline void pin_total(Eigen::MatrixXd& m, double target) {
    require(m.size() >= 1, "pin_total needs at least one entry");
    double& last = m.data()[m.size() - 1];
    last = target - std::accumulate(m.data(), m.data() + m.size() - 1, 0.0);
    require(last >= 0.0, "pin_total correction went negative");
    require(sequential_sum(m) == target, "pin_total missed the target");
}

}  // namespace detail

/// Random nonflexible station-by-slot profiles: entries uniform on (0,1),
/// scaled so each profile sums to the requested energy. Deterministic for a
/// given seed.
inline std::vector<Eigen::MatrixXd> generate_profiles(std::uint64_t seed, int count,
                                                      double total_energy_mwh, int evcs_count,
                                                      int slots = 8) {
    detail::require(count >= 1, "profile count must be >= 1");
    detail::require(total_energy_mwh > 0, "total_energy_mwh must be positive");
    detail::require(evcs_count >= 1 && slots >= 1, "profile shape must be at least 1x1");
    std::mt19937_64 engine(seed);
    std::vector<Eigen::MatrixXd> out;
    out.reserve(count);
    for (int p = 0; p < count; ++p) {
        Eigen::MatrixXd m(evcs_count, slots);
        double sum = 0.0;
        do {
            for (int i = 0; i < evcs_count; ++i)
                for (int t = 0; t < slots; ++t) m(i, t) = detail::uniform_unit(engine);
            sum = m.sum();
        } while (sum <= 0.0);
        m *= total_energy_mwh / sum;
        detail::pin_total(m, total_energy_mwh);
        out.push_back(std::move(m));
    }
    return out;
}

/// Coarsens a profile to fewer slots by summing runs of adjacent columns.
inline Eigen::MatrixXd merge_adjacent_slots(const Eigen::MatrixXd& profile, int target_slots) {
    detail::require(target_slots >= 1, "target_slots must be >= 1");
    detail::require(profile.cols() % target_slots == 0,
                    "slot count must be a multiple of target_slots");
    const Eigen::Index group = profile.cols() / target_slots;
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(profile.rows(), target_slots);
    for (Eigen::Index k = 0; k < target_slots; ++k)
        for (Eigen::Index j = 0; j < group; ++j) out.col(k) += profile.col(k * group + j);
    return out;
}

/// A smooth, slightly wavy workday profile: station i follows
/// 1 + 0.15 sin(2 pi (h + 1.7 i) / 8) over the 8 h day, integrated per slot
/// and scaled to the requested total. Near-flat in aggregate but distinct per
/// station.
inline Eigen::MatrixXd default_nonflexible_profile(int evcs_count, int slots,
                                                   double total_energy_mwh) {
    detail::require(evcs_count >= 1 && slots >= 1, "profile shape must be at least 1x1");
    detail::require(total_energy_mwh > 0, "total_energy_mwh must be positive");
    Eigen::MatrixXd m(evcs_count, slots);
    const double w = 2.0 * std::numbers::pi / kWorkdayHours;
    const double dt = kWorkdayHours / slots;
    for (int i = 0; i < evcs_count; ++i) {
        const double phase = 1.7 * i;
        for (int t = 0; t < slots; ++t) {
            const double a = t * dt;
            const double b = a + dt;
            m(i, t) = dt + 0.15 / w * (std::cos(w * (a + phase)) - std::cos(w * (b + phase)));
        }
    }
    m *= total_energy_mwh / m.sum();
    detail::pin_total(m, total_energy_mwh);
    return m;
}

inline const std::vector<std::string>& method_names() {
    static const std::vector<std::string> names = {"local", "global", "grid_aware"};
    return names;
}

struct TollSweepPoint {
    double toll = 0.0;
    bool ok = false;
    EquilibriumResult equilibrium;
    Eigen::MatrixXd vehicle_counts;  // class x path
    ChargingNeeds needs;
    std::map<std::string, LoadSchedule> schedules;
    CostReport costs;
    bool grid_aware_converged = false;
};

struct TollSweepResult {
    std::vector<TollSweepPoint> points;
    double reference_cost = 0.0;  // grid-aware cost with the toll at zero
    std::vector<std::string> errors;
};

namespace detail {

inline TransportScenario with_last_path_toll(TransportScenario scenario, double toll) {
    auto& tolls = scenario.paths.back().toll_per_class;
    for (const auto& cls : scenario.classes) tolls[cls.id] = toll;
    return scenario;
}

inline Eigen::MatrixXd vehicle_counts_of(const TransportScenario& scenario,
                                         const FlowAssignment& assignment) {
    Eigen::MatrixXd counts = assignment.proportions;
    for (Eigen::Index s = 0; s < counts.rows(); ++s)
        counts.row(s) *= scenario.classes[s].population_share * scenario.total_vehicles;
    return counts;
}

inline TollSweepPoint evaluate_toll_point(const TransportScenario& base, const GridModel& grid,
                                          const Eigen::MatrixXd& nonflexible,
                                          const SlotWeights& weights, double toll) {
    TollSweepPoint point;
    point.toll = toll;
    const TransportScenario scenario = with_last_path_toll(base, toll);
    point.equilibrium = solve_wardrop(scenario);
    if (!point.equilibrium.converged)
        throw ConvergenceError("equilibrium gap above tolerance",
                               point.equilibrium.equilibrium_gap);
    point.vehicle_counts = vehicle_counts_of(scenario, point.equilibrium.assignment);
    point.needs = charging_needs(point.equilibrium, scenario);

    point.schedules["local"] = schedule_local(nonflexible, point.needs, weights);
    point.schedules["global"] = schedule_global(nonflexible, point.needs, weights);
    GridAwareResult aware = schedule_grid_aware(grid, nonflexible, point.needs, weights);
    point.grid_aware_converged = aware.converged;
    point.schedules["grid_aware"] = aware.schedule;

    point.costs.reference_method = "grid_aware";
    point.costs.reference_toll = 0.0;
    point.costs.cost_by_method["local"] = grid_cost(grid, point.schedules["local"], weights);
    point.costs.cost_by_method["global"] = grid_cost(grid, point.schedules["global"], weights);
    point.costs.cost_by_method["grid_aware"] = aware.cost;
    point.ok = true;
    return point;
}

}  // namespace detail

/// Sweeps the toll on the last path: per toll value, solve the commuting
/// equilibrium, derive charging needs, run all three schedulers and price the
/// result. Costs are normalized against the grid-aware cost at zero toll.
/// Failures are recorded per toll; the sweep continues.
inline TollSweepResult toll_sweep(const TransportScenario& scenario, const GridModel& grid,
                                  const Eigen::MatrixXd& nonflexible,
                                  const std::vector<double>& toll_values) {
    scenario.validate();
    detail::require(!toll_values.empty(), "toll_values must be non-empty");
    for (std::size_t k = 0; k + 1 < toll_values.size(); ++k)
        detail::require(toll_values[k] < toll_values[k + 1],
                        "toll_values must be strictly increasing");
    detail::require(toll_values.front() >= 0, "toll_values must be non-negative");
    const SlotWeights weights = SlotWeights::constant(static_cast<int>(nonflexible.cols()));
    const auto stations = grid.evcs_buses();
    detail::require(static_cast<int>(stations.size()) == scenario.path_count(),
                    "one charging station per path expected");
    detail::require(nonflexible.rows() == static_cast<Eigen::Index>(stations.size()),
                    "nonflexible rows must match the station count");

    TollSweepResult result;
    const int count = static_cast<int>(toll_values.size());
    result.points.resize(count);
    std::vector<std::string> errors(count);
    detail::parallel_for(count, [&](int k) {
        try {
            result.points[k] =
                detail::evaluate_toll_point(scenario, grid, nonflexible, weights, toll_values[k]);
        } catch (const std::exception& e) {
            result.points[k].toll = toll_values[k];
            result.points[k].ok = false;
            errors[k] = "toll " + detail::format_double(toll_values[k]) + ": " + e.what();
        }
    });
    for (const auto& e : errors)
        if (!e.empty()) result.errors.push_back(e);

    if (toll_values.front() == 0.0 && result.points.front().ok) {
        result.reference_cost = result.points.front().costs.cost_by_method.at("grid_aware");
    } else {
        const TollSweepPoint reference =
            detail::evaluate_toll_point(scenario, grid, nonflexible, weights, 0.0);
        result.reference_cost = reference.costs.cost_by_method.at("grid_aware");
    }
    for (auto& point : result.points) {
        if (!point.ok) continue;
        for (const auto& name : method_names())
            point.costs.normalized[name] =
                normalized_cost(point.costs.cost_by_method.at(name), result.reference_cost);
    }
    return result;
}

struct BenchmarkRow {
    int slots = 0;
    double mean_eps_local = 0.0;
    double mean_eps_global = 0.0;
    double mean_seconds_local = 0.0;
    double mean_seconds_global = 0.0;
    double mean_seconds_grid_aware = 0.0;
    int sample_count = 0;
    int failed_count = 0;
};

struct BenchmarkResult {
    std::vector<BenchmarkRow> rows;
    std::uint64_t seed = 0;
};

namespace detail {

/// Median wall-clock seconds over three runs of fn.
template <class Fn>
double median_seconds(Fn&& fn) {
    double times[3];
    for (double& t : times) {
        const auto start = std::chrono::steady_clock::now();
        fn();
        const auto stop = std::chrono::steady_clock::now();
        t = std::chrono::duration<double>(stop - start).count();
    }
    std::sort(std::begin(times), std::end(times));
    return times[1];
}

}  // namespace detail

/// Times and prices the three schedulers over a set of nonflexible profiles
/// for each requested slot count (profiles are coarsened by merging adjacent
/// slots). Costs are normalized per profile against that profile's grid-aware
/// cost. Profiles that fail any method are excluded from the means.
inline BenchmarkResult benchmark_methods(const std::vector<Eigen::MatrixXd>& profiles,
                                         const ChargingNeeds& needs, const GridModel& grid,
                                         const std::vector<int>& slot_counts = {2, 4, 8}) {
    detail::require(!profiles.empty(), "at least one profile required");
    detail::require(!slot_counts.empty(), "at least one slot count required");
    const auto stations = grid.evcs_buses();
    for (const auto& p : profiles)
        detail::require(p.rows() == static_cast<Eigen::Index>(stations.size()),
                        "profile rows must match the station count");
    detail::require(needs.per_evcs_mwh.size() == static_cast<Eigen::Index>(stations.size()),
                    "one charging need per station expected");

    BenchmarkResult result;
    for (const int slots : slot_counts) {
        const SlotWeights weights = SlotWeights::constant(slots);
        const int count = static_cast<int>(profiles.size());
        std::vector<double> eps_local(count), eps_global(count);
        std::vector<double> t_local(count), t_global(count), t_aware(count);
        std::vector<char> ok(count, 0);
        detail::parallel_for(count, [&](int p) {
            try {
                const Eigen::MatrixXd profile = merge_adjacent_slots(profiles[p], slots);
                LoadSchedule local, global;
                GridAwareResult aware;
                t_local[p] =
                    detail::median_seconds([&] { local = schedule_local(profile, needs, weights); });
                t_global[p] = detail::median_seconds(
                    [&] { global = schedule_global(profile, needs, weights); });
                t_aware[p] = detail::median_seconds(
                    [&] { aware = schedule_grid_aware(grid, profile, needs, weights); });
                const double reference = aware.cost;
                eps_local[p] = normalized_cost(grid_cost(grid, local, weights), reference);
                eps_global[p] = normalized_cost(grid_cost(grid, global, weights), reference);
                ok[p] = 1;
            } catch (const std::exception&) {
                ok[p] = 0;
            }
        });

        BenchmarkRow row;
        row.slots = slots;
        for (int p = 0; p < count; ++p) {
            if (!ok[p]) {
                ++row.failed_count;
                continue;
            }
            ++row.sample_count;
            row.mean_eps_local += eps_local[p];
            row.mean_eps_global += eps_global[p];
            row.mean_seconds_local += t_local[p];
            row.mean_seconds_global += t_global[p];
            row.mean_seconds_grid_aware += t_aware[p];
        }
        detail::require(row.sample_count >= 1, "all benchmark profiles failed");
        row.mean_eps_local /= row.sample_count;
        row.mean_eps_global /= row.sample_count;
        row.mean_seconds_local /= row.sample_count;
        row.mean_seconds_global /= row.sample_count;
        row.mean_seconds_grid_aware /= row.sample_count;
        detail::require(std::isfinite(row.mean_eps_local) && std::isfinite(row.mean_eps_global),
                        "benchmark means must be finite");
        result.rows.push_back(row);
    }
    return result;
}

struct ProfileIllustration {
    double toll = 0.0;
    ChargingNeeds needs;
    std::map<std::string, LoadSchedule> schedules;
    CostReport costs;
    bool grid_aware_converged = false;
};

/// One scheduling example at a fixed toll: equilibrium, needs and all three
/// schedules on the given profile, for plotting per-station and aggregated
/// load shapes.
inline ProfileIllustration profile_illustration(const TransportScenario& scenario,
                                                const GridModel& grid,
                                                const Eigen::MatrixXd& nonflexible,
                                                double toll = 4.0) {
    scenario.validate();
    detail::require(toll >= 0, "toll must be non-negative");
    const SlotWeights weights = SlotWeights::constant(static_cast<int>(nonflexible.cols()));
    const TollSweepPoint point =
        detail::evaluate_toll_point(scenario, grid, nonflexible, weights, toll);
    ProfileIllustration out;
    out.toll = toll;
    out.needs = point.needs;
    out.schedules = point.schedules;
    out.costs = point.costs;
    out.grid_aware_converged = point.grid_aware_converged;
    const double reference = point.costs.cost_by_method.at("grid_aware");
    for (const auto& name : method_names())
        out.costs.normalized[name] =
            normalized_cost(point.costs.cost_by_method.at(name), reference);
    return out;
}

}  // namespace evgrid
