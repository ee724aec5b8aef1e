#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "evgrid/common.hpp"

namespace evgrid {

/// One commuting path. Travel time follows the BPR congestion curve
/// d(x) = d0 * (1 + 2 (x/C)^4) with d0 = length / speed_limit.
struct PathSpec {
    double length_km = 0.0;
    double speed_limit_kmh = 0.0;
    double capacity_vehicles = 0.0;
    std::map<std::string, double> toll_per_class;  // euros, absent class = 0

    double free_flow_hours() const { return length_km / speed_limit_kmh; }

    double toll_for(const std::string& class_id) const {
        auto it = toll_per_class.find(class_id);
        return it == toll_per_class.end() ? 0.0 : it->second;
    }

    void validate() const {
        detail::require(length_km > 0.0, "PathSpec.length_km must be > 0");
        detail::require(speed_limit_kmh > 0.0, "PathSpec.speed_limit_kmh must be > 0");
        detail::require(capacity_vehicles > 0.0, "PathSpec.capacity_vehicles must be > 0");
        for (const auto& [cls, toll] : toll_per_class)
            detail::require(toll >= 0.0, "PathSpec.toll_per_class[" + cls + "] must be >= 0");
    }
};

/// A vehicle class. The class with id "ev" is the electric one; its
/// consumption is in kWh/km and its energy price in euro/kWh.
struct VehicleClassSpec {
    std::string id;                   // "ev" or "gv"
    double population_share = 0.0;    // fraction of all vehicles
    double consumption_per_km = 0.0;  // kWh/km (EV) or L/km (GV)
    double energy_unit_price = 0.0;   // euro/kWh (EV) or euro/L (GV)

    bool is_electric() const { return id == "ev"; }

    void validate() const {
        detail::require(!id.empty(), "VehicleClassSpec.id must be non-empty");
        detail::require(population_share >= 0.0 && population_share <= 1.0,
                        "VehicleClassSpec.population_share must be in [0,1]");
        detail::require(consumption_per_km > 0.0, "VehicleClassSpec.consumption_per_km must be > 0");
        detail::require(energy_unit_price > 0.0, "VehicleClassSpec.energy_unit_price must be > 0");
    }
};

struct TransportScenario {
    double total_vehicles = 0.0;  // N
    double time_value = 0.0;      // euro per hour of driving
    std::vector<VehicleClassSpec> classes;
    std::vector<PathSpec> paths;

    int class_count() const { return static_cast<int>(classes.size()); }
    int path_count() const { return static_cast<int>(paths.size()); }

    int electric_class_index() const {
        for (int s = 0; s < class_count(); ++s)
            if (classes[s].is_electric()) return s;
        return -1;
    }

    void validate() const {
        detail::require(total_vehicles > 0.0, "TransportScenario.total_vehicles must be > 0");
        detail::require(time_value >= 0.0, "TransportScenario.time_value must be >= 0");
        detail::require(!paths.empty(), "TransportScenario.paths must be non-empty");
        detail::require(!classes.empty(), "TransportScenario.classes must be non-empty");
        double share_sum = 0.0;
        for (const auto& c : classes) {
            c.validate();
            share_sum += c.population_share;
        }
        detail::require(std::abs(share_sum - 1.0) <= 1e-9,
                        "TransportScenario.classes population shares must sum to 1");
        for (const auto& p : paths) p.validate();
    }
};

/// Row s, column i holds the proportion of class-s vehicles on path i.
struct FlowAssignment {
    Eigen::MatrixXd proportions;

    void validate() const {
        for (Eigen::Index s = 0; s < proportions.rows(); ++s) {
            detail::require((proportions.row(s).array() >= 0.0).all(),
                            "FlowAssignment.proportions must be non-negative");
            detail::require(std::abs(proportions.row(s).sum() - 1.0) <= 1e-9,
                            "FlowAssignment.proportions rows must sum to 1");
        }
    }
};

struct EquilibriumResult {
    FlowAssignment assignment;
    Eigen::MatrixXd per_class_path_costs;  // euros
    double equilibrium_gap = 0.0;          // euros
    bool converged = false;
    int iterations = 0;
};

struct ChargingNeeds {
    Eigen::VectorXd per_evcs_mwh;  // one entry per path / EVCS
};

/// BPR travel time in hours for the given total vehicle count on the path.
inline double bpr_travel_time(const PathSpec& path, double total_flow) {
    if (total_flow < 0.0) throw ValidationError("bpr_travel_time: total_flow must be >= 0");
    const double ratio = total_flow / path.capacity_vehicles;
    const double r2 = ratio * ratio;
    return path.free_flow_hours() * (1.0 + 2.0 * r2 * r2);
}

/// Full driving cost in euros: time cost + energy cost + toll.
inline double driving_cost(const VehicleClassSpec& cls, const PathSpec& path, double total_flow,
                           const TransportScenario& scenario) {
    return scenario.time_value * bpr_travel_time(path, total_flow) +
           path.length_km * cls.consumption_per_km * cls.energy_unit_price + path.toll_for(cls.id);
}

/// Total vehicle count per path implied by an assignment.
inline Eigen::VectorXd total_flows(const TransportScenario& scenario, const FlowAssignment& assignment) {
    const int n_paths = scenario.path_count();
    Eigen::VectorXd flows = Eigen::VectorXd::Zero(n_paths);
    for (int s = 0; s < scenario.class_count(); ++s)
        for (int i = 0; i < n_paths; ++i)
            flows[i] += assignment.proportions(s, i) * scenario.classes[s].population_share *
                        scenario.total_vehicles;
    return flows;
}

/// Convex potential whose minimizers over the per-class simplices are exactly
/// the equilibria of the game: congestion integral plus the class-constant
/// cost terms weighted by vehicle counts.
inline double beckmann_potential(const TransportScenario& scenario, const FlowAssignment& assignment) {
    const Eigen::VectorXd flows = total_flows(scenario, assignment);
    double value = 0.0;
    for (int i = 0; i < scenario.path_count(); ++i) {
        const PathSpec& p = scenario.paths[i];
        const double x = flows[i];
        const double c4 = std::pow(p.capacity_vehicles, 4);
        value += scenario.time_value * p.free_flow_hours() *
                 (x + (2.0 / (5.0 * c4)) * std::pow(x, 5));
    }
    for (int s = 0; s < scenario.class_count(); ++s) {
        const VehicleClassSpec& cls = scenario.classes[s];
        for (int i = 0; i < scenario.path_count(); ++i) {
            const PathSpec& p = scenario.paths[i];
            const double constant = p.length_km * cls.consumption_per_km * cls.energy_unit_price +
                                    p.toll_for(cls.id);
            value += constant * assignment.proportions(s, i) * cls.population_share *
                     scenario.total_vehicles;
        }
    }
    return value;
}

namespace detail {

inline Eigen::MatrixXd class_path_costs(const TransportScenario& scenario,
                                        const Eigen::VectorXd& flows) {
    Eigen::MatrixXd costs(scenario.class_count(), scenario.path_count());
    for (int s = 0; s < scenario.class_count(); ++s)
        for (int i = 0; i < scenario.path_count(); ++i)
            costs(s, i) = driving_cost(scenario.classes[s], scenario.paths[i], flows[i], scenario);
    return costs;
}

/// Gap between the worst used path and the best path, maximized over classes.
inline double equilibrium_gap_of(const TransportScenario& scenario, const Eigen::MatrixXd& x,
                                 const Eigen::MatrixXd& costs, double used_threshold = 1e-6) {
    double gap = 0.0;
    for (int s = 0; s < scenario.class_count(); ++s) {
        double worst_used = -std::numeric_limits<double>::infinity();
        double best = std::numeric_limits<double>::infinity();
        for (int i = 0; i < scenario.path_count(); ++i) {
            best = std::min(best, costs(s, i));
            if (x(s, i) > used_threshold) worst_used = std::max(worst_used, costs(s, i));
        }
        if (std::isfinite(worst_used)) gap = std::max(gap, worst_used - best);
    }
    return gap;
}

/// Directional derivative of the potential at x + gamma * d, where d moves
/// class proportions. Polynomial of degree 4 in gamma, evaluated directly.
inline double potential_slope(const TransportScenario& scenario, const Eigen::MatrixXd& x,
                              const Eigen::MatrixXd& d, double gamma) {
    const int n_paths = scenario.path_count();
    Eigen::VectorXd flows = Eigen::VectorXd::Zero(n_paths);
    for (int s = 0; s < scenario.class_count(); ++s) {
        const double weight = scenario.classes[s].population_share * scenario.total_vehicles;
        for (int i = 0; i < n_paths; ++i) flows[i] += (x(s, i) + gamma * d(s, i)) * weight;
    }
    double slope = 0.0;
    for (int s = 0; s < scenario.class_count(); ++s) {
        const double weight = scenario.classes[s].population_share * scenario.total_vehicles;
        for (int i = 0; i < n_paths; ++i) {
            if (d(s, i) == 0.0) continue;
            slope += driving_cost(scenario.classes[s], scenario.paths[i], flows[i], scenario) *
                     d(s, i) * weight;
        }
    }
    return slope;
}

/// Exact step length over [0,1] by bisection on the (monotone) slope.
inline double line_search(const TransportScenario& scenario, const Eigen::MatrixXd& x,
                          const Eigen::MatrixXd& d) {
    if (potential_slope(scenario, x, d, 1.0) <= 0.0) return 1.0;
    double lo = 0.0, hi = 1.0;
    for (int k = 0; k < 80; ++k) {
        const double mid = 0.5 * (lo + hi);
        (potential_slope(scenario, x, d, mid) < 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

/// Pairwise direction for one class: shift the mass of the costliest used
/// path onto the cheapest path. Zero when the class is already settled.
inline void pairwise_direction(const Eigen::MatrixXd& x, const Eigen::MatrixXd& costs, int s,
                               Eigen::MatrixXd& d) {
    const int n_paths = static_cast<int>(x.cols());
    int best = 0, worst = -1;
    for (int i = 1; i < n_paths; ++i)
        if (costs(s, i) < costs(s, best)) best = i;
    for (int i = 0; i < n_paths; ++i)
        if (x(s, i) > 0.0 && (worst < 0 || costs(s, i) > costs(s, worst))) worst = i;
    if (worst < 0 || worst == best || costs(s, worst) <= costs(s, best)) return;
    d(s, best) += x(s, worst);
    d(s, worst) -= x(s, worst);
}

inline void apply_step(Eigen::MatrixXd& x, const Eigen::MatrixXd& d, double gamma) {
    x += gamma * d;
    x = x.cwiseMax(0.0);
    for (Eigen::Index s = 0; s < x.rows(); ++s) x.row(s) /= x.row(s).sum();
}

}  // namespace detail

/// Computes a Wardrop equilibrium by minimizing the potential with pairwise
/// swap steps and exact line search. Classes move along a joint direction
/// first; when that stalls, each class is line-searched on its own, which
/// drains residual flow off dominated paths.
inline EquilibriumResult solve_wardrop(const TransportScenario& scenario, double tolerance = 1e-4,
                                       int max_iterations = 10000) {
    scenario.validate();
    if (tolerance <= 0.0) throw ValidationError("solve_wardrop: tolerance must be > 0");
    const int n_classes = scenario.class_count();
    const int n_paths = scenario.path_count();

    EquilibriumResult result;
    Eigen::MatrixXd x = Eigen::MatrixXd::Constant(n_classes, n_paths, 1.0 / n_paths);

    for (int iter = 0; iter <= max_iterations; ++iter) {
        const Eigen::VectorXd flows = total_flows(scenario, FlowAssignment{x});
        const Eigen::MatrixXd costs = detail::class_path_costs(scenario, flows);
        const double gap = detail::equilibrium_gap_of(scenario, x, costs);
        result.assignment.proportions = x;
        result.per_class_path_costs = costs;
        result.equilibrium_gap = gap;
        result.iterations = iter;
        if (gap <= tolerance) {
            result.converged = true;
            return result;
        }
        if (iter == max_iterations) break;

        Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n_classes, n_paths);
        for (int s = 0; s < n_classes; ++s) detail::pairwise_direction(x, costs, s, d);

        bool progressed = false;
        if (detail::potential_slope(scenario, x, d, 0.0) < -1e-13) {
            const double gamma = detail::line_search(scenario, x, d);
            detail::apply_step(x, d, gamma);
            const Eigen::VectorXd new_flows = total_flows(scenario, FlowAssignment{x});
            const Eigen::MatrixXd new_costs = detail::class_path_costs(scenario, new_flows);
            progressed = detail::equilibrium_gap_of(scenario, x, new_costs) < gap * (1.0 - 1e-9);
        }

        if (!progressed) {
            // Per-class cleanup: exact 1-D moves, one class at a time.
            for (int s = 0; s < n_classes; ++s) {
                const Eigen::VectorXd fl = total_flows(scenario, FlowAssignment{x});
                const Eigen::MatrixXd cs = detail::class_path_costs(scenario, fl);
                Eigen::MatrixXd ds = Eigen::MatrixXd::Zero(n_classes, n_paths);
                detail::pairwise_direction(x, cs, s, ds);
                if (detail::potential_slope(scenario, x, ds, 0.0) >= -1e-15) continue;
                detail::apply_step(x, ds, detail::line_search(scenario, x, ds));
            }
        }
    }
    result.converged = false;
    return result;
}

/// Energy to recharge at each EVCS: consumption of the EVs that parked there,
/// converted from kWh to MWh.
inline ChargingNeeds charging_needs(const EquilibriumResult& equilibrium,
                                    const TransportScenario& scenario) {
    const int ev = scenario.electric_class_index();
    if (ev < 0) throw ValidationError("charging_needs: scenario has no class with id \"ev\"");
    const VehicleClassSpec& cls = scenario.classes[ev];
    ChargingNeeds needs;
    needs.per_evcs_mwh.resize(scenario.path_count());
    for (int i = 0; i < scenario.path_count(); ++i) {
        const double kwh = scenario.paths[i].length_km * cls.consumption_per_km *
                           equilibrium.assignment.proportions(ev, i) * cls.population_share *
                           scenario.total_vehicles;
        needs.per_evcs_mwh[i] = kwh / 1000.0;
    }
    return needs;
}

/// The default commuting scenario: three parallel paths, an EV and a GV class
/// split 50/50, with an optional toll on the third path applied to both.
inline TransportScenario default_scenario(double toll_path3 = 0.0) {
    TransportScenario scenario;
    scenario.total_vehicles = 3000.0;
    scenario.time_value = 10.0;
    scenario.classes = {
        VehicleClassSpec{"ev", 0.5, 0.2, 0.20},
        VehicleClassSpec{"gv", 0.5, 0.06, 1.5},
    };
    scenario.paths = {
        PathSpec{30.0, 50.0, 3000.0, {}},
        PathSpec{20.0, 50.0, 3000.0, {}},
        PathSpec{20.0, 70.0, 3000.0, {{"ev", toll_path3}, {"gv", toll_path3}}},
    };
    return scenario;
}

}  // namespace evgrid
