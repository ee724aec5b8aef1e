#include <catch2/catch_amalgamated.hpp>

#include "evgrid/traffic.hpp"
#include "oracles.hpp"

using namespace evgrid;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

TransportScenario one_class_two_paths() {
    TransportScenario s;
    s.total_vehicles = 1000.0;
    s.time_value = 10.0;
    s.classes = {VehicleClassSpec{"ev", 1.0, 0.2, 0.20}};
    s.paths = {PathSpec{10.0, 50.0, 800.0, {}}, PathSpec{10.0, 50.0, 800.0, {}}};
    return s;
}

}  // namespace

TEST_CASE("congestion curve at the landmark flows") {
    const PathSpec path{30.0, 50.0, 3000.0, {}};

    SECTION("free flow gives the free-flow time") {
        REQUIRE(bpr_travel_time(path, 0.0) == path.free_flow_hours());
        const PathSpec other{20.0, 70.0, 1234.0, {}};
        REQUIRE(bpr_travel_time(other, 0.0) == other.free_flow_hours());
    }

    SECTION("at capacity the travel time triples") {
        REQUIRE_THAT(bpr_travel_time(path, 3000.0), WithinRel(3.0 * path.free_flow_hours(), 1e-12));
        REQUIRE_THAT(bpr_travel_time(path, 3000.0), WithinAbs(1.8, 1e-12));
        const PathSpec other{20.0, 70.0, 500.0, {}};
        REQUIRE_THAT(bpr_travel_time(other, 500.0), WithinRel(3.0 * other.free_flow_hours(), 1e-12));
    }

    SECTION("negative flow is rejected") {
        REQUIRE_THROWS_AS(bpr_travel_time(path, -1.0), ValidationError);
    }

    SECTION("strictly increasing in flow and independent of who drives") {
        std::mt19937_64 rng(7);
        for (int k = 0; k < 200; ++k) {
            const double a = oracles::uniform(rng, 0.0, 6000.0);
            const double b = a + oracles::uniform(rng, 1e-6, 500.0);
            REQUIRE(bpr_travel_time(path, a) < bpr_travel_time(path, b));
        }
    }
}

TEST_CASE("driving cost adds time, energy, and toll terms") {
    const TransportScenario scenario = default_scenario();
    const VehicleClassSpec& ev = scenario.classes[0];
    const VehicleClassSpec& gv = scenario.classes[1];

    SECTION("electric car on the fast short path at free flow") {
        const double cost = driving_cost(ev, scenario.paths[2], 0.0, scenario);
        REQUIRE_THAT(cost, WithinRel(10.0 * (20.0 / 70.0) + 20.0 * 0.2 * 0.20, 1e-12));
        REQUIRE_THAT(cost, WithinAbs(3.6571428571428571, 1e-12));
    }

    SECTION("combustion car on the long path at free flow") {
        const double cost = driving_cost(gv, scenario.paths[0], 0.0, scenario);
        REQUIRE_THAT(cost, WithinAbs(10.0 * 0.6 + 30.0 * 0.06 * 1.5, 1e-12));
        REQUIRE_THAT(cost, WithinAbs(8.70, 1e-12));
    }

    SECTION("a toll shifts exactly that class's cost by the toll amount") {
        std::mt19937_64 rng(11);
        for (double toll : {0.25, 1.0, 4.0}) {
            PathSpec tolled = scenario.paths[2];
            tolled.toll_per_class["ev"] = toll;
            const double flow = oracles::uniform(rng, 0.0, 4000.0);
            REQUIRE_THAT(driving_cost(ev, tolled, flow, scenario),
                         WithinRel(driving_cost(ev, scenario.paths[2], flow, scenario) + toll, 1e-12));
            REQUIRE(driving_cost(gv, tolled, flow, scenario) ==
                    driving_cost(gv, scenario.paths[2], flow, scenario));
        }
    }
}

TEST_CASE("equilibrium on two identical paths splits evenly") {
    const auto eq = solve_wardrop(one_class_two_paths());
    REQUIRE(eq.converged);
    REQUIRE(eq.equilibrium_gap <= 1e-4);
    REQUIRE_THAT(eq.assignment.proportions(0, 0), WithinAbs(0.5, 1e-6));
    REQUIRE_THAT(eq.assignment.proportions(0, 1), WithinAbs(0.5, 1e-6));
}

TEST_CASE("untolled commute concentrates on the fast path") {
    const TransportScenario scenario = default_scenario(0.0);
    const auto eq = solve_wardrop(scenario);
    REQUIRE(eq.converged);
    const auto& x = eq.assignment.proportions;
    for (int s = 0; s < 2; ++s) {
        REQUIRE(x(s, 2) > 0.5);       // majority on the fast path
        REQUIRE(x(s, 0) <= 1e-6);     // nobody on the long path
        REQUIRE(std::abs(x.row(s).sum() - 1.0) <= 1e-9);
    }
    REQUIRE(x(1, 1) > 1e-3);  // a minority of combustion cars on path 2
    REQUIRE(x(1, 1) < 0.5);

    SECTION("used paths cost within the gap of the class optimum") {
        for (int s = 0; s < 2; ++s) {
            const double best = eq.per_class_path_costs.row(s).minCoeff();
            for (int i = 0; i < 3; ++i)
                if (x(s, i) > 1e-6)
                    REQUIRE(eq.per_class_path_costs(s, i) <= best + eq.equilibrium_gap + 1e-12);
        }
    }
}

TEST_CASE("a four-euro toll empties the tolled path") {
    const auto eq = solve_wardrop(default_scenario(4.0));
    REQUIRE(eq.converged);
    REQUIRE(eq.assignment.proportions(0, 2) <= 1e-6);
    REQUIRE(eq.assignment.proportions(1, 2) <= 1e-6);
}

TEST_CASE("no class gains by rerouting a small group") {
    for (double toll : {0.0, 1.5, 4.0}) {
        const TransportScenario scenario = default_scenario(toll);
        const auto eq = solve_wardrop(scenario);
        REQUIRE(eq.converged);
        const auto& x = eq.assignment.proportions;
        const Eigen::VectorXd flows = total_flows(scenario, eq.assignment);
        const double delta = scenario.total_vehicles * 1e-4;
        for (int s = 0; s < scenario.class_count(); ++s)
            for (int i = 0; i < scenario.path_count(); ++i) {
                if (x(s, i) <= 1e-6) continue;
                const double used_cost =
                    driving_cost(scenario.classes[s], scenario.paths[i], flows[i], scenario);
                for (int j = 0; j < scenario.path_count(); ++j) {
                    if (j == i) continue;
                    const double moved_cost = driving_cost(scenario.classes[s], scenario.paths[j],
                                                           flows[j] + delta, scenario);
                    REQUIRE(moved_cost >= used_cost - 1e-4);
                }
            }
    }
}

TEST_CASE("returned assignment minimizes the route-choice potential") {
    std::mt19937_64 rng(23);
    for (double toll : {0.0, 2.0}) {
        const TransportScenario scenario = default_scenario(toll);
        const auto eq = solve_wardrop(scenario);
        REQUIRE(eq.converged);
        const double at_equilibrium = beckmann_potential(scenario, eq.assignment);
        for (int k = 0; k < 100; ++k) {
            const FlowAssignment random = oracles::random_assignment(rng, 2, 3);
            REQUIRE(at_equilibrium <= beckmann_potential(scenario, random) + 1e-9);
        }
    }
}

TEST_CASE("charging needs convert parked consumption to MWh") {
    const TransportScenario scenario = default_scenario();

    SECTION("everyone on the fast path") {
        EquilibriumResult eq;
        eq.assignment.proportions.resize(2, 3);
        eq.assignment.proportions << 0.0, 0.0, 1.0, 0.0, 0.0, 1.0;
        const auto needs = charging_needs(eq, scenario);
        REQUIRE_THAT(needs.per_evcs_mwh[2], WithinRel(6.0, 1e-12));
        REQUIRE(needs.per_evcs_mwh[0] == 0.0);
        REQUIRE(needs.per_evcs_mwh[1] == 0.0);
    }

    SECTION("everyone on the long path") {
        EquilibriumResult eq;
        eq.assignment.proportions.resize(2, 3);
        eq.assignment.proportions << 1.0, 0.0, 0.0, 1.0, 0.0, 0.0;
        const auto needs = charging_needs(eq, scenario);
        REQUIRE_THAT(needs.per_evcs_mwh[0], WithinRel(9.0, 1e-12));
    }

    SECTION("totals follow the consumption identity") {
        const auto eq = solve_wardrop(scenario);
        const auto needs = charging_needs(eq, scenario);
        double expected = 0.0;
        for (int i = 0; i < 3; ++i)
            expected += scenario.paths[i].length_km * 0.2 * eq.assignment.proportions(0, i) * 0.5 *
                        3000.0 / 1000.0;
        REQUIRE_THAT(needs.per_evcs_mwh.sum(), WithinAbs(expected, 1e-9));
        REQUIRE((needs.per_evcs_mwh.array() >= 0.0).all());
    }

    SECTION("a scenario without an electric class is rejected") {
        TransportScenario gas_only = scenario;
        gas_only.classes = {VehicleClassSpec{"gv", 1.0, 0.06, 1.5}};
        EquilibriumResult eq;
        eq.assignment.proportions = Eigen::MatrixXd::Constant(1, 3, 1.0 / 3.0);
        REQUIRE_THROWS_AS(charging_needs(eq, gas_only), ValidationError);
    }
}

TEST_CASE("total need is toll-invariant when all paths are equally long") {
    TransportScenario scenario = default_scenario();
    for (auto& p : scenario.paths) p.length_km = 20.0;
    double reference = -1.0;
    for (double toll : {0.0, 2.0, 4.0}) {
        for (auto& cls : scenario.classes)
            scenario.paths[2].toll_per_class[cls.id] = toll;
        const auto eq = solve_wardrop(scenario);
        REQUIRE(eq.converged);
        const double total = charging_needs(eq, scenario).per_evcs_mwh.sum();
        if (reference < 0.0)
            reference = total;
        else
            REQUIRE_THAT(total, WithinAbs(reference, 1e-9));
    }

    SECTION("with unequal lengths the total shifts with the toll") {
        const double untolled = charging_needs(solve_wardrop(default_scenario(0.0)),
                                               default_scenario(0.0)).per_evcs_mwh.sum();
        const double tolled = charging_needs(solve_wardrop(default_scenario(4.0)),
                                             default_scenario(4.0)).per_evcs_mwh.sum();
        REQUIRE(std::abs(untolled - tolled) > 1e-3);
    }
}

TEST_CASE("combustion-only tolls still move the charging needs") {
    const TransportScenario base = default_scenario(0.0);
    TransportScenario gv_tolled = base;
    gv_tolled.paths[2].toll_per_class = {{"gv", 4.0}};
    const auto needs_base = charging_needs(solve_wardrop(base), base);
    const auto needs_tolled = charging_needs(solve_wardrop(gv_tolled), gv_tolled);
    REQUIRE((needs_base.per_evcs_mwh - needs_tolled.per_evcs_mwh).cwiseAbs().maxCoeff() > 1e-3);
}

TEST_CASE("transport input validation") {
    SECTION("paths") {
        PathSpec p{30.0, 50.0, 3000.0, {}};
        p.length_km = 0.0;
        REQUIRE_THROWS_WITH(p.validate(), ContainsSubstring("length_km"));
        p = {30.0, -50.0, 3000.0, {}};
        REQUIRE_THROWS_WITH(p.validate(), ContainsSubstring("speed_limit_kmh"));
        p = {30.0, 50.0, 0.0, {}};
        REQUIRE_THROWS_WITH(p.validate(), ContainsSubstring("capacity_vehicles"));
        p = {30.0, 50.0, 3000.0, {{"ev", -1.0}}};
        REQUIRE_THROWS_WITH(p.validate(), ContainsSubstring("toll"));
    }

    SECTION("classes and scenario") {
        TransportScenario s = default_scenario();
        s.classes[0].population_share = 0.4;  // shares now sum to 0.9
        REQUIRE_THROWS_AS(s.validate(), ValidationError);
        s = default_scenario();
        s.classes[0].consumption_per_km = -0.1;
        REQUIRE_THROWS_AS(s.validate(), ValidationError);
        s = default_scenario();
        s.total_vehicles = 0.0;
        REQUIRE_THROWS_AS(s.validate(), ValidationError);
        s = default_scenario();
        s.paths.clear();
        REQUIRE_THROWS_AS(s.validate(), ValidationError);
    }

    SECTION("assignments") {
        FlowAssignment a{Eigen::MatrixXd::Constant(2, 3, 1.0 / 3.0)};
        REQUIRE_NOTHROW(a.validate());
        a.proportions(0, 0) = -0.1;
        a.proportions(0, 1) = 0.1 + 2.0 / 3.0;
        REQUIRE_THROWS_AS(a.validate(), ValidationError);
        a.proportions = Eigen::MatrixXd::Constant(2, 3, 0.5);
        REQUIRE_THROWS_AS(a.validate(), ValidationError);
    }

    SECTION("solver preconditions") {
        REQUIRE_THROWS_AS(solve_wardrop(default_scenario(), 0.0), ValidationError);
        REQUIRE_THROWS_AS(solve_wardrop(TransportScenario{}), ValidationError);
    }
}
