#pragma once

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "evgrid/common.hpp"
#include "evgrid/config.hpp"
#include "evgrid/experiments.hpp"
#include "evgrid/grid.hpp"
#include "evgrid/io.hpp"
#include "evgrid/scheduling.hpp"
#include "evgrid/traffic.hpp"

namespace evgrid {

namespace detail {

namespace fs = std::filesystem;

inline fs::path ensure_output_dir(const RunConfig& config) {
    fs::path dir(config.output_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir.string());
    return dir;
}

inline void write_error_json(const fs::path& dir, const std::string& command,
                             const std::string& category, const std::string& message) {
    try {
        write_json_file(dir / "errors.json",
                        {{"command", command}, {"category", category}, {"message", message}});
    } catch (const std::exception&) {
        // The error path must not raise; the exit code still tells the story.
    }
}

inline Eigen::MatrixXd resolve_nonflexible(const RunConfig& config, int slots, int stations) {
    Eigen::MatrixXd m;
    if (config.nonflexible_source == "default") {
        m = default_nonflexible_profile(stations, slots, config.nonflexible_total_mwh);
    } else if (config.nonflexible_source == "inline") {
        m = config.nonflexible_inline;
    } else {
        m = read_csv_matrix(config.nonflexible_csv);
    }
    require(m.rows() == stations, "nonflexible profile must have one row per charging station");
    if (m.cols() != slots) {
        require(slots >= 1 && m.cols() % slots == 0,
                "nonflexible profile columns must equal or be a multiple of the slot count");
        m = merge_adjacent_slots(m, slots);
    }
    require(m.allFinite() && (m.array() >= 0).all(),
            "nonflexible profile must be non-negative");
    return m;
}

inline int station_count(const RunConfig& config) {
    return static_cast<int>(config.grid.evcs_buses().size());
}

inline void write_schedule_rows(CsvWriter& csv, const std::string& method,
                                const LoadSchedule& schedule) {
    for (Eigen::Index i = 0; i < schedule.flexible.rows(); ++i)
        for (Eigen::Index t = 0; t < schedule.flexible.cols(); ++t)
            csv.row({method, static_cast<int>(i + 1), static_cast<int>(t + 1),
                     schedule.nonflexible(i, t), schedule.flexible(i, t),
                     schedule.nonflexible(i, t) + schedule.flexible(i, t)});
}

inline int cmd_equilibrium(const RunConfig& config, const fs::path& dir, bool with_needs) {
    const TransportScenario& scenario = config.transport;
    const EquilibriumResult eq = solve_wardrop(scenario);
    {
        CsvWriter csv(dir / "equilibrium.csv",
                      {"class", "path", "proportion", "vehicles", "cost_eur"});
        const Eigen::MatrixXd counts = vehicle_counts_of(scenario, eq.assignment);
        for (int s = 0; s < scenario.class_count(); ++s)
            for (int i = 0; i < scenario.path_count(); ++i)
                csv.row({scenario.classes[s].id, i + 1, eq.assignment.proportions(s, i),
                         counts(s, i), eq.per_class_path_costs(s, i)});
        csv.close();
    }
    ordered_json summary = {{"command", with_needs ? "needs" : "equilibrium"},
                            {"converged", eq.converged},
                            {"iterations", eq.iterations},
                            {"equilibrium_gap_eur", eq.equilibrium_gap}};
    if (with_needs) {
        const ChargingNeeds needs = charging_needs(eq, scenario);
        CsvWriter csv(dir / "needs.csv", {"evcs", "need_mwh"});
        std::vector<double> listed;
        for (Eigen::Index i = 0; i < needs.per_evcs_mwh.size(); ++i) {
            csv.row({static_cast<int>(i + 1), needs.per_evcs_mwh[i]});
            listed.push_back(needs.per_evcs_mwh[i]);
        }
        csv.close();
        summary["needs_mwh"] = listed;
        std::cout << "needs: total=" << format_double(needs.per_evcs_mwh.sum())
                  << " MWh, equilibrium gap=" << format_double(eq.equilibrium_gap) << " EUR\n";
    } else {
        std::cout << "equilibrium: gap=" << format_double(eq.equilibrium_gap) << " EUR after "
                  << eq.iterations << " iterations\n";
    }
    write_json_file(dir / "summary.json", summary);
    if (!eq.converged)
        throw ConvergenceError("equilibrium did not reach its gap tolerance", eq.equilibrium_gap);
    return 0;
}

inline int cmd_schedule(const RunConfig& config, const fs::path& dir) {
    const TransportScenario scenario =
        with_last_path_toll(config.transport, config.schedule.toll);
    const int stations = station_count(config);
    require(scenario.path_count() == stations, "one charging station per path expected");
    const EquilibriumResult eq = solve_wardrop(scenario);
    if (!eq.converged)
        throw ConvergenceError("equilibrium did not reach its gap tolerance", eq.equilibrium_gap);
    const ChargingNeeds needs = charging_needs(eq, scenario);
    const Eigen::MatrixXd nonflexible = resolve_nonflexible(config, config.slots, stations);
    const SlotWeights weights = config.slot_weights(config.slots);

    LoadSchedule schedule;
    double cost = 0.0;
    bool aware_failed = false;
    ordered_json extra;
    if (config.schedule.method == "local") {
        schedule = schedule_local(nonflexible, needs, weights);
        cost = grid_cost(config.grid, schedule, weights);
    } else if (config.schedule.method == "global") {
        schedule = schedule_global(nonflexible, needs, weights);
        cost = grid_cost(config.grid, schedule, weights);
        extra["used_projection_fallback"] = schedule.used_projection_fallback;
        extra["repair_iterations"] = schedule.repair_iterations;
    } else {
        const GridAwareResult aware =
            schedule_grid_aware(config.grid, nonflexible, needs, weights);
        schedule = aware.schedule;
        cost = aware.cost;
        aware_failed = !aware.converged;
        extra["converged"] = aware.converged;
        extra["iterations"] = aware.iterations;
    }

    CsvWriter csv(dir / "schedule.csv",
                  {"method", "evcs", "slot", "nonflexible_mwh", "flexible_mwh", "total_mwh"});
    write_schedule_rows(csv, config.schedule.method, schedule);
    csv.close();

    ordered_json summary = {{"command", "schedule"},
                            {"method", config.schedule.method},
                            {"toll", config.schedule.toll},
                            {"slots", config.slots},
                            {"cost_mva2", cost}};
    std::vector<double> listed(needs.per_evcs_mwh.data(),
                               needs.per_evcs_mwh.data() + needs.per_evcs_mwh.size());
    summary["needs_mwh"] = listed;
    for (const auto& [key, value] : extra.items()) summary[key] = value;
    write_json_file(dir / "summary.json", summary);
    std::cout << "schedule (" << config.schedule.method
              << "): cost=" << format_double(cost) << " MVA^2\n";
    if (aware_failed)
        throw ConvergenceError("grid-aware optimizer did not converge; best iterate written",
                               cost);
    return 0;
}

inline int cmd_powerflow(const RunConfig& config, const fs::path& dir) {
    const int stations = station_count(config);
    Eigen::VectorXd loads = Eigen::VectorXd::Zero(stations);
    if (!config.powerflow.loads_mw.empty()) {
        require(static_cast<int>(config.powerflow.loads_mw.size()) == stations,
                "powerflow.loads_mw must have one entry per charging station");
        loads = Eigen::Map<const Eigen::VectorXd>(config.powerflow.loads_mw.data(), stations);
    }
    const PowerFlowSolution sol = solve_power_flow(config.grid, loads);
    CsvWriter csv(dir / "powerflow.csv", {"bus", "id", "kind", "voltage_mag_pu",
                                          "voltage_angle_rad", "injection_mw", "injection_mvar"});
    for (std::size_t k = 0; k < config.grid.buses.size(); ++k) {
        const auto& bus = config.grid.buses[k];
        csv.row({static_cast<int>(k), bus.id, bus.kind == BusKind::Slack ? "slack" : "load",
                 std::abs(sol.bus_voltages_pu[k]), std::arg(sol.bus_voltages_pu[k]),
                 sol.bus_injections_mva[k].real(), sol.bus_injections_mva[k].imag()});
    }
    csv.close();
    write_json_file(dir / "summary.json",
                    {{"command", "powerflow"},
                     {"converged", sol.converged},
                     {"iterations", sol.iterations},
                     {"max_residual_pu", sol.max_residual_pu},
                     {"head_apparent_power_mva", sol.head_apparent_power_mva}});
    std::cout << "powerflow: head=" << format_double(sol.head_apparent_power_mva)
              << " MVA, residual=" << format_double(sol.max_residual_pu) << " pu\n";
    if (!sol.converged)
        throw ConvergenceError("power flow did not converge", sol.max_residual_pu);
    return 0;
}

inline std::vector<double> sweep_toll_values(const SweepOptions& sweep) {
    std::vector<double> tolls;
    for (int k = 0;; ++k) {
        const double value = sweep.toll_min + k * sweep.toll_step;
        if (value > sweep.toll_max + 1e-9) break;
        tolls.push_back(value);
    }
    return tolls;
}

inline int cmd_sweep(const RunConfig& config, const fs::path& dir) {
    const int stations = station_count(config);
    const Eigen::MatrixXd nonflexible = resolve_nonflexible(config, config.slots, stations);
    const std::vector<double> tolls = sweep_toll_values(config.sweep);
    const TollSweepResult result = toll_sweep(config.transport, config.grid, nonflexible, tolls);

    {
        CsvWriter csv(dir / "sweep_equilibrium.csv",
                      {"toll", "class", "path", "proportion", "vehicles"});
        for (const auto& point : result.points) {
            if (!point.ok) continue;
            for (int s = 0; s < config.transport.class_count(); ++s)
                for (int i = 0; i < config.transport.path_count(); ++i)
                    csv.row({point.toll, config.transport.classes[s].id, i + 1,
                             point.equilibrium.assignment.proportions(s, i),
                             point.vehicle_counts(s, i)});
        }
        csv.close();
    }
    {
        CsvWriter csv(dir / "sweep_needs.csv", {"toll", "evcs", "need_mwh"});
        for (const auto& point : result.points) {
            if (!point.ok) continue;
            for (Eigen::Index i = 0; i < point.needs.per_evcs_mwh.size(); ++i)
                csv.row({point.toll, static_cast<int>(i + 1), point.needs.per_evcs_mwh[i]});
        }
        csv.close();
    }
    {
        CsvWriter csv(dir / "sweep_costs.csv", {"toll", "method", "cost_mva2", "normalized"});
        for (const auto& point : result.points) {
            if (!point.ok) continue;
            for (const auto& name : method_names())
                csv.row({point.toll, name, point.costs.cost_by_method.at(name),
                         point.costs.normalized.at(name)});
        }
        csv.close();
    }
    int ok_count = 0;
    for (const auto& point : result.points) ok_count += point.ok ? 1 : 0;
    write_json_file(dir / "summary.json",
                    {{"command", "sweep"},
                     {"reference_cost_mva2", result.reference_cost},
                     {"point_count", static_cast<int>(result.points.size())},
                     {"ok_count", ok_count},
                     {"errors", result.errors}});
    std::cout << "sweep: " << ok_count << "/" << result.points.size()
              << " toll points, reference cost=" << format_double(result.reference_cost)
              << " MVA^2\n";
    if (!result.errors.empty())
        throw ConvergenceError("sweep: " + std::to_string(result.errors.size()) +
                                   " toll point(s) failed; first: " + result.errors.front(),
                               0.0);
    return 0;
}

inline int cmd_bench(const RunConfig& config, const fs::path& dir) {
    const int stations = station_count(config);
    require(config.transport.path_count() == stations, "one charging station per path expected");
    int base_slots = 0;
    for (int t : config.bench.slot_counts) base_slots = std::max(base_slots, t);
    for (int t : config.bench.slot_counts)
        require(base_slots % t == 0, "bench.slot_counts must all divide the largest slot count");

    const TransportScenario scenario =
        with_last_path_toll(config.transport, config.bench.toll);
    const EquilibriumResult eq = solve_wardrop(scenario);
    if (!eq.converged)
        throw ConvergenceError("equilibrium did not reach its gap tolerance", eq.equilibrium_gap);
    const ChargingNeeds needs = charging_needs(eq, scenario);
    const std::vector<Eigen::MatrixXd> profiles =
        generate_profiles(config.seed, config.bench.profile_count, config.nonflexible_total_mwh,
                          stations, base_slots);
    BenchmarkResult result =
        benchmark_methods(profiles, needs, config.grid, config.bench.slot_counts);
    result.seed = config.seed;

    CsvWriter csv(dir / "bench.csv",
                  {"slots", "mean_eps_local", "mean_eps_global", "mean_seconds_local",
                   "mean_seconds_global", "mean_seconds_grid_aware", "samples", "failures"});
    for (const auto& row : result.rows)
        csv.row({row.slots, row.mean_eps_local, row.mean_eps_global, row.mean_seconds_local,
                 row.mean_seconds_global, row.mean_seconds_grid_aware, row.sample_count,
                 row.failed_count});
    csv.close();

    ordered_json rows = ordered_json::array();
    for (const auto& row : result.rows)
        rows.push_back({{"slots", row.slots},
                        {"mean_eps_local", row.mean_eps_local},
                        {"mean_eps_global", row.mean_eps_global},
                        {"mean_seconds_local", row.mean_seconds_local},
                        {"mean_seconds_global", row.mean_seconds_global},
                        {"mean_seconds_grid_aware", row.mean_seconds_grid_aware},
                        {"samples", row.sample_count},
                        {"failures", row.failed_count}});
    write_json_file(dir / "summary.json", {{"command", "bench"},
                                           {"seed", result.seed},
                                           {"toll", config.bench.toll},
                                           {"profile_count", config.bench.profile_count},
                                           {"rows", rows}});
    for (const auto& row : result.rows)
        std::cout << "bench T=" << row.slots << ": eps_local="
                  << format_double(row.mean_eps_local)
                  << " eps_global=" << format_double(row.mean_eps_global) << " over "
                  << row.sample_count << " profiles (" << row.failed_count << " failed)\n";
    return 0;
}

inline int cmd_illustrate(const RunConfig& config, const fs::path& dir) {
    const int stations = station_count(config);
    const int slots = config.illustrate.slots;
    const Eigen::MatrixXd nonflexible = resolve_nonflexible(config, slots, stations);
    const ProfileIllustration result =
        profile_illustration(config.transport, config.grid, nonflexible, config.illustrate.toll);

    {
        CsvWriter csv(dir / "illustrate.csv",
                      {"method", "evcs", "slot", "nonflexible_mwh", "flexible_mwh", "total_mwh"});
        for (const auto& name : method_names())
            write_schedule_rows(csv, name, result.schedules.at(name));
        csv.close();
    }
    {
        CsvWriter csv(dir / "illustrate_aggregate.csv",
                      {"method", "slot", "total_mwh", "mean_mw"});
        const double hours = slot_duration_hours(slots);
        for (const auto& name : method_names()) {
            const Eigen::MatrixXd total = result.schedules.at(name).total();
            for (Eigen::Index t = 0; t < total.cols(); ++t)
                csv.row({name, static_cast<int>(t + 1), total.col(t).sum(),
                         total.col(t).sum() / hours});
        }
        csv.close();
    }
    ordered_json costs;
    for (const auto& name : method_names())
        costs[name] = {{"cost_mva2", result.costs.cost_by_method.at(name)},
                       {"normalized", result.costs.normalized.at(name)}};
    std::vector<double> listed(result.needs.per_evcs_mwh.data(),
                               result.needs.per_evcs_mwh.data() +
                                   result.needs.per_evcs_mwh.size());
    write_json_file(dir / "summary.json", {{"command", "illustrate"},
                                           {"toll", result.toll},
                                           {"slots", slots},
                                           {"needs_mwh", listed},
                                           {"costs", costs},
                                           {"grid_aware_converged",
                                            result.grid_aware_converged}});
    std::cout << "illustrate: toll=" << format_double(result.toll) << ", needs=[";
    for (Eigen::Index i = 0; i < result.needs.per_evcs_mwh.size(); ++i)
        std::cout << (i ? " " : "") << format_double(result.needs.per_evcs_mwh[i]);
    std::cout << "] MWh\n";
    if (!result.grid_aware_converged)
        throw ConvergenceError("grid-aware optimizer did not converge; best iterate written",
                               result.costs.cost_by_method.at("grid_aware"));
    return 0;
}

}  // namespace detail

inline const std::vector<std::string>& cli_commands() {
    static const std::vector<std::string> commands = {
        "equilibrium", "needs", "schedule", "powerflow", "sweep", "bench", "illustrate"};
    return commands;
}

/// Executes one command against a validated config, writing artifacts into
/// the config's output directory. Returns the process exit code: 0 success,
/// 1 validation failure, 2 solver non-convergence, 3 I/O failure.
inline int run_command(const std::string& command, RunConfig config) {
    detail::fs::path dir(config.output_dir);
    try {
        config.validate();
        dir = detail::ensure_output_dir(config);
        if (command == "equilibrium") return detail::cmd_equilibrium(config, dir, false);
        if (command == "needs") return detail::cmd_equilibrium(config, dir, true);
        if (command == "schedule") return detail::cmd_schedule(config, dir);
        if (command == "powerflow") return detail::cmd_powerflow(config, dir);
        if (command == "sweep") return detail::cmd_sweep(config, dir);
        if (command == "bench") return detail::cmd_bench(config, dir);
        if (command == "illustrate") return detail::cmd_illustrate(config, dir);
        throw ValidationError("unknown command \"" + command + "\"");
    } catch (const ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        detail::write_error_json(dir, command, "validation", e.what());
        return 1;
    } catch (const ConvergenceError& e) {
        std::cerr << "solver error: " << e.what() << "\n";
        detail::write_error_json(dir, command, "non-convergence", e.what());
        return 2;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        detail::write_error_json(dir, command, "io", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        detail::write_error_json(dir, command, "error", e.what());
        return 1;
    }
}

inline int run_cli(int argc, char** argv) {
    CLI::App app{"EV commuting equilibrium, charging schedules and grid impact"};
    app.require_subcommand(1);

    std::string config_path, out_dir, method;
    std::uint64_t seed = 0;
    double toll_min = 0, toll_max = 0, toll_step = 0;
    int slots = 0;
    app.add_option("--config", config_path, "JSON configuration file");
    app.add_option("--seed", seed, "Override the random seed");
    app.add_option("--out", out_dir, "Override the output directory");
    app.add_option("--toll-min", toll_min, "Sweep: smallest toll in EUR");
    app.add_option("--toll-max", toll_max, "Sweep: largest toll in EUR");
    app.add_option("--toll-step", toll_step, "Sweep: toll increment in EUR");
    app.add_option("--slots", slots, "Number of charging slots in the working day");
    app.add_option("--method", method, "Scheduling method")
        ->check(CLI::IsMember({"local", "global", "grid-aware", "grid_aware"}));

    app.add_subcommand("equilibrium", "Solve the commuting equilibrium")->fallthrough();
    app.add_subcommand("needs", "Equilibrium plus per-station charging needs")->fallthrough();
    app.add_subcommand("schedule", "Run one scheduling method")->fallthrough();
    app.add_subcommand("powerflow", "Solve the network equations once")->fallthrough();
    app.add_subcommand("sweep", "Sweep the toll and price all methods")->fallthrough();
    app.add_subcommand("bench", "Compare methods over random profiles")->fallthrough();
    app.add_subcommand("illustrate", "One worked scheduling example")->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    RunConfig config;
    try {
        if (!config_path.empty()) config = parse_config(config_path);
        if (app.count("--seed")) config.seed = seed;
        if (app.count("--out")) config.output_dir = out_dir;
        if (app.count("--toll-min")) config.sweep.toll_min = toll_min;
        if (app.count("--toll-max")) config.sweep.toll_max = toll_max;
        if (app.count("--toll-step")) config.sweep.toll_step = toll_step;
        if (app.count("--slots")) {
            config.slots = slots;
            config.illustrate.slots = slots;
        }
        if (app.count("--method")) config.schedule.method = detail::normalize_method(method);
        config.validate();
    } catch (const ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 1;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 3;
    }

    return run_command(app.get_subcommands().front()->get_name(), config);
}

}  // namespace evgrid
