#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "evgrid/cli.hpp"

using namespace evgrid;
namespace fs = std::filesystem;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "evgrid_cli_tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

std::size_t line_count(const std::string& text) {
    std::size_t lines = 0;
    for (const char c : text)
        if (c == '\n') ++lines;
    return lines;
}

int run_argv(std::vector<std::string> args) {
    std::vector<char*> argv;
    argv.reserve(args.size());
    for (auto& a : args) argv.push_back(a.data());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace

TEST_CASE("empty configuration reproduces the reference setup") {
    const RunConfig config = parse_config_text("{}");
    REQUIRE(config.version == 1);
    REQUIRE(config.seed == 1);
    REQUIRE(config.slots == 8);
    REQUIRE(config.output_dir == "out");
    REQUIRE(config.weights.empty());
    REQUIRE(config.use_reference_grid);
    REQUIRE(config.nonflexible_source == "default");
    REQUIRE(config.nonflexible_total_mwh == 30.0);

    const TransportScenario& t = config.transport;
    REQUIRE(t.total_vehicles == 3000.0);
    REQUIRE(t.time_value == 10.0);
    REQUIRE(t.classes.size() == 2);
    REQUIRE(t.classes[0].id == "ev");
    REQUIRE(t.classes[0].population_share == 0.5);
    REQUIRE(t.classes[0].consumption_per_km == 0.2);
    REQUIRE(t.classes[0].energy_unit_price == 0.20);
    REQUIRE(t.classes[1].id == "gv");
    REQUIRE(t.classes[1].consumption_per_km == 0.06);
    REQUIRE(t.classes[1].energy_unit_price == 1.5);
    REQUIRE(t.paths.size() == 3);
    const double lengths[] = {30.0, 20.0, 20.0};
    const double speeds[] = {50.0, 50.0, 70.0};
    for (int i = 0; i < 3; ++i) {
        REQUIRE(t.paths[i].length_km == lengths[i]);
        REQUIRE(t.paths[i].speed_limit_kmh == speeds[i]);
        REQUIRE(t.paths[i].capacity_vehicles == 3000.0);
        REQUIRE(t.paths[i].toll_for("ev") == 0.0);
        REQUIRE(t.paths[i].toll_for("gv") == 0.0);
    }
}

TEST_CASE("single-field overrides leave the rest untouched") {
    const RunConfig config = parse_config_text(R"({"transport": {"toll_path3": 4.0}})");
    const TransportScenario& t = config.transport;
    REQUIRE(t.paths[2].toll_for("ev") == 4.0);
    REQUIRE(t.paths[2].toll_for("gv") == 4.0);
    REQUIRE(t.paths[0].toll_for("ev") == 0.0);
    REQUIRE(t.paths[2].length_km == 20.0);
    REQUIRE(t.total_vehicles == 3000.0);
    REQUIRE(t.classes.size() == 2);

    const RunConfig seeded = parse_config_text(R"({"seed": 99})");
    REQUIRE(seeded.seed == 99);
    REQUIRE(seeded.transport.total_vehicles == 3000.0);
}

TEST_CASE("configuration errors name the problem") {
    SECTION("invalid path parameters") {
        const std::string text = R"({"transport": {"paths": [
            {"length_km": 30, "speed_limit_kmh": 50, "capacity_vehicles": -1}
        ]}})";
        REQUIRE_THROWS_WITH(parse_config_text(text), ContainsSubstring("capacity_vehicles"));
    }

    SECTION("unknown keys at any level") {
        REQUIRE_THROWS_WITH(parse_config_text(R"({"bogus": 1})"), ContainsSubstring("bogus"));
        REQUIRE_THROWS_WITH(parse_config_text(R"({"transport": {"junk": 2}})"),
                            ContainsSubstring("junk"));
        REQUIRE_THROWS_WITH(parse_config_text(R"({"sweep": {"step": 1}})"),
                            ContainsSubstring("step"));
        REQUIRE_THROWS_WITH(
            parse_config_text(R"({"transport": {"classes": [{"id": "ev", "population_share": 1,
                "consumption_per_km": 0.2, "energy_unit_price": 0.2, "color": "red"}]}})"),
            ContainsSubstring("color"));
    }

    SECTION("malformed json carries a parse diagnostic") {
        REQUIRE_THROWS_WITH(parse_config_text("{"), ContainsSubstring("parse"));
        REQUIRE_THROWS_AS(parse_config_text("{"), ValidationError);
    }

    SECTION("wrong types") {
        REQUIRE_THROWS_WITH(parse_config_text(R"({"slots": "eight"})"), ContainsSubstring("slots"));
        REQUIRE_THROWS_WITH(parse_config_text(R"({"seed": -3})"), ContainsSubstring("seed"));
        REQUIRE_THROWS_WITH(parse_config_text(R"({"grid": "mystery"})"), ContainsSubstring("preset"));
    }

    SECTION("cross-field checks") {
        REQUIRE_THROWS_AS(parse_config_text(R"({"weights": [1, 2]})"), ValidationError);
        REQUIRE_NOTHROW(parse_config_text(R"({"weights": [1, 2], "slots": 2})"));
        REQUIRE_THROWS_AS(parse_config_text(R"({"schedule": {"method": "psychic"}})"),
                          ValidationError);
    }
}

TEST_CASE("configurations survive a serialize/parse round trip") {
    const std::string custom = R"({
        "seed": 7,
        "slots": 4,
        "weights": [1.0, 2.0, 0.5, 1.25],
        "transport": {"toll_path3": 2.5, "total_vehicles": 2800},
        "nonflexible": [[1.0, 2.0, 3.0, 4.0]],
        "sweep": {"toll_max": 3.0},
        "bench": {"profile_count": 12, "slot_counts": [2, 4]},
        "schedule": {"method": "grid-aware", "toll": 1.5},
        "illustrate": {"toll": 3.25, "slots": 3},
        "powerflow": {"loads_mw": [1.0, 2.0, 0.5]}
    })";
    for (const std::string& text : {std::string("{}"), custom}) {
        const RunConfig config = parse_config_text(text);
        const std::string once = serialize_config(config);
        const RunConfig reparsed = parse_config_text(once);
        REQUIRE(serialize_config(reparsed) == once);
    }

    SECTION("an explicit grid round-trips too") {
        RunConfig config = parse_config_text("{}");
        config.use_reference_grid = false;
        config.grid = GridModel{};
        config.grid.buses = {{"a", 20.0, BusKind::Slack, std::nullopt},
                             {"b", 20.0, BusKind::Load, 0},
                             {"c", 20.0, BusKind::Load, 1}};
        LineSpec line;
        line.from_bus = 0;
        line.to_bus = 1;
        line.length_km = 3.0;
        line.resistance_ohm_per_km = 0.1;
        line.reactance_ohm_per_km = 0.1;
        line.shunt_capacitance_nf_per_km = 150.0;
        line.ampacity_ka = 0.4;
        LineSpec second = line;
        second.from_bus = 1;
        second.to_bus = 2;
        config.grid.lines = {line, second};
        const std::string once = serialize_config(config);
        const RunConfig reparsed = parse_config_text(once);
        REQUIRE_FALSE(reparsed.use_reference_grid);
        REQUIRE(serialize_config(reparsed) == once);
        REQUIRE(reparsed.grid.buses[1].evcs_index == 0);
        REQUIRE(reparsed.grid.lines[1].length_km == 3.0);
    }
}

TEST_CASE("csv matrices read back exactly what was written") {
    const fs::path dir = fresh_dir("csv");

    SECTION("headers and comments are skipped") {
        const fs::path file = dir / "m.csv";
        std::ofstream out(file);
        out << "# a comment\nslot1,slot2,slot3\n1.5,2.25,0.125\n# interlude\n4,5,6\n";
        out.close();
        const Eigen::MatrixXd m = read_csv_matrix(file.string());
        REQUIRE(m.rows() == 2);
        REQUIRE(m.cols() == 3);
        REQUIRE(m(0, 1) == 2.25);
        REQUIRE(m(1, 2) == 6.0);
    }

    SECTION("full-precision round trip through the writer") {
        const fs::path file = dir / "precise.csv";
        const double value = 0.1 + 0.2;  // not representable as a short decimal
        {
            CsvWriter csv(file.string(), {"a", "b"});
            csv.row({value, 1.0 / 3.0});
            csv.close();
        }
        const Eigen::MatrixXd m = read_csv_matrix(file.string());
        REQUIRE(m(0, 0) == value);
        REQUIRE(m(0, 1) == 1.0 / 3.0);
    }

    SECTION("ragged rows are rejected") {
        const fs::path file = dir / "ragged.csv";
        std::ofstream out(file);
        out << "1,2,3\n4,5\n";
        out.close();
        REQUIRE_THROWS_AS(read_csv_matrix(file.string()), ValidationError);
    }

    SECTION("missing files are an i/o failure") {
        REQUIRE_THROWS_AS(read_csv_matrix((dir / "nope.csv").string()), IoError);
    }
}

TEST_CASE("commands write their artifacts and status codes") {
    SECTION("powerflow with no load converges") {
        const fs::path dir = fresh_dir("powerflow");
        RunConfig config = parse_config_text("{}");
        config.output_dir = dir.string();
        REQUIRE(run_command("powerflow", config) == 0);
        REQUIRE(fs::exists(dir / "powerflow.csv"));
        const std::string summary = slurp(dir / "summary.json");
        REQUIRE_THAT(summary, ContainsSubstring("\"converged\": true"));
        REQUIRE_FALSE(fs::exists(dir / "errors.json"));
    }

    SECTION("overloaded powerflow exits with the solver code") {
        const fs::path dir = fresh_dir("powerflow_bad");
        RunConfig config = parse_config_text(R"({"powerflow": {"loads_mw": [100000, 0, 0]}})");
        config.output_dir = dir.string();
        REQUIRE(run_command("powerflow", config) == 2);
        REQUIRE(fs::exists(dir / "errors.json"));
        REQUIRE_THAT(slurp(dir / "errors.json"), ContainsSubstring("non-convergence"));
    }

    SECTION("equilibrium and needs") {
        const fs::path dir = fresh_dir("needs");
        RunConfig config = parse_config_text("{}");
        config.output_dir = dir.string();
        REQUIRE(run_command("needs", config) == 0);
        REQUIRE(fs::exists(dir / "equilibrium.csv"));
        REQUIRE(fs::exists(dir / "needs.csv"));
        REQUIRE(line_count(slurp(dir / "needs.csv")) == 4);  // header + one row per station
    }

    SECTION("one station makes local and global schedules identical") {
        const std::string grid_config = R"({
            "slots": 4,
            "grid": {
                "buses": [{"id": "s", "nominal_kv": 20, "kind": "slack"},
                          {"id": "b", "nominal_kv": 20, "kind": "load", "evcs_index": 0}],
                "lines": [{"from_bus": 0, "to_bus": 1, "length_km": 5,
                           "std_type": "NA2XS2Y 1x240 RM/25 12/20 kV"}]
            },
            "transport": {"paths": [{"length_km": 20, "speed_limit_kmh": 70,
                                     "capacity_vehicles": 3000}]},
            "nonflexible": [[1.0, 2.0, 1.5, 0.5]]
        })";
        const fs::path local_dir = fresh_dir("sched_local");
        const fs::path global_dir = fresh_dir("sched_global");
        RunConfig config = parse_config_text(grid_config);
        config.schedule.method = "local";
        config.output_dir = local_dir.string();
        REQUIRE(run_command("schedule", config) == 0);
        config.schedule.method = "global";
        config.output_dir = global_dir.string();
        REQUIRE(run_command("schedule", config) == 0);
        const std::string local_csv = slurp(local_dir / "schedule.csv");
        std::string global_csv = slurp(global_dir / "schedule.csv");
        // Only the method column may differ.
        size_t pos = 0;
        while ((pos = global_csv.find("global", pos)) != std::string::npos)
            global_csv.replace(pos, 6, "local");
        REQUIRE(local_csv == global_csv);
    }

    SECTION("sweep covers the default 21 tolls and reruns byte-identically") {
        const fs::path dir = fresh_dir("sweep_a");
        const fs::path dir2 = fresh_dir("sweep_b");
        RunConfig config = parse_config_text(R"({"slots": 2})");
        config.output_dir = dir.string();
        REQUIRE(run_command("sweep", config) == 0);
        const std::string costs = slurp(dir / "sweep_costs.csv");
        REQUIRE(line_count(costs) == 1 + 21 * 3);
        REQUIRE(line_count(slurp(dir / "sweep_needs.csv")) == 1 + 21 * 3);

        config.output_dir = dir2.string();
        REQUIRE(run_command("sweep", config) == 0);
        REQUIRE(slurp(dir2 / "sweep_costs.csv") == costs);
        REQUIRE(slurp(dir2 / "sweep_equilibrium.csv") == slurp(dir / "sweep_equilibrium.csv"));
    }

    SECTION("illustrate emits per-station and aggregate tables") {
        const fs::path dir = fresh_dir("illustrate");
        RunConfig config = parse_config_text("{}");
        config.output_dir = dir.string();
        REQUIRE(run_command("illustrate", config) == 0);
        REQUIRE(fs::exists(dir / "illustrate.csv"));
        const std::string aggregate = slurp(dir / "illustrate_aggregate.csv");
        REQUIRE(line_count(aggregate) == 1 + 3 * 3);  // three methods, three slots
    }

    SECTION("bench writes one row per slot count") {
        const fs::path dir = fresh_dir("bench");
        RunConfig config =
            parse_config_text(R"({"bench": {"profile_count": 3, "slot_counts": [2, 4]}})");
        config.output_dir = dir.string();
        REQUIRE(run_command("bench", config) == 0);
        REQUIRE(line_count(slurp(dir / "bench.csv")) == 1 + 2);
    }

    SECTION("missing csv input surfaces as an i/o error") {
        const fs::path dir = fresh_dir("badcsv");
        RunConfig config = parse_config_text(R"({"nonflexible": {"csv": "/nonexistent/x.csv"}})");
        config.output_dir = dir.string();
        REQUIRE(run_command("schedule", config) == 3);
        REQUIRE_THAT(slurp(dir / "errors.json"), ContainsSubstring("io"));
    }

    SECTION("unknown commands are a usage error") {
        const fs::path dir = fresh_dir("unknown");
        RunConfig config = parse_config_text("{}");
        config.output_dir = dir.string();
        REQUIRE(run_command("transmogrify", config) == 1);
        REQUIRE(fs::exists(dir / "errors.json"));
    }
}

TEST_CASE("command line entry point") {
    SECTION("a plain run succeeds") {
        const fs::path dir = fresh_dir("cli_eq");
        REQUIRE(run_argv({"evgrid", "equilibrium", "--out", dir.string()}) == 0);
        REQUIRE(fs::exists(dir / "equilibrium.csv"));
    }

    SECTION("toll window flags shrink the sweep") {
        const fs::path dir = fresh_dir("cli_sweep");
        REQUIRE(run_argv({"evgrid", "sweep", "--out", dir.string(), "--slots", "2", "--toll-min",
                          "0", "--toll-max", "1", "--toll-step", "0.5"}) == 0);
        REQUIRE(line_count(slurp(dir / "sweep_costs.csv")) == 1 + 3 * 3);
    }

    SECTION("bad invocations fail fast") {
        REQUIRE(run_argv({"evgrid", "transmogrify"}) == 1);
        REQUIRE(run_argv({"evgrid"}) == 1);
        REQUIRE(run_argv({"evgrid", "schedule", "--method", "psychic"}) == 1);
        const fs::path dir = fresh_dir("cli_badcfg");
        REQUIRE(run_argv({"evgrid", "equilibrium", "--config", (dir / "none.json").string()}) == 3);
    }

    SECTION("help is not an error") {
        REQUIRE(run_argv({"evgrid", "--help"}) == 0);
    }

    SECTION("method spellings with underscores are accepted") {
        const fs::path dir = fresh_dir("cli_method");
        REQUIRE(run_argv({"evgrid", "schedule", "--method", "grid_aware", "--slots", "2", "--out",
                          dir.string()}) == 0);
        REQUIRE_THAT(slurp(dir / "summary.json"), ContainsSubstring("grid-aware"));
    }
}
