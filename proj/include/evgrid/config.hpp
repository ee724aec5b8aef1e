#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "evgrid/common.hpp"
#include "evgrid/experiments.hpp"
#include "evgrid/grid.hpp"
#include "evgrid/scheduling.hpp"
#include "evgrid/traffic.hpp"

namespace evgrid {

struct SweepOptions {
    double toll_min = 0.0;
    double toll_max = 5.0;
    double toll_step = 0.25;
};

struct BenchOptions {
    int profile_count = 200;
    std::vector<int> slot_counts = {2, 4, 8};
    double toll = 4.0;
};

struct ScheduleOptions {
    std::string method = "global";  // local | global | grid-aware
    double toll = 0.0;
};

struct IllustrateOptions {
    double toll = 4.0;
    int slots = 3;
};

struct PowerflowOptions {
    std::vector<double> loads_mw;  // empty = no station load
};

/// Everything a command needs: the commuting scenario, the grid, the
/// nonflexible consumption and per-command options. Defaults reproduce the
/// reference setup (three paths of 30/20/20 km at 50/50/70 km/h, 3000
/// vehicles half electric, the five-bus feeder, 30 MWh nonflexible energy).
struct RunConfig {
    int version = 1;
    std::uint64_t seed = 1;
    std::string output_dir = "out";
    int slots = 8;
    std::vector<double> weights;  // empty = constant 1
    TransportScenario transport = default_scenario();
    bool use_reference_grid = true;
    GridModel grid = build_reference_grid();
    std::string nonflexible_source = "default";  // default | inline | csv
    Eigen::MatrixXd nonflexible_inline;
    std::string nonflexible_csv;
    double nonflexible_total_mwh = 30.0;
    SweepOptions sweep;
    BenchOptions bench;
    ScheduleOptions schedule;
    IllustrateOptions illustrate;
    PowerflowOptions powerflow;

    SlotWeights slot_weights(int number_of_slots) const {
        if (weights.empty()) return SlotWeights::constant(number_of_slots);
        detail::require(static_cast<int>(weights.size()) == number_of_slots,
                        "weights length must match the slot count");
        SlotWeights w{Eigen::Map<const Eigen::VectorXd>(weights.data(), weights.size())};
        w.validate();
        return w;
    }

    void validate() const {
        detail::require(version == 1, "config version must be 1");
        detail::require(slots >= 1, "slots must be >= 1");
        if (!weights.empty()) slot_weights(slots);
        transport.validate();
        grid.validate();
        detail::require(nonflexible_source == "default" || nonflexible_source == "inline" ||
                            nonflexible_source == "csv",
                        "nonflexible_source must be default, inline or csv");
        if (nonflexible_source == "inline")
            detail::require(nonflexible_inline.size() > 0 &&
                                (nonflexible_inline.array() >= 0).all(),
                            "inline nonflexible profile must be non-negative and non-empty");
        if (nonflexible_source == "csv")
            detail::require(!nonflexible_csv.empty(), "nonflexible csv path must be non-empty");
        detail::require(nonflexible_total_mwh > 0, "nonflexible_total_mwh must be positive");
        detail::require(sweep.toll_min >= 0, "sweep.toll_min must be >= 0");
        detail::require(sweep.toll_max >= sweep.toll_min,
                        "sweep.toll_max must be >= sweep.toll_min");
        detail::require(sweep.toll_step > 0, "sweep.toll_step must be positive");
        detail::require(bench.profile_count >= 1, "bench.profile_count must be >= 1");
        detail::require(!bench.slot_counts.empty(), "bench.slot_counts must be non-empty");
        for (int t : bench.slot_counts)
            detail::require(t >= 1, "bench.slot_counts entries must be >= 1");
        detail::require(bench.toll >= 0, "bench.toll must be >= 0");
        detail::require(schedule.method == "local" || schedule.method == "global" ||
                            schedule.method == "grid-aware",
                        "schedule.method must be local, global or grid-aware");
        detail::require(schedule.toll >= 0, "schedule.toll must be >= 0");
        detail::require(illustrate.toll >= 0, "illustrate.toll must be >= 0");
        detail::require(illustrate.slots >= 1, "illustrate.slots must be >= 1");
        for (double mw : powerflow.loads_mw)
            detail::require(std::isfinite(mw), "powerflow.loads_mw entries must be finite");
    }
};

namespace detail {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

inline void reject_unknown_keys(const json& j, const std::set<std::string>& allowed,
                                const std::string& context) {
    for (const auto& [key, value] : j.items())
        if (!allowed.count(key))
            throw ValidationError("unknown key \"" + key + "\" in " + context);
}

inline double as_number(const json& j, const std::string& context) {
    if (!j.is_number()) throw ValidationError(context + " must be a number");
    return j.get<double>();
}

inline int as_int(const json& j, const std::string& context) {
    if (!j.is_number_integer()) throw ValidationError(context + " must be an integer");
    return j.get<int>();
}

inline std::string as_string(const json& j, const std::string& context) {
    if (!j.is_string()) throw ValidationError(context + " must be a string");
    return j.get<std::string>();
}

inline std::string normalize_method(std::string method) {
    for (char& c : method)
        if (c == '_') c = '-';
    return method;
}

inline TransportScenario parse_transport(const json& j) {
    reject_unknown_keys(j, {"total_vehicles", "time_value", "classes", "paths", "toll_path3"},
                        "transport");
    TransportScenario scenario = default_scenario();
    if (j.contains("total_vehicles"))
        scenario.total_vehicles = as_number(j["total_vehicles"], "transport.total_vehicles");
    if (j.contains("time_value"))
        scenario.time_value = as_number(j["time_value"], "transport.time_value");
    if (j.contains("classes")) {
        if (!j["classes"].is_array())
            throw ValidationError("transport.classes must be an array");
        scenario.classes.clear();
        int k = 0;
        for (const auto& cj : j["classes"]) {
            const std::string where = "transport.classes[" + std::to_string(k++) + "]";
            reject_unknown_keys(
                cj, {"id", "population_share", "consumption_per_km", "energy_unit_price"}, where);
            VehicleClassSpec cls;
            cls.id = as_string(cj.at("id"), where + ".id");
            cls.population_share =
                as_number(cj.at("population_share"), where + ".population_share");
            cls.consumption_per_km =
                as_number(cj.at("consumption_per_km"), where + ".consumption_per_km");
            cls.energy_unit_price =
                as_number(cj.at("energy_unit_price"), where + ".energy_unit_price");
            scenario.classes.push_back(cls);
        }
    }
    if (j.contains("paths")) {
        if (!j["paths"].is_array()) throw ValidationError("transport.paths must be an array");
        scenario.paths.clear();
        int k = 0;
        for (const auto& pj : j["paths"]) {
            const std::string where = "transport.paths[" + std::to_string(k++) + "]";
            reject_unknown_keys(
                pj, {"length_km", "speed_limit_kmh", "capacity_vehicles", "toll_per_class"},
                where);
            PathSpec path;
            path.length_km = as_number(pj.at("length_km"), where + ".length_km");
            path.speed_limit_kmh = as_number(pj.at("speed_limit_kmh"), where + ".speed_limit_kmh");
            path.capacity_vehicles =
                as_number(pj.at("capacity_vehicles"), where + ".capacity_vehicles");
            if (pj.contains("toll_per_class")) {
                if (!pj["toll_per_class"].is_object())
                    throw ValidationError(where + ".toll_per_class must be an object");
                for (const auto& [cls, toll] : pj["toll_per_class"].items())
                    path.toll_per_class[cls] =
                        as_number(toll, where + ".toll_per_class." + cls);
            }
            scenario.paths.push_back(path);
        }
    }
    // Shortcut for the most common override: a toll on the last path, charged
    // to every class alike.
    if (j.contains("toll_path3")) {
        const double toll = as_number(j["toll_path3"], "transport.toll_path3");
        if (scenario.paths.empty())
            throw ValidationError("transport.toll_path3 needs at least one path");
        for (const auto& cls : scenario.classes)
            scenario.paths.back().toll_per_class[cls.id] = toll;
    }
    return scenario;
}

inline GridModel parse_grid(const json& j) {
    reject_unknown_keys(
        j, {"power_base_mva", "slack_voltage_pu", "frequency_hz", "buses", "lines", "transformer"},
        "grid");
    GridModel grid;
    if (j.contains("power_base_mva"))
        grid.power_base_mva = as_number(j["power_base_mva"], "grid.power_base_mva");
    if (j.contains("slack_voltage_pu"))
        grid.slack_voltage_pu = as_number(j["slack_voltage_pu"], "grid.slack_voltage_pu");
    if (j.contains("frequency_hz"))
        grid.frequency_hz = as_number(j["frequency_hz"], "grid.frequency_hz");
    if (!j.contains("buses") || !j["buses"].is_array())
        throw ValidationError("grid.buses must be an array");
    int k = 0;
    for (const auto& bj : j["buses"]) {
        const std::string where = "grid.buses[" + std::to_string(k++) + "]";
        reject_unknown_keys(bj, {"id", "nominal_kv", "kind", "evcs_index"}, where);
        BusSpec bus;
        bus.id = as_string(bj.at("id"), where + ".id");
        bus.nominal_kv = as_number(bj.at("nominal_kv"), where + ".nominal_kv");
        const std::string kind = as_string(bj.at("kind"), where + ".kind");
        if (kind == "slack")
            bus.kind = BusKind::Slack;
        else if (kind == "load")
            bus.kind = BusKind::Load;
        else
            throw ValidationError(where + ".kind must be slack or load");
        if (bj.contains("evcs_index")) bus.evcs_index = as_int(bj["evcs_index"], where + ".evcs_index");
        grid.buses.push_back(bus);
    }
    if (j.contains("lines")) {
        if (!j["lines"].is_array()) throw ValidationError("grid.lines must be an array");
        k = 0;
        for (const auto& lj : j["lines"]) {
            const std::string where = "grid.lines[" + std::to_string(k++) + "]";
            reject_unknown_keys(lj,
                                {"from_bus", "to_bus", "length_km", "std_type",
                                 "resistance_ohm_per_km", "reactance_ohm_per_km",
                                 "shunt_capacitance_nf_per_km", "ampacity_ka"},
                                where);
            const int from = as_int(lj.at("from_bus"), where + ".from_bus");
            const int to = as_int(lj.at("to_bus"), where + ".to_bus");
            const double length = as_number(lj.at("length_km"), where + ".length_km");
            LineSpec line;
            if (lj.contains("std_type")) {
                line = make_line(from, to, length,
                                 line_std_type(as_string(lj["std_type"], where + ".std_type")));
            } else {
                line.from_bus = from;
                line.to_bus = to;
                line.length_km = length;
                line.resistance_ohm_per_km =
                    as_number(lj.at("resistance_ohm_per_km"), where + ".resistance_ohm_per_km");
                line.reactance_ohm_per_km =
                    as_number(lj.at("reactance_ohm_per_km"), where + ".reactance_ohm_per_km");
                if (lj.contains("shunt_capacitance_nf_per_km"))
                    line.shunt_capacitance_nf_per_km = as_number(
                        lj["shunt_capacitance_nf_per_km"], where + ".shunt_capacitance_nf_per_km");
                if (lj.contains("ampacity_ka"))
                    line.ampacity_ka = as_number(lj["ampacity_ka"], where + ".ampacity_ka");
            }
            grid.lines.push_back(line);
        }
    }
    if (j.contains("transformer")) {
        const auto& tj = j["transformer"];
        const std::string where = "grid.transformer";
        reject_unknown_keys(tj,
                            {"hv_bus", "lv_bus", "std_type", "rated_mva", "hv_kv", "lv_kv",
                             "short_circuit_voltage_percent", "short_circuit_losses_percent",
                             "iron_losses_kw", "no_load_current_percent"},
                            where);
        const int hv = as_int(tj.at("hv_bus"), where + ".hv_bus");
        const int lv = as_int(tj.at("lv_bus"), where + ".lv_bus");
        if (tj.contains("std_type")) {
            grid.transformer = make_transformer(
                hv, lv, transformer_std_type(as_string(tj["std_type"], where + ".std_type")));
        } else {
            TransformerSpec tr;
            tr.hv_bus = hv;
            tr.lv_bus = lv;
            tr.rated_mva = as_number(tj.at("rated_mva"), where + ".rated_mva");
            tr.hv_kv = as_number(tj.at("hv_kv"), where + ".hv_kv");
            tr.lv_kv = as_number(tj.at("lv_kv"), where + ".lv_kv");
            tr.short_circuit_voltage_percent = as_number(
                tj.at("short_circuit_voltage_percent"), where + ".short_circuit_voltage_percent");
            tr.short_circuit_losses_percent = as_number(
                tj.at("short_circuit_losses_percent"), where + ".short_circuit_losses_percent");
            if (tj.contains("iron_losses_kw"))
                tr.iron_losses_kw = as_number(tj["iron_losses_kw"], where + ".iron_losses_kw");
            if (tj.contains("no_load_current_percent"))
                tr.no_load_current_percent =
                    as_number(tj["no_load_current_percent"], where + ".no_load_current_percent");
            grid.transformer = tr;
        }
    }
    return grid;
}

}  // namespace detail

inline RunConfig parse_config_text(const std::string& text) {
    detail::json j;
    try {
        j = detail::json::parse(text);
    } catch (const detail::json::parse_error& e) {
        throw ValidationError(std::string("config parse error: ") + e.what());
    }
    if (!j.is_object()) throw ValidationError("config root must be an object");
    detail::reject_unknown_keys(
        j,
        {"version", "seed", "output_dir", "slots", "weights", "transport", "grid", "nonflexible",
         "nonflexible_total_mwh", "sweep", "bench", "schedule", "illustrate", "powerflow"},
        "config");

    RunConfig config;
    if (j.contains("version")) config.version = detail::as_int(j["version"], "version");
    if (j.contains("seed")) {
        if (!j["seed"].is_number_integer() || j["seed"].get<std::int64_t>() < 0)
            throw ValidationError("seed must be a non-negative integer");
        config.seed = j["seed"].get<std::uint64_t>();
    }
    if (j.contains("output_dir")) config.output_dir = detail::as_string(j["output_dir"], "output_dir");
    if (j.contains("slots")) config.slots = detail::as_int(j["slots"], "slots");
    if (j.contains("weights")) {
        if (!j["weights"].is_array()) throw ValidationError("weights must be an array");
        for (const auto& w : j["weights"])
            config.weights.push_back(detail::as_number(w, "weights[]"));
    }
    if (j.contains("transport")) config.transport = detail::parse_transport(j["transport"]);
    if (j.contains("grid")) {
        if (j["grid"].is_string()) {
            const std::string preset = j["grid"].get<std::string>();
            if (preset != "reference-grid")
                throw ValidationError("unknown grid preset \"" + preset + "\"");
            config.use_reference_grid = true;
            config.grid = build_reference_grid();
        } else if (j["grid"].is_object()) {
            config.use_reference_grid = false;
            config.grid = detail::parse_grid(j["grid"]);
        } else {
            throw ValidationError("grid must be a preset name or an object");
        }
    }
    if (j.contains("nonflexible")) {
        const auto& nf = j["nonflexible"];
        if (nf.is_string()) {
            if (nf.get<std::string>() != "default")
                throw ValidationError("nonflexible must be \"default\", a matrix or {\"csv\": path}");
            config.nonflexible_source = "default";
        } else if (nf.is_array()) {
            config.nonflexible_source = "inline";
            const int rows = static_cast<int>(nf.size());
            int cols = -1;
            for (int i = 0; i < rows; ++i) {
                if (!nf[i].is_array()) throw ValidationError("nonflexible rows must be arrays");
                if (cols < 0)
                    cols = static_cast<int>(nf[i].size());
                else if (static_cast<int>(nf[i].size()) != cols)
                    throw ValidationError("nonflexible rows must have equal lengths");
            }
            if (rows == 0 || cols <= 0) throw ValidationError("nonflexible matrix must be non-empty");
            config.nonflexible_inline.resize(rows, cols);
            for (int i = 0; i < rows; ++i)
                for (int t = 0; t < cols; ++t)
                    config.nonflexible_inline(i, t) =
                        detail::as_number(nf[i][t], "nonflexible[][]");
        } else if (nf.is_object()) {
            detail::reject_unknown_keys(nf, {"csv"}, "nonflexible");
            config.nonflexible_source = "csv";
            config.nonflexible_csv = detail::as_string(nf.at("csv"), "nonflexible.csv");
        } else {
            throw ValidationError("nonflexible must be \"default\", a matrix or {\"csv\": path}");
        }
    }
    if (j.contains("nonflexible_total_mwh"))
        config.nonflexible_total_mwh =
            detail::as_number(j["nonflexible_total_mwh"], "nonflexible_total_mwh");
    if (j.contains("sweep")) {
        detail::reject_unknown_keys(j["sweep"], {"toll_min", "toll_max", "toll_step"}, "sweep");
        if (j["sweep"].contains("toll_min"))
            config.sweep.toll_min = detail::as_number(j["sweep"]["toll_min"], "sweep.toll_min");
        if (j["sweep"].contains("toll_max"))
            config.sweep.toll_max = detail::as_number(j["sweep"]["toll_max"], "sweep.toll_max");
        if (j["sweep"].contains("toll_step"))
            config.sweep.toll_step = detail::as_number(j["sweep"]["toll_step"], "sweep.toll_step");
    }
    if (j.contains("bench")) {
        detail::reject_unknown_keys(j["bench"], {"profile_count", "slot_counts", "toll"}, "bench");
        if (j["bench"].contains("profile_count"))
            config.bench.profile_count =
                detail::as_int(j["bench"]["profile_count"], "bench.profile_count");
        if (j["bench"].contains("slot_counts")) {
            if (!j["bench"]["slot_counts"].is_array())
                throw ValidationError("bench.slot_counts must be an array");
            config.bench.slot_counts.clear();
            for (const auto& t : j["bench"]["slot_counts"])
                config.bench.slot_counts.push_back(detail::as_int(t, "bench.slot_counts[]"));
        }
        if (j["bench"].contains("toll"))
            config.bench.toll = detail::as_number(j["bench"]["toll"], "bench.toll");
    }
    if (j.contains("schedule")) {
        detail::reject_unknown_keys(j["schedule"], {"method", "toll"}, "schedule");
        if (j["schedule"].contains("method"))
            config.schedule.method = detail::normalize_method(
                detail::as_string(j["schedule"]["method"], "schedule.method"));
        if (j["schedule"].contains("toll"))
            config.schedule.toll = detail::as_number(j["schedule"]["toll"], "schedule.toll");
    }
    if (j.contains("illustrate")) {
        detail::reject_unknown_keys(j["illustrate"], {"toll", "slots"}, "illustrate");
        if (j["illustrate"].contains("toll"))
            config.illustrate.toll = detail::as_number(j["illustrate"]["toll"], "illustrate.toll");
        if (j["illustrate"].contains("slots"))
            config.illustrate.slots = detail::as_int(j["illustrate"]["slots"], "illustrate.slots");
    }
    if (j.contains("powerflow")) {
        detail::reject_unknown_keys(j["powerflow"], {"loads_mw"}, "powerflow");
        if (j["powerflow"].contains("loads_mw")) {
            if (!j["powerflow"]["loads_mw"].is_array())
                throw ValidationError("powerflow.loads_mw must be an array");
            for (const auto& mw : j["powerflow"]["loads_mw"])
                config.powerflow.loads_mw.push_back(
                    detail::as_number(mw, "powerflow.loads_mw[]"));
        }
    }
    config.validate();
    return config;
}

inline RunConfig parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    if (in.bad()) throw IoError("cannot read config file " + path);
    try {
        return parse_config_text(buffer.str());
    } catch (const ValidationError& e) {
        throw ValidationError(path + ": " + e.what());
    }
}

inline std::string serialize_config(const RunConfig& config) {
    using detail::ordered_json;
    ordered_json j;
    j["version"] = config.version;
    j["seed"] = config.seed;
    j["output_dir"] = config.output_dir;
    j["slots"] = config.slots;
    if (!config.weights.empty()) j["weights"] = config.weights;
    ordered_json transport;
    transport["total_vehicles"] = config.transport.total_vehicles;
    transport["time_value"] = config.transport.time_value;
    transport["classes"] = ordered_json::array();
    for (const auto& cls : config.transport.classes)
        transport["classes"].push_back({{"id", cls.id},
                                        {"population_share", cls.population_share},
                                        {"consumption_per_km", cls.consumption_per_km},
                                        {"energy_unit_price", cls.energy_unit_price}});
    transport["paths"] = ordered_json::array();
    for (const auto& path : config.transport.paths) {
        ordered_json pj = {{"length_km", path.length_km},
                           {"speed_limit_kmh", path.speed_limit_kmh},
                           {"capacity_vehicles", path.capacity_vehicles}};
        if (!path.toll_per_class.empty()) {
            ordered_json tolls;
            for (const auto& [cls, toll] : path.toll_per_class) tolls[cls] = toll;
            pj["toll_per_class"] = tolls;
        }
        transport["paths"].push_back(pj);
    }
    j["transport"] = transport;
    if (config.use_reference_grid) {
        j["grid"] = "reference-grid";
    } else {
        ordered_json grid;
        grid["power_base_mva"] = config.grid.power_base_mva;
        grid["slack_voltage_pu"] = config.grid.slack_voltage_pu;
        grid["frequency_hz"] = config.grid.frequency_hz;
        grid["buses"] = ordered_json::array();
        for (const auto& bus : config.grid.buses) {
            ordered_json bj = {{"id", bus.id},
                               {"nominal_kv", bus.nominal_kv},
                               {"kind", bus.kind == BusKind::Slack ? "slack" : "load"}};
            if (bus.evcs_index) bj["evcs_index"] = *bus.evcs_index;
            grid["buses"].push_back(bj);
        }
        grid["lines"] = ordered_json::array();
        for (const auto& line : config.grid.lines)
            grid["lines"].push_back(
                {{"from_bus", line.from_bus},
                 {"to_bus", line.to_bus},
                 {"length_km", line.length_km},
                 {"resistance_ohm_per_km", line.resistance_ohm_per_km},
                 {"reactance_ohm_per_km", line.reactance_ohm_per_km},
                 {"shunt_capacitance_nf_per_km", line.shunt_capacitance_nf_per_km},
                 {"ampacity_ka", line.ampacity_ka}});
        if (config.grid.transformer) {
            const auto& tr = *config.grid.transformer;
            grid["transformer"] = {
                {"hv_bus", tr.hv_bus},
                {"lv_bus", tr.lv_bus},
                {"rated_mva", tr.rated_mva},
                {"hv_kv", tr.hv_kv},
                {"lv_kv", tr.lv_kv},
                {"short_circuit_voltage_percent", tr.short_circuit_voltage_percent},
                {"short_circuit_losses_percent", tr.short_circuit_losses_percent},
                {"iron_losses_kw", tr.iron_losses_kw},
                {"no_load_current_percent", tr.no_load_current_percent}};
        }
        j["grid"] = grid;
    }
    if (config.nonflexible_source == "default") {
        j["nonflexible"] = "default";
    } else if (config.nonflexible_source == "inline") {
        ordered_json rows = ordered_json::array();
        for (Eigen::Index i = 0; i < config.nonflexible_inline.rows(); ++i) {
            ordered_json row = ordered_json::array();
            for (Eigen::Index t = 0; t < config.nonflexible_inline.cols(); ++t)
                row.push_back(config.nonflexible_inline(i, t));
            rows.push_back(row);
        }
        j["nonflexible"] = rows;
    } else {
        j["nonflexible"] = {{"csv", config.nonflexible_csv}};
    }
    j["nonflexible_total_mwh"] = config.nonflexible_total_mwh;
    j["sweep"] = {{"toll_min", config.sweep.toll_min},
                  {"toll_max", config.sweep.toll_max},
                  {"toll_step", config.sweep.toll_step}};
    j["bench"] = {{"profile_count", config.bench.profile_count},
                  {"slot_counts", config.bench.slot_counts},
                  {"toll", config.bench.toll}};
    j["schedule"] = {{"method", config.schedule.method}, {"toll", config.schedule.toll}};
    j["illustrate"] = {{"toll", config.illustrate.toll}, {"slots", config.illustrate.slots}};
    if (!config.powerflow.loads_mw.empty())
        j["powerflow"] = {{"loads_mw", config.powerflow.loads_mw}};
    return j.dump(2) + "\n";
}

}  // namespace evgrid
