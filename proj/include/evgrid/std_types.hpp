#pragma once

#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "evgrid/common.hpp"
#include "evgrid/std_types_data.hpp"

namespace evgrid {

struct LineStdType {
    std::string name;
    double r_ohm_per_km = 0.0;
    double x_ohm_per_km = 0.0;
    double c_nf_per_km = 0.0;
    double max_i_ka = 0.0;
};

struct TransformerStdType {
    std::string name;
    double sn_mva = 0.0;
    double vn_hv_kv = 0.0;
    double vn_lv_kv = 0.0;
    double vk_percent = 0.0;   // short-circuit voltage
    double vkr_percent = 0.0;  // short-circuit losses as % of rating
    double pfe_kw = 0.0;       // iron losses
    double i0_percent = 0.0;   // no-load current
};

namespace detail {

struct StdTypeTable {
    std::vector<LineStdType> lines;
    std::vector<TransformerStdType> transformers;
};

inline StdTypeTable parse_std_types(std::string_view csv) {
    StdTypeTable table;
    std::istringstream in{std::string(csv)};
    std::string line;
    bool header_seen = false;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (!header_seen) {  // column header row
            header_seen = true;
            continue;
        }
        std::vector<std::string> cells;
        std::istringstream row(line);
        std::string cell;
        while (std::getline(row, cell, ',')) cells.push_back(cell);
        cells.resize(9);
        auto num = [&](int idx) { return cells[idx].empty() ? 0.0 : std::stod(cells[idx]); };
        if (cells[0] == "line") {
            table.lines.push_back({cells[1], num(2), num(3), num(4), num(5)});
        } else if (cells[0] == "trafo") {
            table.transformers.push_back(
                {cells[1], num(2), num(3), num(4), num(5), num(6), num(7), num(8)});
        } else {
            throw ValidationError("std_types: unknown kind \"" + cells[0] + "\"");
        }
    }
    return table;
}

inline const StdTypeTable& std_type_table() {
    static const StdTypeTable table = parse_std_types(kStdTypesCsv);
    return table;
}

}  // namespace detail

inline const LineStdType& line_std_type(const std::string& name) {
    for (const auto& t : detail::std_type_table().lines)
        if (t.name == name) return t;
    throw ValidationError("unknown line standard type \"" + name + "\"");
}

inline const TransformerStdType& transformer_std_type(const std::string& name) {
    for (const auto& t : detail::std_type_table().transformers)
        if (t.name == name) return t;
    throw ValidationError("unknown transformer standard type \"" + name + "\"");
}

}  // namespace evgrid
