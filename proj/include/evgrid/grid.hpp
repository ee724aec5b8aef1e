#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "evgrid/common.hpp"
#include "evgrid/std_types.hpp"

namespace evgrid {

enum class BusKind { Slack, Load };

struct BusSpec {
    std::string id;
    double nominal_kv = 0.0;
    BusKind kind = BusKind::Load;
    /// Position of this bus in charging-station vectors, if it hosts a station.
    std::optional<int> evcs_index;
};

struct LineSpec {
    int from_bus = -1;
    int to_bus = -1;
    double length_km = 0.0;
    double resistance_ohm_per_km = 0.0;
    double reactance_ohm_per_km = 0.0;
    double shunt_capacitance_nf_per_km = 0.0;
    double ampacity_ka = 0.0;
};

inline LineSpec make_line(int from_bus, int to_bus, double length_km, const LineStdType& type) {
    return {from_bus,          to_bus,           length_km, type.r_ohm_per_km,
            type.x_ohm_per_km, type.c_nf_per_km, type.max_i_ka};
}

struct TransformerSpec {
    int hv_bus = -1;
    int lv_bus = -1;
    double rated_mva = 0.0;
    double hv_kv = 0.0;
    double lv_kv = 0.0;
    double short_circuit_voltage_percent = 0.0;
    double short_circuit_losses_percent = 0.0;
    double iron_losses_kw = 0.0;
    double no_load_current_percent = 0.0;
};

inline TransformerSpec make_transformer(int hv_bus, int lv_bus, const TransformerStdType& type) {
    return {hv_bus,          lv_bus,           type.sn_mva, type.vn_hv_kv, type.vn_lv_kv,
            type.vk_percent, type.vkr_percent, type.pfe_kw, type.i0_percent};
}

/// A radial distribution feeder: one slack bus, pi-model lines, at most one
/// two-winding transformer. Bus voltage bases are the nominal voltages, so a
/// transformer whose rated ratio matches them has no off-nominal tap.
struct GridModel {
    std::vector<BusSpec> buses;
    std::vector<LineSpec> lines;
    std::optional<TransformerSpec> transformer;
    double slack_voltage_pu = 1.0;
    double power_base_mva = 63.0;
    double frequency_hz = 50.0;

    int slack_index() const {
        for (int k = 0; k < static_cast<int>(buses.size()); ++k)
            if (buses[k].kind == BusKind::Slack) return k;
        throw ValidationError("grid has no slack bus");
    }

    /// Bus indices hosting charging stations, ordered by evcs_index.
    std::vector<int> evcs_buses() const {
        int count = 0;
        for (const auto& b : buses)
            if (b.evcs_index) ++count;
        std::vector<int> out(count, -1);
        for (int k = 0; k < static_cast<int>(buses.size()); ++k) {
            const auto& idx = buses[k].evcs_index;
            if (!idx) continue;
            detail::require(*idx >= 0 && *idx < count && out[*idx] < 0,
                            "evcs_index values must be distinct and cover 0..count-1");
            out[*idx] = k;
        }
        return out;
    }

    void validate() const {
        const int n = static_cast<int>(buses.size());
        detail::require(n > 0, "grid needs at least one bus");
        detail::require(power_base_mva > 0, "power_base_mva must be positive");
        detail::require(slack_voltage_pu > 0, "slack_voltage_pu must be positive");
        detail::require(frequency_hz > 0, "frequency_hz must be positive");
        int slacks = 0;
        for (const auto& b : buses) {
            detail::require(!b.id.empty(), "bus id must not be empty");
            detail::require(b.nominal_kv > 0, "bus " + b.id + ": nominal_kv must be positive");
            if (b.kind == BusKind::Slack) {
                ++slacks;
                detail::require(!b.evcs_index, "bus " + b.id + ": slack cannot host a station");
            }
        }
        detail::require(slacks == 1, "grid must have exactly one slack bus");
        for (int a = 0; a < n; ++a)
            for (int b = a + 1; b < n; ++b)
                detail::require(buses[a].id != buses[b].id, "duplicate bus id " + buses[a].id);
        evcs_buses();  // checks the index numbering

        auto check_bus = [&](int k, const std::string& where) {
            detail::require(k >= 0 && k < n, where + ": bus index out of range");
        };
        for (const auto& ln : lines) {
            check_bus(ln.from_bus, "line");
            check_bus(ln.to_bus, "line");
            detail::require(ln.from_bus != ln.to_bus, "line connects a bus to itself");
            detail::require(std::abs(buses[ln.from_bus].nominal_kv - buses[ln.to_bus].nominal_kv) <
                                1e-9 * buses[ln.from_bus].nominal_kv,
                            "line endpoints must share a voltage level");
            detail::require(ln.length_km > 0, "line length_km must be positive");
            detail::require(ln.resistance_ohm_per_km >= 0 && ln.reactance_ohm_per_km >= 0,
                            "line impedance must be non-negative");
            detail::require(ln.resistance_ohm_per_km + ln.reactance_ohm_per_km > 0,
                            "line impedance must be nonzero");
            detail::require(ln.shunt_capacitance_nf_per_km >= 0,
                            "line shunt capacitance must be non-negative");
            detail::require(ln.ampacity_ka >= 0, "line ampacity must be non-negative");
        }
        if (transformer) {
            const auto& tr = *transformer;
            check_bus(tr.hv_bus, "transformer");
            check_bus(tr.lv_bus, "transformer");
            detail::require(tr.hv_bus != tr.lv_bus, "transformer connects a bus to itself");
            detail::require(tr.rated_mva > 0, "transformer rated_mva must be positive");
            detail::require(tr.hv_kv > 0 && tr.lv_kv > 0,
                            "transformer voltage ratings must be positive");
            detail::require(std::abs(buses[tr.hv_bus].nominal_kv - tr.hv_kv) < 1e-9 * tr.hv_kv &&
                                std::abs(buses[tr.lv_bus].nominal_kv - tr.lv_kv) < 1e-9 * tr.lv_kv,
                            "transformer voltage ratings must match its bus voltage levels");
            detail::require(tr.short_circuit_voltage_percent > 0,
                            "transformer short_circuit_voltage_percent must be positive");
            detail::require(tr.short_circuit_losses_percent >= 0 &&
                                tr.short_circuit_losses_percent <
                                    tr.short_circuit_voltage_percent,
                            "transformer winding losses must stay below the short-circuit "
                            "voltage");
            detail::require(tr.iron_losses_kw >= 0 && tr.no_load_current_percent >= 0,
                            "transformer no-load parameters must be non-negative");
            detail::require(tr.iron_losses_kw / 1000.0 / tr.rated_mva <=
                                tr.no_load_current_percent / 100.0 + 1e-12,
                            "transformer iron losses exceed its no-load current");
        }

        // Connected and radial: the edge set must form a spanning tree.
        const int edges = static_cast<int>(lines.size()) + (transformer ? 1 : 0);
        detail::require(edges == n - 1, "grid must be radial (bus count = edge count + 1)");
        std::vector<int> root(n);
        for (int k = 0; k < n; ++k) root[k] = k;
        auto find = [&](int k) {
            while (root[k] != k) k = root[k] = root[root[k]];
            return k;
        };
        auto unite = [&](int a, int b) {
            a = find(a);
            b = find(b);
            detail::require(a != b, "grid contains a loop");
            root[a] = b;
        };
        for (const auto& ln : lines) unite(ln.from_bus, ln.to_bus);
        if (transformer) unite(transformer->hv_bus, transformer->lv_bus);
        for (int k = 1; k < n; ++k)
            detail::require(find(k) == find(0), "grid is not connected");
    }
};

struct PowerFlowSolution {
    Eigen::VectorXcd bus_voltages_pu;
    Eigen::VectorXcd bus_injections_mva;
    /// Apparent power drawn from the external grid at the slack bus.
    double head_apparent_power_mva = 0.0;
    bool converged = false;
    double max_residual_pu = 0.0;
    int iterations = 0;
};

namespace detail {

inline Eigen::MatrixXcd assemble_admittance(const GridModel& grid) {
    using namespace std::complex_literals;
    const int n = static_cast<int>(grid.buses.size());
    Eigen::MatrixXcd Y = Eigen::MatrixXcd::Zero(n, n);
    const double omega = 2.0 * std::numbers::pi * grid.frequency_hz;
    for (const auto& ln : grid.lines) {
        const double kv = grid.buses[ln.from_bus].nominal_kv;
        const double z_base = kv * kv / grid.power_base_mva;
        const std::complex<double> z_ohm =
            std::complex<double>(ln.resistance_ohm_per_km, ln.reactance_ohm_per_km) * ln.length_km;
        const std::complex<double> y_series = z_base / z_ohm;
        const std::complex<double> y_shunt_half =
            0.5i * (omega * ln.shunt_capacitance_nf_per_km * 1e-9 * ln.length_km * z_base);
        Y(ln.from_bus, ln.from_bus) += y_series + y_shunt_half;
        Y(ln.to_bus, ln.to_bus) += y_series + y_shunt_half;
        Y(ln.from_bus, ln.to_bus) -= y_series;
        Y(ln.to_bus, ln.from_bus) -= y_series;
    }
    if (grid.transformer) {
        const auto& tr = *grid.transformer;
        const double r = tr.short_circuit_losses_percent / 100.0;
        const double z = tr.short_circuit_voltage_percent / 100.0;
        const double x = std::sqrt(z * z - r * r);
        const std::complex<double> z_series =
            std::complex<double>(r, x) * (grid.power_base_mva / tr.rated_mva);
        const std::complex<double> y_series = 1.0 / z_series;
        const double g0 = tr.iron_losses_kw / 1000.0 / tr.rated_mva;
        const double y0 = tr.no_load_current_percent / 100.0;
        const double b0 = std::sqrt(std::max(y0 * y0 - g0 * g0, 0.0));
        const std::complex<double> y_mag =
            std::complex<double>(g0, -b0) * (tr.rated_mva / grid.power_base_mva);
        Y(tr.hv_bus, tr.hv_bus) += y_series + y_mag;
        Y(tr.lv_bus, tr.lv_bus) += y_series;
        Y(tr.hv_bus, tr.lv_bus) -= y_series;
        Y(tr.lv_bus, tr.hv_bus) -= y_series;
    }
    return Y;
}

}  // namespace detail

inline Eigen::MatrixXcd build_admittance(const GridModel& grid) {
    grid.validate();
    return detail::assemble_admittance(grid);
}

namespace detail {

/// Everything about a grid that every power-flow solve reuses: the admittance
/// matrix, the slack position and the station-to-bus map.
struct PowerFlowContext {
    const GridModel* grid = nullptr;
    Eigen::MatrixXcd Y;
    std::vector<int> stations;
    std::vector<int> pq;
    int slack = -1;
};

inline PowerFlowContext make_power_flow_context(const GridModel& grid) {
    grid.validate();
    PowerFlowContext ctx;
    ctx.grid = &grid;
    ctx.Y = assemble_admittance(grid);
    ctx.stations = grid.evcs_buses();
    ctx.slack = grid.slack_index();
    const int n = static_cast<int>(grid.buses.size());
    ctx.pq.reserve(n - 1);
    for (int k = 0; k < n; ++k)
        if (k != ctx.slack) ctx.pq.push_back(k);
    return ctx;
}

inline PowerFlowSolution solve_with_context(const PowerFlowContext& ctx,
                                            const Eigen::VectorXd& evcs_active_power_mw,
                                            double tolerance, int max_iterations) {
    const GridModel& grid = *ctx.grid;
    const Eigen::MatrixXcd& Y = ctx.Y;
    const int n = static_cast<int>(grid.buses.size());
    const int m = static_cast<int>(ctx.pq.size());

    Eigen::VectorXd p_spec = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < static_cast<int>(ctx.stations.size()); ++i)
        p_spec[ctx.stations[i]] -= evcs_active_power_mw[i] / grid.power_base_mva;

    Eigen::VectorXd theta = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd V = Eigen::VectorXd::Ones(n);
    V[ctx.slack] = grid.slack_voltage_pu;

    PowerFlowSolution sol;
    Eigen::VectorXcd U(n), S(n);
    auto evaluate = [&]() {
        for (int k = 0; k < n; ++k) U[k] = std::polar(V[k], theta[k]);
        S = U.cwiseProduct((Y * U).conjugate());
    };

    for (int iter = 0;; ++iter) {
        evaluate();
        Eigen::VectorXd f(2 * m);
        for (int a = 0; a < m; ++a) {
            f[a] = p_spec[ctx.pq[a]] - S[ctx.pq[a]].real();
            f[m + a] = -S[ctx.pq[a]].imag();
        }
        sol.max_residual_pu = m > 0 ? f.cwiseAbs().maxCoeff() : 0.0;
        if (!std::isfinite(sol.max_residual_pu)) break;
        if (sol.max_residual_pu < tolerance) {
            sol.converged = true;
            break;
        }
        if (iter == max_iterations) break;

        Eigen::MatrixXd J(2 * m, 2 * m);
        for (int a = 0; a < m; ++a) {
            const int k = ctx.pq[a];
            const double Vk = V[k];
            const double Gkk = Y(k, k).real();
            const double Bkk = Y(k, k).imag();
            J(a, a) = -S[k].imag() - Bkk * Vk * Vk;
            J(a, m + a) = S[k].real() / Vk + Gkk * Vk;
            J(m + a, a) = S[k].real() - Gkk * Vk * Vk;
            J(m + a, m + a) = S[k].imag() / Vk - Bkk * Vk;
            for (int b = 0; b < m; ++b) {
                if (b == a) continue;
                const int mm = ctx.pq[b];
                const double G = Y(k, mm).real();
                const double B = Y(k, mm).imag();
                const double dth = theta[k] - theta[mm];
                const double sd = std::sin(dth);
                const double cd = std::cos(dth);
                J(a, b) = Vk * V[mm] * (G * sd - B * cd);
                J(a, m + b) = Vk * (G * cd + B * sd);
                J(m + a, b) = -Vk * V[mm] * (G * cd + B * sd);
                J(m + a, m + b) = Vk * (G * sd - B * cd);
            }
        }
        const Eigen::VectorXd dx = J.partialPivLu().solve(f);
        if (!dx.allFinite()) break;
        bool sane = true;
        for (int a = 0; a < m; ++a) {
            theta[ctx.pq[a]] += dx[a];
            V[ctx.pq[a]] += dx[m + a];
            sane = sane && std::isfinite(V[ctx.pq[a]]) && V[ctx.pq[a]] > 0;
        }
        sol.iterations = iter + 1;
        if (!sane) break;
    }

    evaluate();
    sol.bus_voltages_pu = U;
    sol.bus_injections_mva = S * grid.power_base_mva;
    sol.head_apparent_power_mva = std::abs(S[ctx.slack]) * grid.power_base_mva;
    return sol;
}

}  // namespace detail

/// Solves the network equations with the stations drawing the given active
/// power at unity power factor and every other bus unloaded. Newton-Raphson
/// in polar coordinates from a flat start; non-convergence is reported through
/// the result, not thrown.
inline PowerFlowSolution solve_power_flow(const GridModel& grid,
                                          const Eigen::VectorXd& evcs_active_power_mw,
                                          double tolerance = 1e-8, int max_iterations = 50) {
    detail::require(tolerance > 0, "tolerance must be positive");
    detail::require(max_iterations > 0, "max_iterations must be positive");
    const auto ctx = detail::make_power_flow_context(grid);
    detail::require(evcs_active_power_mw.size() == static_cast<Eigen::Index>(ctx.stations.size()),
                    "one active power value per charging station expected");
    detail::require(evcs_active_power_mw.allFinite(), "station powers must be finite");
    return detail::solve_with_context(ctx, evcs_active_power_mw, tolerance, max_iterations);
}

/// Apparent power drawn at the feeder head, in MVA.
inline double head_apparent_power(const PowerFlowSolution& solution) {
    detail::require(solution.converged, "head_apparent_power needs a converged solution");
    return solution.head_apparent_power_mva;
}

/// The five-bus feeder used throughout: an external 110 kV grid behind a
/// 63 MVA transformer, a 20 kV head bus, and three charging stations. Station
/// 1 sits 10 km from the head on its own line; stations 2 and 3 share a
/// branch, 5 km to station 2 and 5 km more to station 3.
inline GridModel build_reference_grid() {
    const auto& cable = line_std_type("NA2XS2Y 1x240 RM/25 12/20 kV");
    const auto& trafo = transformer_std_type("63 MVA 110/20 kV");
    GridModel grid;
    grid.buses = {
        {"external-grid", 110.0, BusKind::Slack, std::nullopt},
        {"feeder-head", 20.0, BusKind::Load, std::nullopt},
        {"evcs-1", 20.0, BusKind::Load, 0},
        {"evcs-2", 20.0, BusKind::Load, 1},
        {"evcs-3", 20.0, BusKind::Load, 2},
    };
    grid.lines = {
        make_line(1, 2, 10.0, cable),
        make_line(1, 3, 5.0, cable),
        make_line(3, 4, 5.0, cable),
    };
    grid.transformer = make_transformer(0, 1, trafo);
    grid.power_base_mva = trafo.sn_mva;
    return grid;
}

}  // namespace evgrid
