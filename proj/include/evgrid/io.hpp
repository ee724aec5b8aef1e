#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "evgrid/common.hpp"

namespace evgrid {

namespace detail {

inline std::string csv_escape(const std::string& cell) {
    if (cell.find_first_of(",\"\n") == std::string::npos) return cell;
    std::string out = "\"";
    for (char c : cell) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

}  // namespace detail

/// A CSV cell: numbers are rendered with full round-trip precision.
struct Cell {
    std::string text;
    Cell(const std::string& s) : text(s) {}
    Cell(const char* s) : text(s) {}
    Cell(double v) : text(detail::format_double(v)) {}
    Cell(int v) : text(std::to_string(v)) {}
    Cell(long v) : text(std::to_string(v)) {}
    Cell(unsigned long v) : text(std::to_string(v)) {}
    Cell(unsigned long long v) : text(std::to_string(v)) {}
};

class CsvWriter {
public:
    CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header)
        : path_(path.string()), out_(path) {
        if (!out_) throw IoError("cannot open " + path_ + " for writing");
        std::vector<Cell> cells(header.begin(), header.end());
        row(cells);
    }

    void row(const std::vector<Cell>& cells) {
        for (std::size_t k = 0; k < cells.size(); ++k) {
            if (k) out_ << ',';
            out_ << detail::csv_escape(cells[k].text);
        }
        out_ << '\n';
        if (!out_) throw IoError("write failed on " + path_);
    }

    void close() {
        out_.close();
        if (!out_) throw IoError("close failed on " + path_);
    }

private:
    std::string path_;
    std::ofstream out_;
};

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << content;
    out.close();
    if (!out) throw IoError("write failed on " + path.string());
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::ordered_json& j) {
    write_text_file(path, j.dump(2) + "\n");
}

/// Reads a numeric matrix from CSV. Lines starting with '#' are skipped; a
/// first row that is not fully numeric is treated as a header and skipped.
inline Eigen::MatrixXd read_csv_matrix(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    bool first_data_line = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        std::vector<double> values;
        bool numeric = true;
        std::istringstream row(line);
        std::string cell;
        while (std::getline(row, cell, ',')) {
            try {
                std::size_t used = 0;
                values.push_back(std::stod(cell, &used));
                while (used < cell.size() && std::isspace(static_cast<unsigned char>(cell[used])))
                    ++used;
                if (used != cell.size()) numeric = false;
            } catch (const std::exception&) {
                numeric = false;
            }
            if (!numeric) break;
        }
        if (!numeric) {
            if (first_data_line) {
                first_data_line = false;
                continue;
            }
            throw ValidationError(path + ": non-numeric cell in row " +
                                  std::to_string(rows.size() + 1));
        }
        first_data_line = false;
        if (!rows.empty() && rows.front().size() != values.size())
            throw ValidationError(path + ": rows have different lengths");
        rows.push_back(std::move(values));
    }
    if (rows.empty()) throw ValidationError(path + ": no numeric rows");
    Eigen::MatrixXd m(rows.size(), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t t = 0; t < rows.front().size(); ++t) m(i, t) = rows[i][t];
    return m;
}

}  // namespace evgrid
