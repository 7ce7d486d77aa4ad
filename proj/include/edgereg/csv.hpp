#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "edgereg/errors.hpp"

namespace edgereg {

// Minimal CSV writer for logs and analytics tables. Cells are written verbatim;
// callers keep commas/newlines out of cell content.
class CsvWriter {
  public:
    CsvWriter(const std::string& path, const std::vector<std::string>& header)
        : out_(path, std::ios::binary) {
        if (!out_) throw io_error("csv: cannot open " + path);
        row(header);
    }

    void row(const std::vector<std::string>& cells) {
        for (size_t i = 0; i < cells.size(); ++i) {
            if (i) out_ << ',';
            out_ << cells[i];
        }
        out_ << '\n';
        out_.flush();
    }

    // Raw line escape hatch for sidecar rows that are not part of the table.
    void line(const std::string& text) {
        out_ << text << '\n';
        out_.flush();
    }

  private:
    std::ofstream out_;
};

inline std::string csv_num(double v, int precision = 9) {
    std::ostringstream os;
    os.precision(precision);
    os << v;
    return os.str();
}

inline std::vector<std::vector<std::string>> read_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("csv: cannot open " + path);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.push_back("");
        rows.push_back(std::move(cells));
    }
    return rows;
}

} // namespace edgereg
