#include "rdinv/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <ostream>

#include "rdinv/errors.hpp"

namespace rdinv {

std::string format_number(double v) {
    if (std::isnan(v)) {
        return "nan";
    }
    if (std::isinf(v)) {
        return v > 0 ? "inf" : "-inf";
    }
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

void write_csv_row(std::ostream& out, std::span<const double> values) {
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i > 0) {
            out << ',';
        }
        out << format_number(values[i]);
    }
    out << '\n';
}

void CsvTable::write(std::ostream& out) const {
    for (const auto& c : comments) {
        out << "# " << c << '\n';
    }
    for (std::size_t i = 0; i < columns.size(); ++i) {
        out << (i > 0 ? "," : "") << columns[i];
    }
    out << '\n';
    for (const auto& r : rows) {
        write_csv_row(out, r);
    }
}

void CsvTable::write(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw ConfigError("cannot open " + path + " for writing");
    }
    write(out);
}

namespace {

double parse_double(std::string_view s, const std::string& path) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
        s.remove_suffix(1);
    }
    if (s == "nan") {
        return std::nan("");
    }
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw ConfigError("malformed number '" + std::string(s) + "' in " + path);
    }
    return v;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
    std::vector<std::string_view> parts;
    std::size_t start = 0;
    for (;;) {
        const auto pos = line.find(sep, start);
        parts.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
        if (pos == std::string_view::npos) {
            break;
        }
        start = pos + 1;
    }
    return parts;
}

}  // namespace

CsvTable read_csv_table(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError("cannot open " + path);
    }
    CsvTable table;
    std::string line;
    bool have_header = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        if (line.front() == '#') {
            std::string_view c(line);
            c.remove_prefix(1);
            if (!c.empty() && c.front() == ' ') {
                c.remove_prefix(1);
            }
            table.comments.emplace_back(c);
            continue;
        }
        const auto parts = split(line, ',');
        if (!have_header) {
            for (auto p : parts) {
                table.columns.emplace_back(p);
            }
            have_header = true;
            continue;
        }
        if (parts.size() != table.columns.size()) {
            throw ConfigError("row width does not match header in " + path);
        }
        std::vector<double> row;
        row.reserve(parts.size());
        for (auto p : parts) {
            row.push_back(parse_double(p, path));
        }
        table.rows.push_back(std::move(row));
    }
    if (!have_header) {
        throw ConfigError("missing header in " + path);
    }
    return table;
}

std::vector<std::pair<std::string, std::string>> parse_comment_fields(std::string_view comment) {
    std::vector<std::pair<std::string, std::string>> out;
    for (auto token : split(comment, ' ')) {
        const auto eq = token.find('=');
        if (token.empty() || eq == std::string_view::npos) {
            continue;
        }
        out.emplace_back(std::string(token.substr(0, eq)), std::string(token.substr(eq + 1)));
    }
    return out;
}

}  // namespace rdinv
