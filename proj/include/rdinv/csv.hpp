#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rdinv {

/// Shortest round-trip decimal representation of a double.
std::string format_number(double v);

/// Writes `v0,v1,...` followed by LF.
void write_csv_row(std::ostream& out, std::span<const double> values);

/// A table with one header line (`name1,name2,...`) and numeric rows.
struct CsvTable {
    std::vector<std::string> comments;  // written as `# ...` lines before the header
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;

    void write(std::ostream& out) const;
    void write(const std::string& path) const;
};

/// Reads `#` comment lines, a header, and numeric rows.
CsvTable read_csv_table(const std::string& path);

/// Parses `key=value` tokens of a `# k1=v1 k2=v2` comment line.
std::vector<std::pair<std::string, std::string>> parse_comment_fields(std::string_view comment);

}  // namespace rdinv
