#pragma once

#include <string>
#include <vector>

namespace mbsma {

// Minimal CSV support: comma separated, no quoting (ids and numbers only).
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int col(const std::string& name) const;  // -1 if absent
    int col_required(const std::string& name, const std::string& file) const;
};

CsvTable read_csv(const std::string& path);
void write_csv(const std::string& path, const CsvTable& table);

// shortest decimal string that round-trips to the same double
std::string format_double(double x);
double parse_double(const std::string& s, const std::string& context);
long long parse_int(const std::string& s, const std::string& context);

}  // namespace mbsma
