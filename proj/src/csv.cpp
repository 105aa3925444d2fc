#include "csv.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "common.hpp"

namespace mbsma {

int CsvTable::col(const std::string& name) const {
    for (size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return static_cast<int>(i);
    return -1;
}

int CsvTable::col_required(const std::string& name, const std::string& file) const {
    int c = col(name);
    if (c < 0) throw_data("missing column '" + name + "' in " + file);
    return c;
}

static std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

CsvTable read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw_data("cannot open " + path);
    CsvTable t;
    std::string line;
    if (!std::getline(in, line)) throw_data("empty file " + path);
    t.header = split_line(line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto row = split_line(line);
        if (row.size() != t.header.size())
            throw_data("row with " + std::to_string(row.size()) + " fields (expected " +
                       std::to_string(t.header.size()) + ") in " + path);
        t.rows.push_back(std::move(row));
    }
    return t;
}

void write_csv(const std::string& path, const CsvTable& table) {
    std::ofstream out(path);
    if (!out) throw_data("cannot write " + path);
    auto emit = [&out](const std::vector<std::string>& fields) {
        for (size_t i = 0; i < fields.size(); ++i) {
            if (i) out << ',';
            out << fields[i];
        }
        out << '\n';
    };
    emit(table.header);
    for (const auto& row : table.rows) emit(row);
}

std::string format_double(double x) {
    char buf[40];
    auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
}

double parse_double(const std::string& s, const std::string& context) {
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw_data("cannot parse '" + s + "' as a number (" + context + ")");
    return v;
}

long long parse_int(const std::string& s, const std::string& context) {
    long long v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw_data("cannot parse '" + s + "' as an integer (" + context + ")");
    return v;
}

}  // namespace mbsma
