#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string_view>

#include "pvosc/record_io.hpp"

namespace pvosc::sim {

namespace {

void put_number(std::ostream& os, double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    os.write(buf, r.ptr - buf);
}

double parse_number(std::string_view s, std::size_t line) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    double v = 0.0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
        throw RecordError("record csv line " + std::to_string(line) + ": bad number '" + std::string(s) + "'");
    }
    return v;
}

std::vector<std::string_view> split(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const auto comma = line.find(',', start);
        out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

}  // namespace

void write_record_csv(std::ostream& os, const TimeSeriesRecord& rec) {
    os << "time";
    for (const auto& c : rec.channels) os << ',' << c.group << '/' << c.name;
    os << '\n';
    const auto n = rec.length();
    for (std::size_t k = 0; k < n; ++k) {
        put_number(os, rec.t0 + static_cast<double>(k) * rec.dt);
        for (const auto& c : rec.channels) {
            os << ',';
            put_number(os, c.values[k]);
        }
        os << '\n';
    }
}

void save_record_csv(const std::filesystem::path& path, const TimeSeriesRecord& rec) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw RecordError("cannot write " + path.string());
    write_record_csv(os, rec);
    if (!os) throw RecordError("write failed: " + path.string());
}

TimeSeriesRecord read_record_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw RecordError("record csv is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto head = split(line);
    if (head.empty() || head.front() != "time") throw RecordError("record csv must start with a 'time' column");

    TimeSeriesRecord rec;
    for (std::size_t i = 1; i < head.size(); ++i) {
        const auto h = head[i];
        const auto slash = h.find('/');
        if (slash == std::string_view::npos || slash == 0 || slash + 1 == h.size()) {
            throw RecordError("record csv column '" + std::string(h) + "' is not '<group>/<name>'");
        }
        rec.channels.push_back({std::string(h.substr(0, slash)), std::string(h.substr(slash + 1)), {}});
    }

    std::vector<double> times;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = split(line);
        if (cells.size() != head.size()) {
            throw RecordError("record csv line " + std::to_string(lineno) + " has " + std::to_string(cells.size()) +
                              " cells, expected " + std::to_string(head.size()));
        }
        times.push_back(parse_number(cells[0], lineno));
        for (std::size_t i = 1; i < cells.size(); ++i) rec.channels[i - 1].values.push_back(parse_number(cells[i], lineno));
    }
    if (times.size() < 2) throw RecordError("record csv needs at least two rows");
    rec.t0 = times.front();
    rec.dt = (times.back() - times.front()) / static_cast<double>(times.size() - 1);
    if (!(rec.dt > 0.0)) throw RecordError("record csv time column must increase");
    for (std::size_t k = 0; k < times.size(); ++k) {
        if (std::abs(times[k] - (rec.t0 + static_cast<double>(k) * rec.dt)) > 1e-6 * rec.dt) {
            throw RecordError("record csv time column is not uniformly spaced (row " + std::to_string(k + 2) + ")");
        }
    }
    return rec;
}

TimeSeriesRecord load_record_csv(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw RecordError("cannot open " + path.string());
    return read_record_csv(is);
}

}  // namespace pvosc::sim
