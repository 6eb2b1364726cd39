#pragma once

// CSV form of a simulation record: a time column followed by one column per
// channel, headed "<group>/<name>". Values round-trip exactly.

#include <filesystem>
#include <iosfwd>
#include <stdexcept>

#include "pvosc/simengine.hpp"

namespace pvosc::sim {

class RecordError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void write_record_csv(std::ostream& os, const TimeSeriesRecord& rec);
void save_record_csv(const std::filesystem::path& path, const TimeSeriesRecord& rec);

/// Throws RecordError on a ragged table, a bad header, fewer than two rows
/// or a time column that is not uniformly spaced.
TimeSeriesRecord read_record_csv(std::istream& is);
TimeSeriesRecord load_record_csv(const std::filesystem::path& path);

}  // namespace pvosc::sim
