#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace tpb::csv {

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    /// Column position by name; throws std::runtime_error when absent.
    std::size_t column(std::string_view name) const;
};

/// Reads a comma-separated file with a header line. Blank lines are skipped.
Table read(const std::filesystem::path& path);
Table parse(std::string_view text);

/// Fixed-point formatting ("%.*f").
std::string fixed(double value, int decimals);
/// Shortest representation that round-trips to the same double.
std::string exact(double value);

double to_double(std::string_view field);
long long to_int(std::string_view field);

std::string join(const std::vector<std::string>& fields);

}  // namespace tpb::csv
