#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace bronchograde::csv {

using Row = std::vector<std::string>;

/// Minimal RFC 4180 reader: quoted fields, doubled quotes, CRLF tolerated.
std::vector<Row> parse(std::string_view text);
std::vector<Row> read_file(const std::filesystem::path& path);

std::string escape(std::string_view field);
std::string join(const Row& row);

void write_file(const std::filesystem::path& path, const std::vector<Row>& rows);

}  // namespace bronchograde::csv
