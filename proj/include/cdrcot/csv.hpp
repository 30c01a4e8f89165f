#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace cdrcot::csv {

struct Row {
    std::size_t line = 0;  // 1-based line on which the row starts
    std::vector<std::string> fields;
};

/// RFC-4180 reader: quoted fields may hold commas, doubled quotes and line breaks.
/// Throws std::runtime_error on an unterminated quoted field.
std::vector<Row> read(std::istream& in);

std::string quote(std::string_view field);
void write_row(std::ostream& out, const std::vector<std::string>& fields);

}  // namespace cdrcot::csv
