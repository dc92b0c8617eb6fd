// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace mpq {

// Shortest decimal text that parses back to the identical double.
std::string format_double(double value);

double parse_double(std::string_view text);
std::int64_t parse_int(std::string_view text);
std::uint64_t parse_uint(std::string_view text);

// Whitespace tokenization; used by every text artifact reader.
std::vector<std::string_view> split_ws(std::string_view line);

std::string_view trim(std::string_view text);

}  // namespace mpq
