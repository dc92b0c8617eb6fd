// SPDX-License-Identifier: Apache-2.0
#include "mpq/format.hpp"

#include <array>
#include <charconv>
#include <stdexcept>

namespace mpq {

std::string format_double(double value) {
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  if (ec != std::errc()) throw std::runtime_error("format_double: conversion failed");
  return std::string(buf.data(), end);
}

namespace {

template <typename T>
T parse_number(std::string_view text, const char* what) {
  text = trim(text);
  T value{};
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || end != text.data() + text.size() || text.empty()) {
    throw std::invalid_argument(std::string("expected ") + what + ", got '" +
                                std::string(text) + "'");
  }
  return value;
}

}  // namespace

double parse_double(std::string_view text) { return parse_number<double>(text, "a real number"); }

std::int64_t parse_int(std::string_view text) {
  return parse_number<std::int64_t>(text, "an integer");
}

std::uint64_t parse_uint(std::string_view text) {
  return parse_number<std::uint64_t>(text, "a non-negative integer");
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string_view trim(std::string_view text) {
  const auto ws = " \t\r\n";
  const auto first = text.find_first_not_of(ws);
  if (first == std::string_view::npos) return {};
  const auto last = text.find_last_not_of(ws);
  return text.substr(first, last - first + 1);
}

}  // namespace mpq
