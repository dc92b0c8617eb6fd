// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <sstream>

#include "mpq/config.hpp"

using namespace mpq;

namespace {
RunConfig parse(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}
const char* kMinimal = "[search]\nbudget_bitops_level = 3\n";
}  // namespace

TEST_CASE("defaults") {
  const auto c = parse(kMinimal);
  CHECK(c.model == "mlp");
  CHECK(c.indicators.bits == std::vector<int>{2, 3, 4, 8});
  CHECK(c.indicators.data_fraction == 0.5);
  CHECK(c.search.alpha == 1.0);
  CHECK(c.indicators.init_scheme == "statistics");
}

TEST_CASE("sections, comments, quoting, seeds") {
  const auto c = parse(
      "# comment\n[run]\nmodel = \"cnn\"  # trailing\nseed = 7\n[data]\ninput_shape = 1x16x16\n"
      "[indicators]\nbits = 2, 4\n[search]\nbudget_bitops = 1000\nalpha = 0.5\n");
  CHECK(c.model == "cnn");
  CHECK(c.data.synth.input_shape == Shape{1, 16, 16});
  CHECK(c.indicators.bits == std::vector<int>{2, 4});
  CHECK(c.indicators.seed == 7);
  CHECK(c.finetune.seed == 7);
  CHECK(c.data.synth.seed == 7);
  CHECK(c.search.alpha == 0.5);
}

TEST_CASE("rejections") {
  CHECK_THROWS_AS(parse("[run]\nmodle = mlp\n[search]\nbudget_bitops = 5\n"), ConfigError);
  CHECK_THROWS_AS(parse("[runn]\n"), ConfigError);
  CHECK_THROWS_AS(parse("model = mlp\n"), ConfigError);
  CHECK_THROWS_AS(parse("[run]\nseed = -1\n[search]\nbudget_bitops = 5\n"), ConfigError);
  CHECK_THROWS_AS(parse("[run]\nmodel = vgg\n[search]\nbudget_bitops = 5\n"), ConfigError);
  CHECK_THROWS_AS(parse("[indicators]\nbits = 4,2\n[search]\nbudget_bitops = 5\n"), ConfigError);
  CHECK_THROWS_AS(parse("[indicators]\nbits = 1,2\n[search]\nbudget_bitops = 5\n"), ConfigError);
  CHECK_THROWS_AS(parse("[run]\nseed = 1\n"), ConfigError);  // no budget
  CHECK_THROWS_AS(parse("[search]\nbudget_bitops = 5\nbudget_bitops_level = 3\n"), ConfigError);
  CHECK_THROWS_AS(parse("[search]\nbudget_bitops = 5\nalpha = -1\n"), ConfigError);
  CHECK_THROWS_AS(parse("[data]\nsource = idx\n[search]\nbudget_bitops = 5\n"), ConfigError);
  CHECK_THROWS_AS(parse("[search\nbudget_bitops = 5\n"), ConfigError);
}

TEST_CASE("digest follows effective values only") {
  const auto a = parse(kMinimal);
  const auto b = parse(std::string("# other comment\n") + kMinimal + "[run]\nseed = 0\n");
  CHECK(a.digest() == b.digest());
  const auto c = parse(std::string(kMinimal) + "[run]\nseed = 1\n");
  CHECK(a.digest() != c.digest());
  // canonical text is itself a valid config with the same digest
  CHECK(parse(a.canonical()).digest() == a.digest());
}

TEST_CASE("shipped configs parse") {
  for (const char* name : {"mlp.conf", "cnn.conf"}) {
    const auto c = load_config(std::filesystem::path(MPQ_SOURCE_DIR) / "configs" / name);
    CHECK(c.search.budget_bitops_level.has_value());
  }
}
