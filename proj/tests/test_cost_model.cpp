// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <random>
#include <sstream>

#include "mpq/cost_model.hpp"

using namespace mpq;

namespace {
LayerDesc linear(int id, std::size_t in, std::size_t out) {
  LayerDesc d;
  d.kind = "linear";
  d.layer_id = id;
  d.in_features = in;
  d.out_features = out;
  return d;
}
LayerDesc conv(int id, std::size_t ic, std::size_t oc, std::size_t k, std::size_t oh, std::size_t ow) {
  LayerDesc d;
  d.kind = "conv2d";
  d.layer_id = id;
  d.in_channels = ic;
  d.out_channels = oc;
  d.kernel_h = d.kernel_w = k;
  d.out_h = oh;
  d.out_w = ow;
  return d;
}
LayerDesc plain(const char* kind) {
  LayerDesc d;
  d.kind = kind;
  return d;
}
}  // namespace

TEST_CASE("layer stats examples") {
  const std::vector<LayerDesc> arch{conv(0, 8, 16, 3, 14, 14), plain("relu"), plain("flatten"),
                                    linear(1, 128, 10)};
  const auto s = layer_stats(arch);
  REQUIRE(s.size() == 2);
  CHECK(s[0].macs == 225792);
  CHECK(s[0].params == 16 * 8 * 9);
  CHECK(s[1].macs == 1280);
  CHECK(s[1].params == 1280);
  CHECK(s[1].layer_id == 1);
}

TEST_CASE("unquantized and unknown layers") {
  auto l = linear(0, 4, 4);
  l.quantized = false;
  const std::vector<LayerDesc> arch{l, linear(1, 4, 2)};
  const auto s = layer_stats(arch);
  REQUIRE(s.size() == 1);
  CHECK(s[0].layer_id == 1);
  const std::vector<LayerDesc> bad{plain("pool")};
  CHECK_THROWS_AS(layer_stats(bad), std::invalid_argument);
}

TEST_CASE("bitops examples") {
  LayerCostStats s{0, "linear", 1000000, 0};
  CHECK(bitops(s, 4, 4) == 16000000);
  CHECK(bitops(s, 2, 8) == 16000000);
}

TEST_CASE("uniform totals are b^2 times the MACs") {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<std::uint64_t> d(1, 100000);
  std::vector<LayerCostStats> stats;
  std::uint64_t macs = 0;
  for (int l = 0; l < 7; ++l) {
    stats.push_back({l, "conv2d", d(rng), d(rng)});
    macs += stats.back().macs;
  }
  for (int b = 2; b <= 8; ++b) {
    const std::vector<int> bits(stats.size(), b);
    CHECK(total_bitops(stats, bits, bits) == static_cast<std::uint64_t>(b * b) * macs);
  }
}

TEST_CASE("additivity, permutation invariance and monotonicity") {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<std::uint64_t> d(1, 100000);
  std::uniform_int_distribution<int> bd(2, 8);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<LayerCostStats> stats;
    std::vector<int> wb, ab;
    std::uint64_t sum = 0;
    for (int l = 0; l < 6; ++l) {
      stats.push_back({l, "linear", d(rng), d(rng)});
      wb.push_back(bd(rng));
      ab.push_back(bd(rng));
      sum += bitops(stats.back(), wb.back(), ab.back());
    }
    CHECK(total_bitops(stats, wb, ab) == sum);
    std::vector<std::size_t> perm{5, 3, 1, 0, 4, 2};
    std::vector<LayerCostStats> ps;
    std::vector<int> pw, pa;
    for (auto k : perm) {
      ps.push_back(stats[k]);
      pw.push_back(wb[k]);
      pa.push_back(ab[k]);
    }
    CHECK(total_bitops(ps, pw, pa) == sum);
    CHECK(model_size_bits(ps, pw) == model_size_bits(stats, wb));
    const auto& s = stats[0];
    CHECK(bitops(s, wb[0] + 1, ab[0]) > bitops(s, wb[0], ab[0]));
    CHECK(bitops(s, wb[0], ab[0] + 1) > bitops(s, wb[0], ab[0]));
  }
}

TEST_CASE("model size and compression rate") {
  const std::vector<LayerCostStats> stats{{0, "linear", 0, 1000}, {1, "linear", 0, 2000}};
  const std::vector<int> bits{4, 2};
  CHECK(model_size_bits(stats, bits) == 8000);
  CHECK(size_bytes(8000) == 1000);
  CHECK(size_bytes(8001) == 1001);
  const std::vector<int> full{32, 32};
  CHECK(model_size_bits(stats, full) == 32 * 3000);
  const std::vector<int> short_bits{4};
  CHECK_THROWS(model_size_bits(stats, short_bits));

  const std::vector<LayerCostStats> one{{0, "linear", 0, 1000}};
  const std::vector<int> three{3};
  CHECK(model_size_bits(one, three) == 3000);
  CHECK(compression_rate(one, three) == 32.0 / 3.0);
}

TEST_CASE("budget needs a limit") {
  Budget b;
  CHECK_THROWS(b.validate());
  b.bitops = 0;
  CHECK_THROWS(b.validate());
  b.bitops = 10;
  CHECK_NOTHROW(b.validate());
}

TEST_CASE("stats text round trip") {
  const std::vector<LayerCostStats> stats{{0, "conv2d", 225792, 1152}, {1, "linear", 1280, 1280}};
  std::stringstream ss;
  write_layer_stats(ss, stats);
  const auto back = read_layer_stats(ss);
  REQUIRE(back.size() == 2);
  CHECK(back[0].macs == 225792);
  CHECK(back[1].kind == "linear");
  std::stringstream bad("layer-stats v1\nlayers 2\n0 linear 1 1\n");
  CHECK_THROWS(read_layer_stats(bad));
}
