#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "pfkit/chain.hpp"
#include "pfkit/instances.hpp"

using namespace pfkit;

namespace {

std::string temp_path(const char* stem) {
  return (std::filesystem::temp_directory_path() / stem).string();
}

bool report_mentions(const std::vector<Violation>& report, const std::string& needle) {
  for (const auto& v : report)
    if (v.what.find(needle) != std::string::npos) return true;
  return false;
}

}  // namespace

TEST_SUITE("chain") {

TEST_CASE("uniform binary one-step tree") {
  LayeredChain chain = build_tree_chain(2, 1, uniform_rows(2));
  REQUIRE(chain.horizon == 1);
  CHECK(chain.levels[0] == std::vector<std::string>{"⊥"});
  CHECK(chain.levels[1] == std::vector<std::string>{"0", "1"});
  REQUIRE(chain.row(0, 0).size() == 2);
  CHECK(chain.row(0, 0)[0].prob == doctest::Approx(0.5));
  CHECK(chain.row(0, 0)[1].prob == doctest::Approx(0.5));
}

TEST_CASE("uniform depth-4 tree has 31 states and flat rows") {
  LayeredChain chain = build_tree_chain(2, 4, uniform_rows(2));
  int states = 0;
  for (int h = 0; h <= 4; ++h) states += chain.level_size(h);
  CHECK(states == 31);
  for (int h = 0; h < 4; ++h)
    for (int s = 0; s < chain.level_size(h); ++s)
      for (const Transition& t : chain.row(h, s)) CHECK(t.prob == 0.5);
}

TEST_CASE("seeded depth-12 tree rows all sum to one") {
  LayeredChain chain = build_tree_chain(2, 12, seeded_rows(2, 7));
  int rows = 0;
  for (int h = 0; h < 12; ++h) {
    for (int s = 0; s < chain.level_size(h); ++s) {
      double sum = 0.0;
      for (const Transition& t : chain.row(h, s)) sum += t.prob;
      CHECK(std::abs(sum - 1.0) <= 1e-12);
      ++rows;
    }
  }
  CHECK(rows == 4095);
}

TEST_CASE("budget and invalid row errors") {
  CHECK_THROWS_AS(build_tree_chain(2, 25, uniform_rows(2)), BudgetExceeded);
  RowFn broken = [](int, long long) { return std::vector<double>{0.7, 0.2}; };
  CHECK_THROWS_AS(build_tree_chain(2, 3, broken), InvalidSpec);
}

TEST_CASE("two-path instance validates cleanly") {
  CHECK(validate_instance(two_path_instance()).empty());
  CHECK(validate_instance(random_tree_instance(2, 5, 3)).empty());
}

TEST_CASE("single-field mutations each produce a violation") {
  const ProblemInstance base = two_path_instance();

  ProblemInstance bad = base;
  bad.prm.values[2][0] = 1.0;  // r* is 2 there
  CHECK(report_mentions(validate_instance(bad), "prm≠r*"));

  bad = base;
  bad.chain.kernels[0][0][0].prob = 0.4;  // row sums to 0.9
  CHECK(report_mentions(validate_instance(bad), "row not stochastic"));

  bad = base;
  bad.chain.kernels[0][0][0].prob = -0.5;
  CHECK(report_mentions(validate_instance(bad), "negative"));

  bad = base;
  bad.prm.values[0][0] = 2.0;
  CHECK(report_mentions(validate_instance(bad), "level-0 entry"));

  bad = base;
  bad.prm.values[1][1] = 0.0;
  CHECK(report_mentions(validate_instance(bad), "strictly positive"));

  bad = base;
  bad.terminal_reward = {0.0, 0.0};
  bad.prm.values[2] = {0.0, 0.0};
  CHECK(report_mentions(validate_instance(bad), "identically zero"));

  bad = base;
  bad.chain.kernels[0][0][1].target = 5;
  CHECK(report_mentions(validate_instance(bad), "out of range"));
}

TEST_CASE("save/load round-trip is bit-exact") {
  const std::string path = temp_path("pfkit_roundtrip.json");
  ProblemInstance inst = random_tree_instance(2, 6, 11);
  save_instance(inst, path);
  ProblemInstance back = load_instance(path);
  CHECK(back.name == inst.name);
  REQUIRE(back.chain.horizon == inst.chain.horizon);
  for (int h = 0; h < inst.chain.horizon; ++h) {
    for (int s = 0; s < inst.chain.level_size(h); ++s) {
      REQUIRE(back.chain.row(h, s).size() == inst.chain.row(h, s).size());
      for (size_t t = 0; t < inst.chain.row(h, s).size(); ++t) {
        CHECK(back.chain.row(h, s)[t].target == inst.chain.row(h, s)[t].target);
        CHECK(back.chain.row(h, s)[t].prob == inst.chain.row(h, s)[t].prob);  // bitwise
      }
    }
  }
  for (int h = 0; h <= inst.chain.horizon; ++h)
    for (int s = 0; s < inst.chain.level_size(h); ++s)
      CHECK(back.prm.at(h, s) == inst.prm.at(h, s));
  for (size_t s = 0; s < inst.terminal_reward.size(); ++s)
    CHECK(back.terminal_reward[s] == inst.terminal_reward[s]);
  std::filesystem::remove(path);
}

TEST_CASE("loader refuses malformed and invalid data") {
  const std::string path = temp_path("pfkit_bad.json");
  {
    std::ofstream os(path);
    os << "{ not json";
  }
  CHECK_THROWS_AS(load_instance(path), ParseError);

  ProblemInstance inst = two_path_instance();
  std::string text = instance_to_json(inst);
  auto pos = text.find("0.5");
  REQUIRE(pos != std::string::npos);
  text.replace(pos, 3, "-0.5");
  {
    std::ofstream os(path);
    os << text;
  }
  CHECK_THROWS_AS(load_instance(path), ValidationFailed);
  std::filesystem::remove(path);
}

TEST_CASE("lower-bound instance file round-trips with the construction rule") {
  const std::string path = temp_path("pfkit_lower.json");
  save_instance(build_smc_lower(4, 1.0).instance, path);
  ProblemInstance inst = load_instance(path);
  CHECK(inst.chain.level_size(4) == 16);
  for (int s = 0; s < 16; ++s) {
    const int ones = __builtin_popcount(static_cast<unsigned>(s));
    CHECK(inst.terminal_reward[s] == doctest::Approx(std::pow(2.0, ones)).epsilon(1e-12));
  }
  std::filesystem::remove(path);
}

TEST_CASE("content hash is stable and input-sensitive") {
  const std::string a = instance_to_json(two_path_instance());
  CHECK(content_hash(a) == content_hash(a));
  CHECK(content_hash(a) != content_hash(a + " "));
  CHECK(content_hash(a).size() == 16);
}

}  // TEST_SUITE
