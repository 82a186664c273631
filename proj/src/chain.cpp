#include "pfkit/chain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "pfkit/rng.hpp"

namespace pfkit {

namespace {

constexpr double kRowTol = 1e-12;
constexpr double kPrmMatchTol = 1e-12;

bool finite_nonneg(double x) { return std::isfinite(x) && x >= 0.0; }

}  // namespace

std::string to_string(const Violation& v) {
  std::ostringstream os;
  os << v.what;
  if (v.level >= 0) os << " [level " << v.level;
  if (v.index >= 0) os << ", state " << v.index;
  if (v.level >= 0) os << "]";
  return os.str();
}

std::vector<std::vector<char>> reachable_mask(const LayeredChain& chain) {
  std::vector<std::vector<char>> mask(chain.horizon + 1);
  for (int h = 0; h <= chain.horizon; ++h) mask[h].assign(chain.level_size(h), 0);
  if (chain.level_size(0) > 0) mask[0][0] = 1;
  for (int h = 0; h < chain.horizon; ++h) {
    for (int s = 0; s < chain.level_size(h); ++s) {
      if (!mask[h][s]) continue;
      for (const Transition& t : chain.row(h, s)) {
        if (t.prob > 0.0 && t.target >= 0 && t.target < chain.level_size(h + 1)) {
          mask[h + 1][t.target] = 1;
        }
      }
    }
  }
  return mask;
}

std::vector<Violation> validate_instance(const ProblemInstance& inst) {
  std::vector<Violation> out;
  const LayeredChain& chain = inst.chain;
  const int H = chain.horizon;

  if (H < 1) out.push_back({"horizon must be positive", -1, -1});
  if (static_cast<int>(chain.levels.size()) != H + 1)
    out.push_back({"levels list must have H+1 entries", -1, -1});
  if (static_cast<int>(chain.kernels.size()) != H)
    out.push_back({"kernels list must have H entries", -1, -1});
  if (!out.empty()) return out;  // structure too broken to inspect further

  if (chain.level_size(0) != 1)
    out.push_back({"level 0 must contain exactly one state", 0, -1});

  for (int h = 0; h < H; ++h) {
    if (static_cast<int>(chain.kernels[h].size()) != chain.level_size(h)) {
      out.push_back({"kernel step has wrong number of source rows", h, -1});
      continue;
    }
    for (int s = 0; s < chain.level_size(h); ++s) {
      double sum = 0.0;
      for (const Transition& t : chain.row(h, s)) {
        if (t.target < 0 || t.target >= chain.level_size(h + 1)) {
          out.push_back({"transition target out of range", h, s});
          continue;
        }
        if (!finite_nonneg(t.prob)) out.push_back({"negative or non-finite probability", h, s});
        sum += t.prob;
      }
      if (std::abs(sum - 1.0) > kRowTol) out.push_back({"row not stochastic", h, s});
    }
  }

  auto check_table = [&](const ValueTable& table, const char* name) {
    if (static_cast<int>(table.values.size()) != H + 1) {
      out.push_back({std::string(name) + " must have H+1 levels", -1, -1});
      return false;
    }
    for (int h = 0; h <= H; ++h) {
      if (static_cast<int>(table.values[h].size()) != chain.level_size(h)) {
        out.push_back({std::string(name) + " level has wrong size", h, -1});
        return false;
      }
      for (int s = 0; s < chain.level_size(h); ++s) {
        if (!finite_nonneg(table.at(h, s)))
          out.push_back({std::string(name) + " entry negative or non-finite", h, s});
      }
    }
    return true;
  };

  if (static_cast<int>(inst.terminal_reward.size()) != chain.level_size(H))
    out.push_back({"terminal reward has wrong size", H, -1});
  else
    for (int s = 0; s < chain.level_size(H); ++s)
      if (!finite_nonneg(inst.terminal_reward[s]))
        out.push_back({"terminal reward negative or non-finite", H, s});

  const bool shape_ok = check_table(inst.prm, "prm");
  if (inst.prm.tag != ValueTag::kPrm) out.push_back({"prm table must be tagged PRM", -1, -1});

  if (!shape_ok || static_cast<int>(inst.terminal_reward.size()) != chain.level_size(H))
    return out;

  for (int s = 0; s < chain.level_size(H); ++s) {
    if (std::abs(inst.prm.at(H, s) - inst.terminal_reward[s]) > kPrmMatchTol)
      out.push_back({"prm≠r* at level H", H, s});
  }
  if (std::abs(inst.prm.at(0, 0) - 1.0) > kPrmMatchTol)
    out.push_back({"prm level-0 entry must be 1", 0, 0});

  auto mask = reachable_mask(chain);
  bool any_reward = false;
  for (int s = 0; s < chain.level_size(H); ++s)
    if (mask[H][s] && inst.terminal_reward[s] > 0.0) any_reward = true;
  if (!any_reward)
    out.push_back({"terminal reward identically zero on reachable support", H, -1});

  for (int h = 0; h <= H; ++h)
    for (int s = 0; s < chain.level_size(h); ++s)
      if (mask[h][s] && !(inst.prm.at(h, s) > 0.0))
        out.push_back({"prm not strictly positive on reachable state", h, s});

  return out;
}

// ---------------------------------------------------------------------------
// Tree chains
// ---------------------------------------------------------------------------

RowFn uniform_rows(int alphabet) {
  return [alphabet](int, long long) {
    return std::vector<double>(alphabet, 1.0 / alphabet);
  };
}

RowFn seeded_rows(int alphabet, uint64_t seed, double lo, double hi) {
  return [=](int level, long long state) {
    RngStream rng = derive_stream(seed, {0x726f77ULL, static_cast<uint64_t>(level),
                                         static_cast<uint64_t>(state)});
    std::vector<double> row(alphabet);
    double sum = 0.0;
    for (int a = 0; a < alphabet; ++a) {
      row[a] = lo + (hi - lo) * rng.next_unit();
      sum += row[a];
    }
    for (int a = 0; a < alphabet; ++a) row[a] /= sum;
    return row;
  };
}

LayeredChain build_tree_chain(int alphabet, int horizon, const RowFn& rows, long long budget) {
  if (alphabet < 1 || horizon < 1) throw InvalidSpec("alphabet and horizon must be positive");
  long long leaves = 1;
  for (int h = 0; h < horizon; ++h) {
    leaves *= alphabet;
    if (leaves > budget)
      throw BudgetExceeded("tree has " + std::to_string(alphabet) + "^" +
                           std::to_string(horizon) + " leaves, budget " + std::to_string(budget));
  }

  LayeredChain chain;
  chain.horizon = horizon;
  chain.levels.resize(horizon + 1);
  chain.kernels.resize(horizon);
  chain.levels[0] = {"⊥"};

  long long width = 1;
  for (int h = 0; h < horizon; ++h) {
    chain.levels[h + 1].reserve(width * alphabet);
    chain.kernels[h].resize(width);
    for (long long s = 0; s < width; ++s) {
      std::vector<double> row = rows(h, s);
      if (static_cast<int>(row.size()) != alphabet)
        throw InvalidSpec("row function returned wrong arity");
      double sum = 0.0;
      for (double p : row) {
        if (!finite_nonneg(p)) throw InvalidSpec("row contains negative/non-finite probability");
        sum += p;
      }
      if (std::abs(sum - 1.0) > kRowTol) throw InvalidSpec("conditional row does not normalize");
      KernelRow& kr = chain.kernels[h][s];
      kr.reserve(alphabet);
      for (int a = 0; a < alphabet; ++a) {
        if (row[a] > 0.0) kr.push_back({static_cast<int>(s * alphabet + a), row[a]});
      }
    }
    width *= alphabet;
    for (long long i = 0; i < width; ++i) {
      std::string label;
      long long v = i;
      for (int k = 0; k < h + 1; ++k) {
        label.push_back(static_cast<char>('0' + static_cast<int>(v % alphabet)));
        v /= alphabet;
      }
      std::reverse(label.begin(), label.end());
      chain.levels[h + 1].push_back(std::move(label));
    }
  }
  return chain;
}

// ---------------------------------------------------------------------------
// JSON I/O
// ---------------------------------------------------------------------------

using nlohmann::json;

std::string instance_to_json(const ProblemInstance& inst) {
  auto require_finite = [](double x) {
    if (!std::isfinite(x)) throw InvalidSpec("instance files may not contain NaN/Inf");
    return x;
  };

  json j;
  j["name"] = inst.name;
  j["H"] = inst.chain.horizon;
  j["levels"] = inst.chain.levels;
  json kernels = json::array();
  for (const auto& step : inst.chain.kernels) {
    json jstep = json::array();
    for (const auto& row : step) {
      json jrow = json::array();
      for (const Transition& t : row) jrow.push_back({t.target, require_finite(t.prob)});
      jstep.push_back(std::move(jrow));
    }
    kernels.push_back(std::move(jstep));
  }
  j["kernels"] = std::move(kernels);
  json rew = json::array();
  for (double r : inst.terminal_reward) rew.push_back(require_finite(r));
  j["terminal_reward"] = std::move(rew);
  json prm = json::array();
  for (const auto& level : inst.prm.values) {
    json jl = json::array();
    for (double v : level) jl.push_back(require_finite(v));
    prm.push_back(std::move(jl));
  }
  j["prm"] = std::move(prm);
  return j.dump();
}

ProblemInstance parse_instance_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(e.what());
  }

  ProblemInstance inst;
  try {
    inst.name = j.at("name").get<std::string>();
    inst.chain.horizon = j.at("H").get<int>();
    inst.chain.levels = j.at("levels").get<std::vector<std::vector<std::string>>>();
    for (const auto& jstep : j.at("kernels")) {
      std::vector<KernelRow> step;
      for (const auto& jrow : jstep) {
        KernelRow row;
        for (const auto& jt : jrow) {
          if (!jt.is_array() || jt.size() != 2)
            throw ParseError("kernel entry must be [target_index, prob]");
          row.push_back({jt[0].get<int>(), jt[1].get<double>()});
        }
        step.push_back(std::move(row));
      }
      inst.chain.kernels.push_back(std::move(step));
    }
    inst.terminal_reward = j.at("terminal_reward").get<std::vector<double>>();
    inst.prm.tag = ValueTag::kPrm;
    inst.prm.values = j.at("prm").get<std::vector<std::vector<double>>>();
  } catch (const json::exception& e) {
    throw ParseError(e.what());
  }

  auto report = validate_instance(inst);
  if (!report.empty()) {
    std::string msg = "instance file failed validation:";
    for (const auto& v : report) msg += "\n  - " + to_string(v);
    throw ValidationFailed(msg);
  }
  return inst;
}

void save_instance(const ProblemInstance& inst, const std::string& path) {
  auto report = validate_instance(inst);
  if (!report.empty()) {
    std::string msg = "refusing to save invalid instance:";
    for (const auto& v : report) msg += "\n  - " + to_string(v);
    throw ValidationFailed(msg);
  }
  const std::string text = instance_to_json(inst);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw ParseError("cannot open " + tmp + " for writing");
    os << text;
  }
  std::filesystem::rename(tmp, path);
}

ProblemInstance load_instance(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParseError("cannot open " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_instance_json(buf.str());
}

std::string content_hash(const std::string& bytes) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace pfkit
