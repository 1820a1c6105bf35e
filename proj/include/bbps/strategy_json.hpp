#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "bbps/blocking.hpp"
#include "bbps/common.hpp"

namespace bbps {

/// Blocking strategies travel as JSON:
///   {"d": 4, "N": 100,
///    "blocks": [{"i": 1, "j": 4, "l": 1, "m": 10}, ...],
///    "partition": [[1, 3], [2, 4]]}          (optional)
/// Block ids are the 1-based positions in the list.
inline nlohmann::json strategy_to_json(const BlockingStrategy& strategy,
                                       const Partition* partition = nullptr) {
  nlohmann::json j;
  j["d"] = strategy.d();
  j["N"] = strategy.N();
  j["blocks"] = nlohmann::json::array();
  for (const Block& b : strategy.blocks())
    j["blocks"].push_back({{"i", b.i}, {"j", b.j}, {"l", b.l}, {"m", b.m}});
  if (partition != nullptr) {
    j["partition"] = nlohmann::json::array();
    for (const auto& group : partition->groups) j["partition"].push_back(group);
  }
  return j;
}

struct StrategyFile {
  BlockingStrategy strategy;
  bool has_partition = false;
  Partition partition;
};

inline StrategyFile strategy_from_json(const nlohmann::json& j) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (key != "d" && key != "N" && key != "blocks" && key != "partition")
      throw ConfigError("strategy JSON: unknown key \"" + key + "\"");
  }
  if (!j.contains("d") || !j.contains("N") || !j.contains("blocks"))
    throw ConfigError("strategy JSON needs keys d, N and blocks");
  if (!j["blocks"].is_array() || j["blocks"].empty())
    throw ConfigError("strategy JSON: blocks must be a non-empty array");
  std::vector<Block> blocks;
  for (const auto& jb : j["blocks"]) {
    for (const auto& [key, value] : jb.items()) {
      (void)value;
      if (key != "i" && key != "j" && key != "l" && key != "m")
        throw ConfigError("strategy JSON: unknown block key \"" + key + "\"");
    }
    if (!jb.contains("i") || !jb.contains("j") || !jb.contains("l") ||
        !jb.contains("m"))
      throw ConfigError("strategy JSON: every block needs i, j, l, m");
    blocks.push_back(Block{0, jb["i"].get<int>(), jb["j"].get<int>(),
                           jb["l"].get<int>(), jb["m"].get<int>()});
  }
  StrategyFile out{BlockingStrategy(j["d"].get<int>(), j["N"].get<int>(),
                                    std::move(blocks)),
                   false,
                   {}};
  if (j.contains("partition")) {
    if (!j["partition"].is_array())
      throw ConfigError("strategy JSON: partition must be an array of arrays");
    for (const auto& jg : j["partition"])
      out.partition.groups.push_back(jg.get<std::vector<int>>());
    const PartitionCheck check =
        validate_partition(out.strategy, out.partition);
    if (!check.ok)
      throw ConfigError("strategy JSON: invalid partition: " +
                        check.describe());
    out.has_partition = true;
  }
  return out;
}

inline StrategyFile strategy_from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("strategy JSON parse error: ") + e.what());
  }
  return strategy_from_json(j);
}

}  // namespace bbps
