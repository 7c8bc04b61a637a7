#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "latte/grid.hpp"
#include "latte/network.hpp"

namespace latte {

struct Checkpoint {
  Model model;
  std::vector<std::string> feature_names;
  std::vector<Cell> train_cells;  // train locations of every period so far
};

// Writes checkpoint.json (config, normalizer, parameter names and shapes,
// train cells) plus one LATG file per parameter under params/.
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace latte
