#pragma once

#include <string>
#include <utility>
#include <vector>

#include "fewshot/meta.hpp"
#include "fewshot/numerics.hpp"

namespace fewshot {

/// Engine-private parameter snapshot: the resolved config text plus named
/// shape-headed f64 tensors. Byte layout in README.
struct Checkpoint {
  std::string config_text;
  std::vector<std::pair<std::string, Matrix>> tensors;
};

void write_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

Checkpoint pack_params(const TrainableParams& params,
                       const std::string& config_text);
TrainableParams unpack_params(const Checkpoint& ck);

}  // namespace fewshot
