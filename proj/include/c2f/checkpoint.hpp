// Binary checkpoints: magic, JSON header (vocab, config, parameter shapes,
// hashes), then every parameter as raw little-endian float64.
#pragma once

#include "c2f/config.hpp"
#include "c2f/model.hpp"
#include "c2f/text.hpp"

#include <string>

namespace c2f {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  Model model;
  Vocabulary vocab;
  RunConfig config;
  nlohmann::json extra;  // free-form metadata (epoch, metrics)
};

void save_checkpoint(const std::string& path, const Model& model, const Vocabulary& vocab, const RunConfig& cfg,
                     const nlohmann::json& extra = nlohmann::json::object());
Checkpoint load_checkpoint(const std::string& path);

}  // namespace c2f
