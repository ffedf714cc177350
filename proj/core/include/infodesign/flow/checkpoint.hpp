#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "infodesign/flow/conditional_flow.hpp"

namespace infodesign::flow {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Versioned binary record of a flow and the run state it belongs to.
// Parameters are stored as raw IEEE doubles so a reload is bit-identical.
struct Checkpoint {
  FlowConfig config;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::vector<double> parameters;
  nlohmann::json meta = nlohmann::json::object();
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

Checkpoint make_checkpoint(const ConditionalFlow& flow, std::uint64_t seed, std::uint64_t step,
                           nlohmann::json meta = nlohmann::json::object());
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::filesystem::path& path);
ConditionalFlow restore_flow(const Checkpoint& checkpoint);

}  // namespace infodesign::flow
