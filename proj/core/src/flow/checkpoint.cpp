#include "infodesign/flow/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>

namespace infodesign::flow {
namespace {

constexpr std::array<char, 8> kMagic{'I', 'D', 'F', 'L', 'O', 'W', '\0', '\1'};

template <typename T>
void put(std::ofstream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T take(std::ifstream& in, const std::filesystem::path& path) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw CheckpointError("truncated checkpoint: " + path.string());
  }
  return value;
}

std::string take_string(std::ifstream& in, const std::filesystem::path& path) {
  const auto size = take<std::uint64_t>(in, path);
  if (size > (1u << 26)) throw CheckpointError("corrupt checkpoint header: " + path.string());
  std::string s(size, '\0');
  if (!in.read(s.data(), static_cast<std::streamsize>(size))) {
    throw CheckpointError("truncated checkpoint: " + path.string());
  }
  return s;
}

}  // namespace

Checkpoint make_checkpoint(const ConditionalFlow& flow, std::uint64_t seed, std::uint64_t step,
                           nlohmann::json meta) {
  return Checkpoint{flow.config(), seed, step, flow.flat_parameters(), std::move(meta)};
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open checkpoint for writing: " + path.string());
  const std::string config = nlohmann::json(c.config).dump();
  const std::string meta = c.meta.dump();
  out.write(kMagic.data(), kMagic.size());
  put(out, kCheckpointVersion);
  put(out, static_cast<std::uint64_t>(config.size()));
  out.write(config.data(), static_cast<std::streamsize>(config.size()));
  put(out, static_cast<std::uint64_t>(meta.size()));
  out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  put(out, c.seed);
  put(out, c.step);
  put(out, static_cast<std::uint64_t>(c.parameters.size()));
  out.write(reinterpret_cast<const char*>(c.parameters.data()),
            static_cast<std::streamsize>(c.parameters.size() * sizeof(double)));
  if (!out) throw CheckpointError("failed writing checkpoint: " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path.string());
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
    throw CheckpointError("not a flow checkpoint: " + path.string());
  }
  const auto version = take<std::uint32_t>(in, path);
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint c;
  try {
    c.config = nlohmann::json::parse(take_string(in, path)).get<FlowConfig>();
    c.meta = nlohmann::json::parse(take_string(in, path));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("corrupt checkpoint metadata: " + std::string(e.what()));
  }
  c.seed = take<std::uint64_t>(in, path);
  c.step = take<std::uint64_t>(in, path);
  const auto count = take<std::uint64_t>(in, path);
  if (count != expected_parameter_count(c.config)) {
    throw CheckpointError("checkpoint parameter count does not match its configuration");
  }
  c.parameters.resize(count);
  if (!in.read(reinterpret_cast<char*>(c.parameters.data()), static_cast<std::streamsize>(count * sizeof(double)))) {
    throw CheckpointError("truncated checkpoint: " + path.string());
  }
  return c;
}

ConditionalFlow restore_flow(const Checkpoint& c) {
  ConditionalFlow flow(c.config);
  flow.set_flat_parameters(c.parameters);
  return flow;
}

}  // namespace infodesign::flow
