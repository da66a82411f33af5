#include "ulab/checkpoint.hpp"

#include <cstring>

#include <json.hpp>

namespace ulab {

namespace {

nlohmann::ordered_json config_to_json(const ModelConfig& c) {
  return nlohmann::ordered_json{
      {"n_layers", c.n_layers},   {"d_model", c.d_model},
      {"n_heads", c.n_heads},     {"d_ff", c.d_ff},
      {"vocab_size", c.vocab_size}, {"max_positions", c.max_positions},
      {"seed", c.seed},
  };
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.n_layers = j.at("n_layers").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.max_positions = j.at("max_positions").get<int>();
  c.seed = j.at("seed").get<uint64_t>();
  return c;
}

}  // namespace

void save_checkpoint(const Model& m, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);

  nlohmann::ordered_json manifest;
  manifest["format_version"] = 1;
  manifest["config"] = config_to_json(m.config);
  nlohmann::ordered_json tensors;
  size_t offset = 0;
  for (const auto& spec : m.layout.specs()) {
    const size_t bytes = spec.count * sizeof(float);
    tensors[spec.name] = nlohmann::ordered_json{
        {"shape", spec.shape}, {"dtype", "f32"}, {"offset", offset}, {"bytes", bytes}};
    offset += bytes;
  }
  manifest["tensors"] = std::move(tensors);

  std::string payload(m.params.size() * sizeof(float), '\0');
  std::memcpy(payload.data(), m.params.data(), payload.size());

  write_file_atomic(dir / "tensors.bin", payload);
  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

Model load_checkpoint(const std::filesystem::path& dir) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    fail(errc::io, "checkpoint manifest parse error: " + std::string(e.what()));
  }

  Model m;
  try {
    require(manifest.at("format_version").get<int>() == 1, errc::validation,
            "unsupported checkpoint format version");
    m.config = config_from_json(manifest.at("config"));
  } catch (const nlohmann::json::exception& e) {
    fail(errc::validation, "checkpoint manifest schema error: " + std::string(e.what()));
  }
  m.config.validate();
  m.layout = ParamLayout(m.config);
  m.params.assign(m.layout.total(), 0.0f);

  const std::string payload = read_file(dir / "tensors.bin");
  const auto& tensors = manifest.at("tensors");
  require(tensors.size() == m.layout.specs().size(), errc::validation,
          "checkpoint tensor count does not match the configured model");

  for (const auto& spec : m.layout.specs()) {
    require(tensors.contains(spec.name), errc::validation,
            "checkpoint is missing tensor " + spec.name);
    const auto& t = tensors.at(spec.name);
    require(t.at("dtype").get<std::string>() == "f32", errc::validation,
            "tensor " + spec.name + " has unsupported dtype");
    const auto shape = t.at("shape").get<std::vector<int>>();
    require(shape == spec.shape, errc::validation,
            "tensor " + spec.name + " shape mismatch against model config");
    const size_t offset = t.at("offset").get<size_t>();
    const size_t bytes = t.at("bytes").get<size_t>();
    require(bytes == spec.count * sizeof(float), errc::validation,
            "tensor " + spec.name + " payload length mismatch");
    require(offset + bytes <= payload.size(), errc::io,
            "tensor " + spec.name + " payload exceeds tensors.bin");
    std::memcpy(m.params.data() + spec.offset, payload.data() + offset, bytes);
  }
  return m;
}

}  // namespace ulab
