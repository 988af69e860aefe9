#pragma once

// Versioned JSON checkpoints. Tensor names are emitted in lexicographic
// order and doubles as shortest round-trip decimals, so save(load(x)) is
// byte-identical and values survive bit-exactly.

#include <filesystem>
#include <string>

#include "iwd/io.hpp"
#include "iwd/models.hpp"
#include "json.hpp"

namespace iwd {

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json checkpoint_to_json(const IwdModel& model) {
  const auto& cfg = model.config();
  nlohmann::json j;
  j["format_version"] = kCheckpointVersion;
  j["model_kind"] = to_string(cfg.kind);
  j["use_se"] = cfg.use_se;
  j["hyper"] = {
      {"dat_ffn_hidden", cfg.dat.ffn_hidden}, {"dat_heads", cfg.dat.heads},         {"dat_dropout", cfg.dat.dropout},
      {"mlp_hidden", cfg.mlp_hidden},         {"mlp_dropout", cfg.mlp_dropout},     {"threshold", cfg.threshold},
      {"xx_pairing", qsim::to_string(cfg.pairing)},
  };
  nlohmann::json tensors = nlohmann::json::object();
  for (const auto& [name, t] : model.params()) tensors[name] = {{"shape", t.shape()}, {"data", t.vec()}};
  j["tensors"] = std::move(tensors);
  return j;
}

inline IwdModel checkpoint_from_json(const nlohmann::json& j) {
  try {
    const int version = j.at("format_version").get<int>();
    if (version != kCheckpointVersion) {
      throw DataError("unsupported checkpoint format_version " + std::to_string(version));
    }
    ModelConfig cfg;
    cfg.kind = model_kind_from_string(j.at("model_kind").get<std::string>());
    cfg.use_se = j.at("use_se").get<bool>();
    const auto& h = j.at("hyper");
    cfg.dat.ffn_hidden = h.at("dat_ffn_hidden").get<std::size_t>();
    cfg.dat.heads = h.at("dat_heads").get<std::size_t>();
    cfg.dat.dropout = h.at("dat_dropout").get<double>();
    cfg.mlp_hidden = h.at("mlp_hidden").get<std::size_t>();
    cfg.mlp_dropout = h.at("mlp_dropout").get<double>();
    cfg.threshold = h.at("threshold").get<double>();
    cfg.pairing = qsim::pairing_from_string(h.at("xx_pairing").get<std::string>());
    ParameterSet params;
    for (const auto& [name, t] : j.at("tensors").items()) {
      params.emplace(name, Tensor(t.at("shape").get<std::vector<std::size_t>>(), t.at("data").get<std::vector<double>>()));
    }
    return IwdModel(cfg, std::move(params));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  } catch (const ShapeError& e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  }
}

inline std::string checkpoint_to_string(const IwdModel& model) { return checkpoint_to_json(model).dump() + "\n"; }

inline void save_checkpoint(const std::filesystem::path& path, const IwdModel& model) {
  write_text(path, checkpoint_to_string(model));
}

inline IwdModel load_checkpoint(const std::filesystem::path& path) {
  const std::string text = read_text(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace iwd
