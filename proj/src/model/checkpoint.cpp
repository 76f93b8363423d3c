#include <fstream>
#include <sstream>
#include <unistd.h>

#include "itst/errors.hpp"
#include "itst/model/model.hpp"

namespace itst::model {

void write_atomic(const std::filesystem::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + tmp.string());
    out << text;
    out.flush();
    if (!out) throw FormatError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw FormatError("cannot rename into " + path.string() + ": " + ec.message());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Model& model, std::uint64_t step,
                     double delta_train, const corpus::Vocabulary& src_vocab,
                     const corpus::Vocabulary& tgt_vocab) {
  nlohmann::json j;
  j["magic"] = kCheckpointMagic;
  j["version"] = kCheckpointVersion;
  j["config"] = model.config().to_json();
  j["step"] = step;
  j["delta_train"] = delta_train;
  j["src_vocab"] = src_vocab.tokens();
  j["tgt_vocab"] = tgt_vocab.tokens();
  auto& params = j["params"] = nlohmann::json::array();
  for (const auto& p : model.parameters()) {
    params.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"values", p.value.values()}});
  }
  write_atomic(path, j.dump() + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": not a checkpoint (" + e.what() + ")");
  }
  const std::string where = path.string() + ": ";
  if (!j.is_object() || j.value("magic", std::string{}) != kCheckpointMagic) {
    throw FormatError(where + "bad magic");
  }
  if (j.value("version", -1) != kCheckpointVersion) {
    throw FormatError(where + "unsupported version " + j.value("version", nlohmann::json()).dump());
  }
  try {
    Model model(ModelConfig::from_json(j.at("config")), 0);
    const auto& params = j.at("params");
    if (params.size() != model.parameters().size()) {
      throw FormatError(where + "expected " + std::to_string(model.parameters().size()) +
                        " parameters, found " + std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      Parameter& p = model.parameters()[i];
      const auto name = params[i].at("name").get<std::string>();
      if (name != p.name) throw FormatError(where + "parameter " + name + " where " + p.name + " expected");
      const auto shape = params[i].at("shape").get<std::vector<std::size_t>>();
      if (shape != p.value.shape()) throw FormatError(where + "shape mismatch for " + name);
      p.value = Tensor(shape, params[i].at("values").get<std::vector<double>>());
      p.zero_grad();
    }
    return Checkpoint{std::move(model), j.at("step").get<std::uint64_t>(),
                      j.at("delta_train").get<double>(),
                      corpus::Vocabulary::from_tokens(j.at("src_vocab").get<std::vector<std::string>>()),
                      corpus::Vocabulary::from_tokens(j.at("tgt_vocab").get<std::vector<std::string>>())};
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(where + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(where + e.what());
  }
}

}  // namespace itst::model
