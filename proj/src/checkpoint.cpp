#include <fstream>
#include <sstream>

#include <json.hpp>

#include "lexma/policy.hpp"

namespace lexma::policy {

using nlohmann::json;

namespace {

constexpr std::string_view kFormat = "lexma-checkpoint";

Matrix matrix_from(const json& j, const char* key, std::size_t rows, std::size_t cols) {
  if (!j.contains(key) || !j[key].is_array()) throw SchemaError(std::string("checkpoint is missing '") + key + "'");
  const auto& arr = j[key];
  if (arr.size() != rows * cols) {
    throw SchemaError(std::string("checkpoint array '") + key + "' has " + std::to_string(arr.size()) +
                      " values, expected " + std::to_string(rows * cols));
  }
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = arr[i].get<double>();
  return m;
}

}  // namespace

std::string checkpoint_to_json(const Checkpoint& ckpt) {
  const auto& p = ckpt.params;
  json j;
  j["format"] = kFormat;
  j["version"] = kCheckpointVersion;
  j["vocab_size"] = p.vocab_size();
  j["context_dim"] = p.context_dim();
  j["rank"] = p.rank();
  j["vocab_hash"] = to_hex(ckpt.vocab_hash);
  j["flags"] = {{"acc_active", p.active.acc},
                {"tone_active", p.active.tone},
                {"base_trainable", p.trainable.base},
                {"acc_trainable", p.trainable.acc},
                {"tone_trainable", p.trainable.tone}};
  j["provenance"] = ckpt.provenance.empty() ? json::object() : json::parse(ckpt.provenance);
  j["base"] = p.base.data;
  j["acc_a"] = p.acc.a.data;
  j["acc_b"] = p.acc.b.data;
  j["tone_a"] = p.tone.a.data;
  j["tone_b"] = p.tone.b.data;
  return j.dump();
}

Checkpoint checkpoint_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("checkpoint: ") + e.what(), 0);
  }
  if (j.value("format", std::string()) != kFormat) throw SchemaError("not a lexma checkpoint");
  if (j.value("version", 0) != kCheckpointVersion) {
    throw SchemaError("unsupported checkpoint version " + std::to_string(j.value("version", 0)));
  }
  const auto vocab = j.at("vocab_size").get<std::size_t>();
  const auto dim = j.at("context_dim").get<std::size_t>();
  const auto rank = j.at("rank").get<std::size_t>();

  Checkpoint c;
  c.vocab_hash = std::stoull(j.at("vocab_hash").get<std::string>(), nullptr, 16);
  auto& p = c.params;
  p.base = matrix_from(j, "base", vocab, dim);
  p.acc = {matrix_from(j, "acc_a", vocab, rank), matrix_from(j, "acc_b", rank, dim)};
  p.tone = {matrix_from(j, "tone_a", vocab, rank), matrix_from(j, "tone_b", rank, dim)};
  const auto& f = j.at("flags");
  p.active = {f.at("acc_active").get<bool>(), f.at("tone_active").get<bool>()};
  p.trainable = {f.at("base_trainable").get<bool>(), f.at("acc_trainable").get<bool>(),
                 f.at("tone_trainable").get<bool>()};
  if (j.contains("provenance")) c.provenance = j["provenance"].dump();
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write checkpoint: " + path.string());
  out << checkpoint_to_json(ckpt) << '\n';
  if (!out) throw Error("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open checkpoint: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_json(ss.str());
}

}  // namespace lexma::policy
