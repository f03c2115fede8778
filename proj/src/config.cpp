#include "lexma/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace lexma::cli {

using nlohmann::json;

namespace {

// Reads typed fields from one JSON object and rejects keys nobody asked for.
class Section {
 public:
  Section(const json& root, std::string name) : name_(std::move(name)) {
    if (root.contains(name_)) {
      obj_ = root.at(name_);
      if (!obj_.is_object()) throw SchemaError("config section '" + name_ + "' must be an object");
    } else {
      obj_ = json::object();
    }
  }

  template <typename T>
  void read(const char* key, T& field) {
    known_.insert(key);
    if (!obj_.contains(key)) return;
    try {
      field = obj_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw SchemaError("config " + name_ + "." + key + ": " + e.what());
    }
  }

  bool has(const char* key) const { return obj_.contains(key); }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!known_.count(it.key())) throw SchemaError("unknown config key '" + name_ + "." + it.key() + "'");
    }
  }

 private:
  std::string name_;
  json obj_;
  std::set<std::string> known_;
};

void read_grpo(Section& s, grpo::GrpoConfig& g) {
  s.read("group_size", g.group_size);
  s.read("clip_eps", g.clip_eps);
  s.read("kl_beta", g.kl_beta);
  s.read("lr", g.lr);
  s.read("accumulation", g.accumulation);
  s.read("updates_per_batch", g.updates_per_batch);
  s.read("temperature", g.temperature);
  s.read("steps", g.steps);
  s.read("seed", g.seed);
  s.read("adapter_init", g.adapter_init);
  s.finish();
}

json grpo_json(const grpo::GrpoConfig& g) {
  return {{"group_size", g.group_size}, {"clip_eps", g.clip_eps},
          {"kl_beta", g.kl_beta},       {"lr", g.lr},
          {"accumulation", g.accumulation}, {"updates_per_batch", g.updates_per_batch},
          {"temperature", g.temperature},   {"steps", g.steps},
          {"seed", g.seed},                 {"adapter_init", g.adapter_init}};
}

}  // namespace

RunConfig::RunConfig() {
  grpo1.lr = 0.2;
  grpo1.steps = 125;
  grpo2.lr = 0.02;
  grpo2.steps = 100;
  set_seed(data.seed);
}

void RunConfig::set_seed(std::uint64_t seed) {
  data.seed = seed;
  grpo1.seed = derive_seed(seed, 0x67171);
  grpo2.seed = derive_seed(seed, 0x67172);
}

sft::SftConfig RunConfig::sft_config() const {
  sft::SftConfig c;
  c.epochs = sft.epochs;
  c.lr = sft.lr;
  c.accumulation = sft.accumulation;
  c.temperature = sft.temperature;
  c.seed = derive_seed(data.seed, 0x5f7);
  return c;
}

void RunConfig::validate() const {
  if (data.num_features < 2 || data.num_features > 8) throw ContractError("data.num_features must lie in 2..8");
  if (data.n_cases == 0) throw ContractError("data.n_cases must be positive");
  if (!(data.noise >= 0.0 && data.noise <= 0.5)) throw ContractError("data.noise must lie in [0, 0.5]");
  if (policy.rank == 0) throw ContractError("policy.rank must be positive");
  if (policy.reasoning_cap == 0 || policy.explanation_cap == 0) throw ContractError("policy caps must be positive");
  if (policy.explanation_cap < sft::Teacher::kMaxExplanation + 1) {
    throw ContractError("policy.explanation_cap is too small for the teacher templates");
  }
  if (caps().total() > policy::kGenerationCap) throw ContractError("generation caps exceed 1024 tokens");
  if (!(sft.fallibility >= 0.0 && sft.fallibility < 1.0)) throw ContractError("sft.fallibility must lie in [0, 1)");
  if (sft.accumulation == 0) throw ContractError("sft.accumulation must be positive");
  grpo1.validate();
  grpo2.validate();
}

RunConfig RunConfig::from_json_text(std::string_view text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("config: ") + e.what(), 0);
  }
  if (!root.is_object()) throw SchemaError("config must be a JSON object");
  for (auto it = root.begin(); it != root.end(); ++it) {
    static const std::set<std::string> sections = {"data", "policy", "sft", "grpo1", "grpo2", "eval"};
    if (!sections.count(it.key())) throw SchemaError("unknown config section '" + it.key() + "'");
  }

  RunConfig c;
  {
    Section s(root, "data");
    s.read("num_features", c.data.num_features);
    s.read("n_cases", c.data.n_cases);
    s.read("seed", c.data.seed);
    s.read("noise", c.data.noise);
    s.read("csv", c.data.csv);
    s.read("sft_size", c.data.sizes.sft);
    s.read("grpo1_size", c.data.sizes.grpo1);
    s.read("grpo2_size", c.data.sizes.grpo2);
    s.read("test_size", c.data.sizes.test);
    s.finish();
  }
  // Stage seeds follow the master seed unless set explicitly.
  c.set_seed(c.data.seed);
  {
    Section s(root, "policy");
    s.read("rank", c.policy.rank);
    s.read("recent_window", c.policy.recent_window);
    s.read("reasoning_cap", c.policy.reasoning_cap);
    s.read("explanation_cap", c.policy.explanation_cap);
    s.read("init_scale", c.policy.init_scale);
    s.finish();
  }
  {
    Section s(root, "sft");
    s.read("epochs", c.sft.epochs);
    s.read("lr", c.sft.lr);
    s.read("accumulation", c.sft.accumulation);
    s.read("fallibility", c.sft.fallibility);
    s.read("temperature", c.sft.temperature);
    s.finish();
  }
  {
    Section s(root, "grpo1");
    read_grpo(s, c.grpo1);
  }
  {
    Section s(root, "grpo2");
    read_grpo(s, c.grpo2);
  }
  {
    Section s(root, "eval");
    s.read("output_dir", c.eval.output_dir);
    s.read("lexicon", c.eval.lexicon);
    s.read("baseline_lr", c.eval.baseline_lr);
    s.read("baseline_iters", c.eval.baseline_iters);
    s.finish();
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

std::string RunConfig::to_json_text() const {
  json j;
  j["data"] = {{"num_features", data.num_features}, {"n_cases", data.n_cases},
               {"seed", data.seed},                 {"noise", data.noise},
               {"csv", data.csv},                   {"sft_size", data.sizes.sft},
               {"grpo1_size", data.sizes.grpo1},    {"grpo2_size", data.sizes.grpo2},
               {"test_size", data.sizes.test}};
  j["policy"] = {{"rank", policy.rank},
                 {"recent_window", policy.recent_window},
                 {"reasoning_cap", policy.reasoning_cap},
                 {"explanation_cap", policy.explanation_cap},
                 {"init_scale", policy.init_scale}};
  j["sft"] = {{"epochs", sft.epochs},
              {"lr", sft.lr},
              {"accumulation", sft.accumulation},
              {"fallibility", sft.fallibility},
              {"temperature", sft.temperature}};
  j["grpo1"] = grpo_json(grpo1);
  j["grpo2"] = grpo_json(grpo2);
  j["eval"] = {{"output_dir", eval.output_dir},
               {"lexicon", eval.lexicon},
               {"baseline_lr", eval.baseline_lr},
               {"baseline_iters", eval.baseline_iters}};
  return j.dump(2);
}

std::uint64_t RunConfig::hash() const { return fnv1a64(to_json_text()); }

}  // namespace lexma::cli
