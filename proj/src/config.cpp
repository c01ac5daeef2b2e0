#include "flex/config.hpp"

#include <set>

#include "flex/errors.hpp"
#include "flex/io.hpp"

namespace flex {

using nlohmann::json;

namespace {

void check_keys(const json& j, std::string_view section, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError(std::string(section) + " must be an object");
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + std::string(section));
}

template <class T>
void read(const json& j, const char* key, T& out, std::string_view section) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("bad value for " + std::string(section) + "." + key);
  }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return {};
  const std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

BackendDescriptor backend_from(const json& j, const std::filesystem::path& base) {
  BackendDescriptor d = j.get<BackendDescriptor>();
  if (!j.contains("capabilities") && d.kind == BackendKind::mock) d.capabilities = {Capability::generate, Capability::embed};
  if (!d.mock_script.empty()) d.mock_script = resolve(base, d.mock_script.string());
  d.validate();
  return d;
}

}  // namespace

BackendDescriptor default_model_backend() {
  BackendDescriptor d;
  d.capabilities = {Capability::generate, Capability::embed};
  return d;
}

void PipelineConfig::validate() const {
  if (clustering.restarts < 1) throw ConfigError("clustering.restarts must be >= 1");
  if (clustering.max_iter < 1) throw ConfigError("clustering.max_iter must be >= 1");
  if (clustering.k_min < 1 || clustering.k_max < clustering.k_min) throw ConfigError("clustering k range is invalid");
  if (verification.attempt_limit < 1) throw ConfigError("verification.attempt_limit must be >= 1");
  if (verification.backups < 0) throw ConfigError("verification.backups must be >= 0");
  if (summarization.samples_per_prompt < 1) throw ConfigError("summarization.samples_per_prompt must be >= 1");
  if (summarization.temperature < 0.0) throw ConfigError("summarization.temperature must be >= 0");
  if (summarization.samples_per_prompt > 1 && summarization.temperature <= 0.0)
    throw ConfigError("several summary samples need temperature > 0");
  if (evaluation.sc_samples < 1) throw ConfigError("evaluation.sc_samples must be >= 1");
  if (evaluation.sc_samples > 1 && evaluation.sc_temperature <= 0.0)
    throw ConfigError("self-consistency sampling needs temperature > 0");
  if (evaluation.rag_k < 1) throw ConfigError("evaluation.rag_k must be >= 1");
  if (evaluation.parallelism < 1) throw ConfigError("evaluation.parallelism must be >= 1");
  if (evaluation.max_new_tokens < 1) throw ConfigError("evaluation.max_new_tokens must be >= 1");
}

PipelineConfig config_from_json(const json& j, const std::filesystem::path& base) {
  check_keys(j, "config", {"backends", "datasets", "clustering", "verification", "summarization", "evaluation"});
  PipelineConfig c;
  c.backends.model = default_model_backend();
  if (j.contains("backends")) {
    const auto& b = j["backends"];
    check_keys(b, "backends", {"model", "summarizer", "retriever"});
    if (b.contains("model")) c.backends.model = backend_from(b["model"], base);
    if (b.contains("summarizer")) c.backends.summarizer = backend_from(b["summarizer"], base);
    if (b.contains("retriever")) c.backends.retriever = backend_from(b["retriever"], base);
  }
  if (j.contains("datasets")) {
    const auto& d = j["datasets"];
    check_keys(d, "datasets", {"train", "test", "kind"});
    c.datasets.train = resolve(base, d.value("train", std::string()));
    c.datasets.test = resolve(base, d.value("test", std::string()));
    if (d.contains("kind")) c.datasets.kind = parse_dataset_kind(d["kind"].get<std::string>());
  }
  if (j.contains("clustering")) {
    const auto& s = j["clustering"];
    check_keys(s, "clustering", {"restarts", "max_iter", "k_min", "k_max", "seed"});
    read(s, "restarts", c.clustering.restarts, "clustering");
    read(s, "max_iter", c.clustering.max_iter, "clustering");
    read(s, "k_min", c.clustering.k_min, "clustering");
    read(s, "k_max", c.clustering.k_max, "clustering");
    read(s, "seed", c.clustering.seed, "clustering");
  }
  if (j.contains("verification")) {
    const auto& s = j["verification"];
    check_keys(s, "verification", {"attempt_limit", "backups"});
    read(s, "attempt_limit", c.verification.attempt_limit, "verification");
    read(s, "backups", c.verification.backups, "verification");
  }
  if (j.contains("summarization")) {
    const auto& s = j["summarization"];
    check_keys(s, "summarization", {"prompts_dir", "samples_per_prompt", "temperature", "seed"});
    c.summarization.prompts_dir = resolve(base, s.value("prompts_dir", std::string()));
    read(s, "samples_per_prompt", c.summarization.samples_per_prompt, "summarization");
    read(s, "temperature", c.summarization.temperature, "summarization");
    read(s, "seed", c.summarization.seed, "summarization");
  }
  if (j.contains("evaluation")) {
    const auto& s = j["evaluation"];
    check_keys(s, "evaluation", {"sc_samples", "sc_temperature", "rag_k", "parallelism", "seed", "max_new_tokens"});
    read(s, "sc_samples", c.evaluation.sc_samples, "evaluation");
    read(s, "sc_temperature", c.evaluation.sc_temperature, "evaluation");
    read(s, "rag_k", c.evaluation.rag_k, "evaluation");
    read(s, "parallelism", c.evaluation.parallelism, "evaluation");
    read(s, "seed", c.evaluation.seed, "evaluation");
    read(s, "max_new_tokens", c.evaluation.max_new_tokens, "evaluation");
  }
  c.validate();
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j, path.parent_path());
}

json config_to_json(const PipelineConfig& c) {
  json backends = {{"model", c.backends.model}};
  if (c.backends.summarizer) backends["summarizer"] = *c.backends.summarizer;
  if (c.backends.retriever) backends["retriever"] = *c.backends.retriever;
  json datasets = {{"train", c.datasets.train.string()}, {"test", c.datasets.test.string()}};
  if (c.datasets.kind) datasets["kind"] = to_string(*c.datasets.kind);
  return {{"backends", backends},
          {"datasets", datasets},
          {"clustering",
           {{"restarts", c.clustering.restarts},
            {"max_iter", c.clustering.max_iter},
            {"k_min", c.clustering.k_min},
            {"k_max", c.clustering.k_max},
            {"seed", c.clustering.seed}}},
          {"verification", {{"attempt_limit", c.verification.attempt_limit}, {"backups", c.verification.backups}}},
          {"summarization",
           {{"prompts_dir", c.summarization.prompts_dir.string()},
            {"samples_per_prompt", c.summarization.samples_per_prompt},
            {"temperature", c.summarization.temperature},
            {"seed", c.summarization.seed}}},
          {"evaluation",
           {{"sc_samples", c.evaluation.sc_samples},
            {"sc_temperature", c.evaluation.sc_temperature},
            {"rag_k", c.evaluation.rag_k},
            {"parallelism", c.evaluation.parallelism},
            {"seed", c.evaluation.seed},
            {"max_new_tokens", c.evaluation.max_new_tokens}}}};
}

}  // namespace flex
