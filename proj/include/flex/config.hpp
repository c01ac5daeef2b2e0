#pragma once

// Pipeline configuration file (JSON). Every section and key is optional;
// omitted values take the defaults below. Unknown keys are rejected at every
// level. Relative paths resolve against the config file's directory.

#include <cstdint>
#include <filesystem>
#include <optional>

#include "flex/gateway.hpp"
#include "flex/tasks.hpp"

namespace flex {

struct BackendsConfig {
  BackendDescriptor model;
  // Fall back to the model backend when unset.
  std::optional<BackendDescriptor> summarizer;
  std::optional<BackendDescriptor> retriever;
};

struct DatasetsConfig {
  std::filesystem::path train;
  std::filesystem::path test;
  std::optional<DatasetKind> kind;
};

struct ClusteringConfig {
  int restarts = 10;
  int max_iter = 300;
  int k_min = 2;
  int k_max = 20;
  std::uint64_t seed = 0;
};

struct VerificationConfig {
  int attempt_limit = 3;
  int backups = 4;
};

struct SummarizationConfig {
  // Empty: the five built-in prompts.
  std::filesystem::path prompts_dir;
  int samples_per_prompt = 10;
  double temperature = 1.0;
  std::uint64_t seed = 0;
};

struct EvaluationConfig {
  int sc_samples = 5;
  double sc_temperature = 0.7;
  int rag_k = 1;
  int parallelism = 4;
  std::uint64_t seed = 0;
  int max_new_tokens = 8192;
};

struct PipelineConfig {
  BackendsConfig backends;
  DatasetsConfig datasets;
  ClusteringConfig clustering;
  VerificationConfig verification;
  SummarizationConfig summarization;
  EvaluationConfig evaluation;

  const BackendDescriptor& summarizer() const { return backends.summarizer ? *backends.summarizer : backends.model; }
  const BackendDescriptor& retriever() const { return backends.retriever ? *backends.retriever : backends.model; }

  void validate() const;
};

// Default model backend: the offline mock with generate and embed.
BackendDescriptor default_model_backend();

PipelineConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
PipelineConfig load_config(const std::filesystem::path& path);
// Full effective configuration, as echoed into run manifests.
nlohmann::json config_to_json(const PipelineConfig& config);

}  // namespace flex
