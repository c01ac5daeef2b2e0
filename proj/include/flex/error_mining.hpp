#pragma once

// Builds the training error set, embeds each (input, response) pair, and
// turns the embeddings into a ClusterSelection. Random and task-type
// selection are the ablation alternatives to clustering.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flex/clustering.hpp"
#include "flex/gateway.hpp"
#include "flex/tasks.hpp"

namespace flex {

struct ErrorCase {
  TaskInstance instance;
  std::string response;
  std::optional<EmbeddingVector> embedding;

  const std::string& id() const { return instance.id; }
  const std::string& x() const { return instance.input; }
  const std::string& r() const { return response; }
  const std::string& y() const { return instance.gold; }
};

void to_json(nlohmann::json& j, const ErrorCase& e);
void from_json(const nlohmann::json& j, ErrorCase& e);

// Newline-joins the non-empty segments, so an empty trailing segment leaves
// the text unchanged.
std::string join_segments(std::initializer_list<std::string_view> segments);

// One CoT response per training instance, in input order.
struct TrainRun {
  std::vector<TaskInstance> instances;
  std::vector<std::string> responses;
  std::vector<Verdict> verdicts;
};

TrainRun run_train_cot(std::span<const TaskInstance> train, Gateway& model, int parallelism = 1);

std::vector<ErrorCase> errors_from_run(const TrainRun& run);

// Instances the model gets wrong, each paired with its CoT response.
std::vector<ErrorCase> collect_errors(std::span<const TaskInstance> train, Gateway& model, int parallelism = 1);

// Fills each case's embedding with phi(x + "\n" + r).
void embed_errors(std::vector<ErrorCase>& cases, Gateway& model, int parallelism = 1);

struct MiningOptions {
  KMeansOptions kmeans;
  int k_min = 2;
  int k_max = 20;
  int backups = 4;
  std::uint64_t seed = 0;
};

struct MiningResult {
  ClusterSelection selection;
  ClusterModel model;
};

// Sweep, knee selection and representatives over embedded cases.
MiningResult cluster_errors(std::span<const ErrorCase> cases, const MiningOptions& options);

// k singleton clusters drawn uniformly at random, uniform weights.
ClusterSelection random_selection(std::span<const ErrorCase> cases, int k, std::uint64_t seed);

// One random error per constraint kind (or dataset kind when unconstrained).
ClusterSelection task_type_selection(std::span<const ErrorCase> cases, std::uint64_t seed);

}  // namespace flex
