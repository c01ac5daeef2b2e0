#pragma once

// Test-split runners for CoT, FLEx, Self-Refine, RAG and Self-Consistency,
// each optionally stacked with a summary.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "flex/error_mining.hpp"
#include "flex/gateway.hpp"
#include "flex/tasks.hpp"

namespace flex {

enum class Method { cot, flex, self_refine, rag, self_consistency };

std::string to_string(Method m);
Method parse_method(std::string_view s);

struct EvalConfig {
  Method method = Method::cot;
  bool flex_stacked = false;
  std::optional<std::string> summary;
  int sc_samples = 5;
  double sc_temperature = 0.7;
  int rag_k = 1;
  int parallelism = 4;
  std::uint64_t seed = 0;
  int max_new_tokens = 8192;

  // The summary injected into system prompts, if any.
  std::optional<std::string_view> active_summary() const;
  void validate() const;
};

// "cot", "flex", "self_refine", "self_refine+flex", ... A summary stacked on
// CoT is "flex".
std::string method_tag(const EvalConfig& config);

struct EvalRecord {
  std::string instance_id;
  std::string method;
  std::string response;
  std::vector<std::string> responses;
  Verdict verdict;
  std::optional<std::string> neighbor;
  std::optional<std::vector<std::optional<std::string>>> votes;
  std::optional<std::string> error;
};

void to_json(nlohmann::json& j, const EvalRecord& r);
void from_json(const nlohmann::json& j, EvalRecord& r);
std::vector<EvalRecord> load_records(const std::filesystem::path& path);
std::string records_jsonl(std::span<const EvalRecord> records);

struct RagEntry {
  std::string instance_id;
  std::string prompt_text;
  std::string solution;
  std::vector<double> embedding;
};

struct RagIndex {
  std::vector<RagEntry> entries;  // sorted by instance_id
};

std::vector<double> l2_normalize(std::span<const double> v);

// Indexes the correct training responses by their input text only.
RagIndex build_rag_index(const TrainRun& train, Gateway& retriever, int parallelism = 1);

// Indices of the k entries with the largest inner product, best first; ties
// go to the smaller instance_id.
std::vector<std::size_t> retrieve(const RagIndex& index, std::span<const double> query, int k = 1);

std::string rag_user_prompt(std::span<const RagEntry* const> neighbors, std::string_view task);

struct Vote {
  std::string answer;
  std::size_t sample = 0;  // first sample carrying the answer
  std::size_t count = 0;
};

// Majority over defined answers; ties go to the answer of the earliest sample
// holding a maximal count. Empty when no answer is defined.
std::optional<Vote> majority_vote(std::span<const std::optional<std::string>> answers);

// Trimmed, case-insensitive "none" (a trailing period is tolerated).
bool is_no_change(std::string_view changes);

extern const char* const kChangesSystem;
extern const char* const kChangesUser;
extern const char* const kReviseSystem;
extern const char* const kReviseUser;

std::string changes_prompt(std::string_view format, std::string_view task, std::string_view draft);
std::string revise_prompt(std::string_view format, std::string_view task, std::string_view draft,
                          std::string_view changes);

struct RunResult {
  std::vector<EvalRecord> records;  // sorted by instance_id
  std::vector<std::string> failures;
  // "id: reason" for instances left out of n.
  std::vector<std::string> skipped;
};

// Single-instance runners. Backend errors propagate.
EvalRecord evaluate_cot(const TaskInstance& t, const EvalConfig& config, Gateway& model);
EvalRecord evaluate_self_refine(const TaskInstance& t, const EvalConfig& config, Gateway& model);
EvalRecord evaluate_rag(const TaskInstance& t, const EvalConfig& config, Gateway& model, const RagIndex& index,
                        Gateway& retriever);
EvalRecord evaluate_self_consistency(const TaskInstance& t, const EvalConfig& config, Gateway& model);

// Runs the configured method over the test set. Per-instance backend
// failures are recorded as incorrect and listed in failures. `index` and
// `retriever` are required for RAG.
RunResult run_method(std::span<const TaskInstance> test, const EvalConfig& config, Gateway& model,
                     const RagIndex* index = nullptr, Gateway* retriever = nullptr);

RunResult run_cot(std::span<const TaskInstance> test, EvalConfig config, Gateway& model);
RunResult run_flex(std::span<const TaskInstance> test, EvalConfig config, std::string summary, Gateway& model);
RunResult run_self_refine(std::span<const TaskInstance> test, EvalConfig config, Gateway& model);
RunResult run_rag(std::span<const TaskInstance> test, EvalConfig config, Gateway& model, const RagIndex& index,
                  Gateway& retriever);
RunResult run_self_consistency(std::span<const TaskInstance> test, EvalConfig config, Gateway& model);
// Base method with the summary injected into every system prompt it issues.
RunResult run_stacked(std::span<const TaskInstance> test, EvalConfig config, std::string summary, Gateway& model,
                      const RagIndex* index = nullptr, Gateway* retriever = nullptr);

}  // namespace flex
