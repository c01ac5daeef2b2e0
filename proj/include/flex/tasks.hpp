#pragma once

// Dataset ingestion, prompt construction, answer extraction and the binary
// task scorer.

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace flex {

enum class DatasetKind { yes_no, numeric, constraint, generic };
enum class Split { train, test };
enum class ConstraintKind { all_caps, language_tag, word_limit, no_digits, json_only, custom_regex };
enum class FailureReason { no_tag, mismatch, constraint_violated };

std::string to_string(DatasetKind kind);
std::string to_string(Split split);
std::string to_string(ConstraintKind kind);
std::string to_string(FailureReason reason);

DatasetKind parse_dataset_kind(std::string_view s);
Split parse_split(std::string_view s);
ConstraintKind parse_constraint_kind(std::string_view s);
FailureReason parse_failure_reason(std::string_view s);

struct ConstraintSpec {
  ConstraintKind kind = ConstraintKind::all_caps;
  std::optional<std::string> argument;
};

struct TaskInstance {
  std::string id;
  std::string input;
  std::string gold;
  DatasetKind kind = DatasetKind::generic;
  std::optional<ConstraintSpec> constraint;
  Split split = Split::test;

  void validate() const;
};

void to_json(nlohmann::json& j, const TaskInstance& t);
void from_json(const nlohmann::json& j, TaskInstance& t);

struct PromptBundle {
  std::string system;
  std::string user;
};

struct Verdict {
  bool correct = false;
  std::optional<std::string> extracted;
  std::optional<FailureReason> failure_reason;
};

// Base system prompt for the dataset kind with an empty summary slot.
std::string system_template(DatasetKind kind);

// Dataset-specific output-format sentence (the {FORMAT} slot of Self-Refine).
std::string output_format(DatasetKind kind);

// Appends " " + summary when a non-empty summary is given.
std::string append_summary(std::string system, std::optional<std::string_view> summary);

PromptBundle build_prompt(const TaskInstance& instance, std::optional<std::string_view> summary = std::nullopt);

// Contents of the last case-insensitive <answer>...</answer> pair.
std::optional<std::string> extract_answer(std::string_view response);

// Response text with the final answer tag pair removed.
std::string strip_final_answer(std::string_view response);

std::string normalize_answer(std::string_view raw);

// Throws UnsupportedConstraint for kinds or arguments this checker cannot
// evaluate, and PreconditionError for malformed arguments.
bool check_constraint(std::string_view reasoning, const ConstraintSpec& spec);

// True when check_constraint can evaluate this spec.
bool constraint_supported(const ConstraintSpec& spec);

Verdict score(std::string_view response, const TaskInstance& instance);

// Loads a JSONL dataset. Lines without a "dataset" field take `kind`; lines
// whose field disagrees with `kind` are rejected.
std::vector<TaskInstance> load_dataset(const std::filesystem::path& path, std::optional<DatasetKind> kind = std::nullopt);

// Approximate token count: maximal letter runs, maximal digit runs and every
// other non-space character each count as one token.
std::size_t count_tokens(std::string_view text);

}  // namespace flex
