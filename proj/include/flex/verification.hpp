#pragma once

// The explanation-verification loop: an explanation is accepted only once
// re-running the frozen model on [x; r; f] yields a correct answer. The
// AnnotationStore holds the per-cluster queue, the append-only attempt log and
// the verified set, and persists all of it after every mutation.

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "flex/clustering.hpp"
#include "flex/error_mining.hpp"
#include "flex/gateway.hpp"
#include "flex/tasks.hpp"

namespace flex {

enum class QueueStatus { pending, in_progress, verified, exhausted };
enum class Provenance { human, auto_unverified, solution_only };

std::string to_string(QueueStatus s);
std::string to_string(Provenance p);
QueueStatus parse_queue_status(std::string_view s);
Provenance parse_provenance(std::string_view s);

struct AnnotationQueueItem {
  int cluster_index = 0;
  std::size_t cluster_size = 0;
  double weight = 0.0;
  std::vector<std::string> candidates;
  std::size_t active_index = 0;
  QueueStatus status = QueueStatus::pending;
  int failures_on_active = 0;

  const std::string& active_case() const { return candidates.at(active_index); }
};

struct VerificationAttempt {
  std::string case_id;
  std::string explanation;
  std::string model_response;
  Verdict verdict;
  int attempt_number = 0;
  std::string timestamp;
};

// Transport-level failure during an attempt. Kept apart from the scored
// attempt log and never counted toward the failure limit.
struct ErroredAttempt {
  std::string case_id;
  std::string explanation;
  std::string error;
  std::string timestamp;
};

struct VerifiedExplanation {
  std::string case_id;
  std::string x;
  std::string r;
  std::string y;
  std::string f;
  int cluster_index = 0;
  Provenance provenance = Provenance::human;
  std::vector<VerificationAttempt> attempts;
};

void to_json(nlohmann::json& j, const Verdict& v);
void from_json(const nlohmann::json& j, Verdict& v);
void to_json(nlohmann::json& j, const AnnotationQueueItem& q);
void from_json(const nlohmann::json& j, AnnotationQueueItem& q);
void to_json(nlohmann::json& j, const VerificationAttempt& a);
void from_json(const nlohmann::json& j, VerificationAttempt& a);
void to_json(nlohmann::json& j, const ErroredAttempt& a);
void from_json(const nlohmann::json& j, ErroredAttempt& a);
void to_json(nlohmann::json& j, const VerifiedExplanation& v);
void from_json(const nlohmann::json& j, VerifiedExplanation& v);

std::vector<VerifiedExplanation> load_explanations(const std::filesystem::path& path);
std::string explanations_jsonl(std::span<const VerifiedExplanation> explanations);

// System: the dataset's base prompt. User: x, r and f joined by newlines.
PromptBundle verification_prompt(const ErrorCase& error_case, std::string_view explanation);

// Greedy re-evaluation with the explanation appended. Backend failures
// propagate to the caller.
VerificationAttempt attempt_verification(const ErrorCase& error_case, std::string_view explanation, Gateway& model,
                                         int attempt_number);

// Moves to the next candidate; marks the item exhausted when none remain.
AnnotationQueueItem advance_on_failure(AnnotationQueueItem item);

// Critique prompt used for the unverified-explanation ablation.
std::string auto_explain_prompt(const ErrorCase& error_case);

VerifiedExplanation auto_explain(const ErrorCase& error_case, int cluster_index, Gateway& summarizer);

VerifiedExplanation solution_only(const ErrorCase& error_case, int cluster_index);

struct AnnotationOptions {
  int attempt_limit = 3;
  // Where annotation-state.json and explanations.jsonl live; empty disables
  // persistence.
  std::filesystem::path state_dir;
};

struct CaseDetail {
  ErrorCase error_case;
  int cluster_index = 0;
  std::vector<VerificationAttempt> attempts;
  std::vector<ErroredAttempt> errored;
};

class AnnotationStore {
 public:
  // Resumes from state_dir/annotation-state.json when it exists.
  AnnotationStore(std::vector<ErrorCase> cases, const ClusterSelection& selection, Gateway& model,
                  AnnotationOptions options = {});

  std::vector<AnnotationQueueItem> queue() const;
  CaseDetail case_detail(const std::string& case_id) const;

  // Scores one explanation draft for the active candidate of its cluster.
  // Throws NotFoundError, ConflictError (cluster closed, or case not active)
  // or PreconditionError (empty draft). Transport failures are logged as
  // errored attempts and rethrown.
  VerificationAttempt submit(const std::string& case_id, const std::string& explanation);

  // Turns the latest passing attempt of the active candidate into the
  // cluster's verified explanation. Concurrent or repeated finalization
  // raises ConflictError.
  VerifiedExplanation finalize(int cluster_index);

  // Gives up on the active candidate before the failure limit (batch mode).
  AnnotationQueueItem abandon_active(int cluster_index);

  std::vector<VerifiedExplanation> explanations() const;

  const ClusterSelection& selection() const { return selection_; }
  const AnnotationOptions& options() const { return options_; }

  static constexpr const char* kStateFile = "annotation-state.json";
  static constexpr const char* kExplanationsFile = "explanations.jsonl";

 private:
  std::size_t item_position(int cluster_index) const;
  void persist_locked() const;
  void load_state(const std::filesystem::path& path);

  std::map<std::string, ErrorCase> cases_;
  std::map<std::string, int> case_cluster_;
  ClusterSelection selection_;
  Gateway& model_;
  AnnotationOptions options_;

  mutable std::mutex state_mutex_;
  std::vector<std::unique_ptr<std::mutex>> cluster_mutexes_;
  std::vector<AnnotationQueueItem> queue_;
  std::map<std::string, std::vector<VerificationAttempt>> attempts_;
  std::vector<ErroredAttempt> errored_;
  std::map<int, VerifiedExplanation> verified_;
};

struct BatchOutcome {
  std::vector<VerifiedExplanation> verified;
  std::vector<int> exhausted_clusters;
};

// Scripted verification: each active candidate tries its drafts in order
// until one passes (then the cluster is finalized), the failure limit moves
// the queue on, or the drafts run out (the candidate is abandoned).
BatchOutcome verify_batch(AnnotationStore& store, const std::map<std::string, std::vector<std::string>>& drafts);

// Drafts file: JSONL of {"case_id": str, "explanation": str}, in try order.
std::map<std::string, std::vector<std::string>> load_drafts(const std::filesystem::path& path);

}  // namespace flex
