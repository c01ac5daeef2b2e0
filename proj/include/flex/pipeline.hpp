#pragma once

// Pipeline stages over a run directory. Each stage reads its upstream
// artifacts (verifying recorded hashes), writes its outputs atomically and
// records a manifest. Stages hold the run-directory lock while running.

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "flex/config.hpp"
#include "flex/eval.hpp"
#include "flex/gateway.hpp"
#include "flex/metrics.hpp"
#include "flex/summary.hpp"
#include "flex/verification.hpp"

namespace flex {

namespace artifacts {
inline constexpr const char* kTrainRecords = "train-records.jsonl";
inline constexpr const char* kErrors = "errors.jsonl";
inline constexpr const char* kClusters = "clusters.json";
inline constexpr const char* kAnnotationState = "annotation-state.json";
inline constexpr const char* kExplanations = "explanations.jsonl";
inline constexpr const char* kCandidates = "candidates.json";
inline constexpr const char* kScores = "scores.json";
inline constexpr const char* kSummary = "summary.json";
inline constexpr const char* kReportText = "report.txt";
inline constexpr const char* kReportCsv = "report.csv";
std::string records(const std::string& tag);
std::string report(const std::string& tag);
}  // namespace artifacts

// Gateways for the configured backends. Unset summarizer/retriever roles
// share the model gateway.
class BackendPool {
 public:
  explicit BackendPool(const PipelineConfig& config);
  BackendPool(std::shared_ptr<Backend> model, std::shared_ptr<Backend> summarizer = nullptr,
              std::shared_ptr<Backend> retriever = nullptr);

  Gateway& model() { return *model_; }
  Gateway& summarizer() { return summarizer_ ? *summarizer_ : *model_; }
  Gateway& retriever() { return retriever_ ? *retriever_ : *model_; }

  nlohmann::json descriptors() const;

 private:
  std::unique_ptr<Gateway> model_;
  std::unique_ptr<Gateway> summarizer_;
  std::unique_ptr<Gateway> retriever_;
};

// train-records.jsonl: {"instance", "response", "verdict"} per line.
TrainRun load_train_run(const std::string& jsonl);
std::string train_run_jsonl(const TrainRun& run);
std::vector<ErrorCase> parse_errors(const std::string& jsonl, const std::string& source);

struct CollectOutcome {
  std::size_t train = 0;
  std::size_t errors = 0;
};

// Throws PreconditionError("nothing to annotate") when the model makes no
// training errors; the train records are still written.
CollectOutcome stage_collect(const std::filesystem::path& run_dir, const PipelineConfig& config, BackendPool& pool);

enum class SelectionStrategy { kmeans, random, task_type };
SelectionStrategy parse_selection_strategy(std::string_view s);

struct ClusterStageOptions {
  SelectionStrategy strategy = SelectionStrategy::kmeans;
  // Fixed k for kmeans (skips knee selection) or the draw size for random.
  std::optional<int> k;
};

ClusterSelection stage_cluster(const std::filesystem::path& run_dir, const PipelineConfig& config, BackendPool& pool,
                               const ClusterStageOptions& options = {});

enum class ExplanationMode { human, auto_generated, solution_only };
ExplanationMode parse_explanation_mode(std::string_view s);

struct VerifyStageOptions {
  ExplanationMode mode = ExplanationMode::human;
  std::filesystem::path drafts;  // human mode
};

BatchOutcome stage_verify_batch(const std::filesystem::path& run_dir, const PipelineConfig& config, BackendPool& pool,
                                const VerifyStageOptions& options);

// Opens the annotation store over the run directory (for the service).
std::unique_ptr<AnnotationStore> open_annotation_store(const std::filesystem::path& run_dir,
                                                       const PipelineConfig& config, BackendPool& pool);
// Records the annotate manifest for the current store state.
void record_annotation_manifest(const std::filesystem::path& run_dir, const PipelineConfig& config,
                                BackendPool& pool, const std::string& variant, const std::string& started);

CandidateBatch stage_summarize(const std::filesystem::path& run_dir, const PipelineConfig& config, BackendPool& pool);

// Raw-explanation ablation: summary.json holds the newline-joined
// explanations instead of a distilled summary.
SelectedSummary stage_raw_summary(const std::filesystem::path& run_dir);

struct SelectStageOptions {
  Weighting weighting = Weighting::cluster_weighted;
  Rank rank = Rank::best;
};

SelectedSummary stage_select(const std::filesystem::path& run_dir, const PipelineConfig& config, BackendPool& pool,
                             const SelectStageOptions& options = {});

struct EvaluateStageOptions {
  Method method = Method::cot;
  bool stacked = false;
  // Defaults to the run's summary.json when a summary is needed.
  std::optional<std::filesystem::path> summary_path;
};

struct EvaluateOutcome {
  std::string tag;
  MetricsReport report;
  RunResult result;
};

EvaluateOutcome stage_evaluate(const std::filesystem::path& run_dir, const PipelineConfig& config, BackendPool& pool,
                               const EvaluateStageOptions& options);

struct TransferStageOptions {
  std::filesystem::path summary_path;
  std::string source_label;
};

EvaluateOutcome stage_transfer(const std::filesystem::path& run_dir, const PipelineConfig& config, BackendPool& pool,
                               const TransferStageOptions& options);

// Renders report.txt and report.csv from every report-*.json in the run.
std::string stage_report(const std::filesystem::path& run_dir);

}  // namespace flex
