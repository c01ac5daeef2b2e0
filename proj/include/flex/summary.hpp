#pragma once

// Candidate summary generation from the verified explanation set, the
// embedding-delta objective and summary selection.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "flex/clustering.hpp"
#include "flex/gateway.hpp"
#include "flex/verification.hpp"

namespace flex {

enum class PromptSource { author, llm };
enum class Weighting { cluster_weighted, unweighted };
enum class Rank { best, median, worst };

std::string to_string(PromptSource s);
std::string to_string(Weighting w);
std::string to_string(Rank r);
PromptSource parse_prompt_source(std::string_view s);
Weighting parse_weighting(std::string_view s);
Rank parse_rank(std::string_view s);

struct SummaryPrompt {
  std::string name;
  std::string template_text;
  PromptSource source = PromptSource::author;
};

// The five shipped prompts, three author-written and two model-written.
std::vector<SummaryPrompt> default_summary_prompts();

// One prompt per regular file, in filename order. Optional leading header
// lines "# name: ..." and "# source: author|llm"; the rest is the template.
std::vector<SummaryPrompt> load_summary_prompts(const std::filesystem::path& dir);
void write_summary_prompts(const std::filesystem::path& dir, std::span<const SummaryPrompt> prompts);

struct CandidateSummary {
  int index = 0;
  std::string text;
  std::string prompt_name;
  int sample_index = 0;
};

struct CandidateBatch {
  std::vector<CandidateSummary> candidates;
  // Prompts whose sampling failed; their candidates are missing.
  std::vector<std::string> incomplete_prompts;
};

// JSON array of {"prompt", "response", "feedback"} objects.
std::string serialize_feedback(std::span<const VerifiedExplanation> explanations);

// Summarizer user message: template, blank line, serialized explanations.
std::string summary_request_text(const SummaryPrompt& prompt, std::span<const VerifiedExplanation> explanations);

struct GenerationOptions {
  int samples_per_prompt = 10;
  double temperature = 1.0;
  std::uint64_t seed = 0;
};

CandidateBatch generate_candidates(std::span<const VerifiedExplanation> explanations,
                                   std::span<const SummaryPrompt> prompts, Gateway& summarizer,
                                   const GenerationOptions& options = {});

std::vector<double> vector_difference(std::span<const double> a, std::span<const double> b);

// phi(x + r + f) - phi(x + r), newline-joined.
std::vector<double> compute_delta_f(const VerifiedExplanation& e, Gateway& embedder);
// phi(x + r + s) - phi(x + r), newline-joined.
std::vector<double> compute_delta_s(const VerifiedExplanation& e, std::string_view summary, Gateway& embedder);

// Cosine similarity; a zero-norm operand yields 0 with a warning.
double cosine_or_zero(std::span<const double> a, std::span<const double> b);

// J = sum_i w_i cos(delta_f_i, delta_s_i).
double weighted_score(std::span<const std::vector<double>> delta_f, std::span<const std::vector<double>> delta_s,
                      std::span<const double> weights);

// Per-explanation weights: cluster weights renormalized over the clusters
// that produced an explanation, or 1/|F| when unweighted.
std::vector<double> explanation_weights(std::span<const VerifiedExplanation> explanations,
                                        const ClusterSelection& selection, Weighting weighting);

// Embeddings of [x; r] and the explanation deltas, computed once per case.
struct DeltaCache {
  std::vector<std::vector<double>> base;
  std::vector<std::vector<double>> delta_f;
};

DeltaCache build_delta_cache(std::span<const VerifiedExplanation> explanations, Gateway& embedder, int parallelism = 1);

struct ScoreEntry {
  int index = 0;
  double score = 0.0;
};

struct SummaryScoreTable {
  std::vector<ScoreEntry> scores;  // in candidate order
  Weighting weighting = Weighting::cluster_weighted;
  int selected = 0;
};

// First index attaining the maximum.
int argmax_first(std::span<const double> values);

SummaryScoreTable score_candidates(std::span<const CandidateSummary> candidates,
                                   std::span<const VerifiedExplanation> explanations, std::span<const double> weights,
                                   Weighting weighting, Gateway& embedder, int parallelism = 1);

struct SelectedSummary {
  std::string text;
  std::string source_run_id;
  int index = 0;
  double score = 0.0;
  Rank rank = Rank::best;
  // All candidates sorted by score descending, ties toward smaller index.
  std::vector<ScoreEntry> ranking;
};

// Ranking order used for best/median/worst picks.
std::vector<ScoreEntry> rank_scores(std::span<const ScoreEntry> scores);

// best: the argmax; median: descending rank floor(L/2); worst: the minimum
// (ties toward the smaller index in every case).
SelectedSummary select_summary(const SummaryScoreTable& table, std::span<const CandidateSummary> candidates,
                               Rank rank = Rank::best, std::string source_run_id = {});

void to_json(nlohmann::json& j, const SummaryPrompt& p);
void to_json(nlohmann::json& j, const CandidateSummary& c);
void from_json(const nlohmann::json& j, CandidateSummary& c);
void to_json(nlohmann::json& j, const CandidateBatch& b);
void from_json(const nlohmann::json& j, CandidateBatch& b);
void to_json(nlohmann::json& j, const ScoreEntry& s);
void from_json(const nlohmann::json& j, ScoreEntry& s);
void to_json(nlohmann::json& j, const SelectedSummary& s);
void from_json(const nlohmann::json& j, SelectedSummary& s);

// {"candidates": [...], "scores": [{"l", "J"}], "selected_l", "weighting"}
nlohmann::json score_artifact(std::span<const CandidateSummary> candidates, const SummaryScoreTable& table);
SummaryScoreTable table_from_artifact(const nlohmann::json& j);

}  // namespace flex
