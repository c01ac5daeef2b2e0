#pragma once

// Accuracy, accuracy delta and error-rate reduction against a CoT baseline,
// summary token overhead, and plain-text/CSV comparison tables.

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace flex {

struct EvalRecord;

// 100 * (acc_method - acc_cot) / (100 - acc_cot); empty when acc_cot = 100.
std::optional<double> error_rate_reduction(double acc_method, double acc_cot);

double round2(double value);

double accuracy_percent(std::span<const EvalRecord> records);

struct MetricsReport {
  std::string method;
  std::size_t n = 0;
  double accuracy = 0.0;
  std::optional<double> delta_acc_vs_cot;
  std::optional<double> err;
  std::vector<std::string> failures;
  std::vector<std::string> skipped;
  // Set for transfer runs.
  std::optional<std::string> source;
  std::optional<std::string> target;
  std::optional<std::size_t> summary_tokens;
};

// Compares against the CoT records when given; both sets must cover the same
// instances. ERR and the delta are rounded to two decimals.
MetricsReport compute_metrics(std::span<const EvalRecord> records, std::span<const EvalRecord> cot_records,
                              std::string method);
MetricsReport compute_metrics(std::span<const EvalRecord> records, std::string method);

void to_json(nlohmann::json& j, const MetricsReport& r);
void from_json(const nlohmann::json& j, MetricsReport& r);

struct SummaryOverhead {
  std::size_t tokens = 0;
  bool within_observed_range = true;
};

inline constexpr std::size_t kSummaryTokensLow = 73;
inline constexpr std::size_t kSummaryTokensHigh = 301;

// Token count of a summary; logs a warning (never throws) outside 73-301.
SummaryOverhead summary_overhead(std::string_view summary);

std::string render_table(std::span<const MetricsReport> reports);
std::string render_csv(std::span<const MetricsReport> reports);

}  // namespace flex
