#include "flex/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "flex/errors.hpp"
#include "flex/eval.hpp"
#include "flex/log.hpp"

namespace flex {

using nlohmann::json;

std::optional<double> error_rate_reduction(double acc_method, double acc_cot) {
  if (acc_cot >= 100.0) return std::nullopt;
  return 100.0 * (acc_method - acc_cot) / (100.0 - acc_cot);
}

double round2(double value) {
  const double r = std::round(value * 100.0) / 100.0;
  return r == 0.0 ? 0.0 : r;  // no negative zero
}

double accuracy_percent(std::span<const EvalRecord> records) {
  if (records.empty()) throw PreconditionError("accuracy of an empty record set");
  const auto correct = std::count_if(records.begin(), records.end(), [](const EvalRecord& r) { return r.verdict.correct; });
  return 100.0 * static_cast<double>(correct) / static_cast<double>(records.size());
}

namespace {

MetricsReport base_report(std::span<const EvalRecord> records, std::string method) {
  MetricsReport r;
  r.method = std::move(method);
  r.n = records.size();
  r.accuracy = accuracy_percent(records);
  for (const auto& rec : records)
    if (rec.error) r.failures.push_back(rec.instance_id);
  return r;
}

}  // namespace

MetricsReport compute_metrics(std::span<const EvalRecord> records, std::string method) {
  return base_report(records, std::move(method));
}

MetricsReport compute_metrics(std::span<const EvalRecord> records, std::span<const EvalRecord> cot_records,
                              std::string method) {
  std::set<std::string> a, b;
  for (const auto& r : records) a.insert(r.instance_id);
  for (const auto& r : cot_records) b.insert(r.instance_id);
  if (a != b || a.size() != records.size() || b.size() != cot_records.size())
    throw PreconditionError("method and CoT records cover different instance sets");
  MetricsReport r = base_report(records, std::move(method));
  const double cot = accuracy_percent(cot_records);
  r.delta_acc_vs_cot = round2(r.accuracy - cot);
  if (const auto err = error_rate_reduction(r.accuracy, cot)) r.err = round2(*err);
  return r;
}

void to_json(json& j, const MetricsReport& r) {
  j = {{"method", r.method},
       {"n", r.n},
       {"accuracy", r.accuracy},
       {"delta_acc_vs_cot", r.delta_acc_vs_cot ? json(*r.delta_acc_vs_cot) : json(nullptr)},
       {"err", r.err ? json(*r.err) : json(nullptr)},
       {"failures", r.failures}};
  if (!r.skipped.empty()) j["skipped"] = r.skipped;
  if (r.source) j["source"] = *r.source;
  if (r.target) j["target"] = *r.target;
  if (r.summary_tokens) j["summary_tokens"] = *r.summary_tokens;
}

void from_json(const json& j, MetricsReport& r) {
  r = MetricsReport{};
  r.method = j.at("method").get<std::string>();
  r.n = j.at("n").get<std::size_t>();
  r.accuracy = j.at("accuracy").get<double>();
  if (!j.value("delta_acc_vs_cot", json()).is_null()) r.delta_acc_vs_cot = j["delta_acc_vs_cot"].get<double>();
  if (!j.value("err", json()).is_null()) r.err = j["err"].get<double>();
  r.failures = j.value("failures", std::vector<std::string>{});
  r.skipped = j.value("skipped", std::vector<std::string>{});
  if (j.contains("source")) r.source = j["source"].get<std::string>();
  if (j.contains("target")) r.target = j["target"].get<std::string>();
  if (j.contains("summary_tokens")) r.summary_tokens = j["summary_tokens"].get<std::size_t>();
}

SummaryOverhead summary_overhead(std::string_view summary) {
  SummaryOverhead o;
  o.tokens = count_tokens(summary);
  o.within_observed_range = o.tokens >= kSummaryTokensLow && o.tokens <= kSummaryTokensHigh;
  if (!o.within_observed_range)
    log::warn("summary has " + std::to_string(o.tokens) + " tokens, outside the typical " +
              std::to_string(kSummaryTokensLow) + "-" + std::to_string(kSummaryTokensHigh) + " range");
  return o;
}

namespace {

std::string fmt2(double v, bool sign = false) {
  char buf[64];
  std::snprintf(buf, sizeof buf, sign ? "%+.2f" : "%.2f", v);
  return buf;
}

std::vector<std::vector<std::string>> rows_of(std::span<const MetricsReport> reports) {
  std::vector<std::vector<std::string>> rows;
  rows.push_back({"method", "n", "accuracy", "delta_acc", "err", "failures"});
  for (const auto& r : reports) {
    std::string name = r.method;
    if (r.source && r.target) name += " [" + *r.source + " -> " + *r.target + "]";
    rows.push_back({name, std::to_string(r.n), fmt2(r.accuracy),
                    r.delta_acc_vs_cot ? fmt2(*r.delta_acc_vs_cot, true) : "-", r.err ? fmt2(*r.err) : "-",
                    std::to_string(r.failures.size())});
  }
  return rows;
}

}  // namespace

std::string render_table(std::span<const MetricsReport> reports) {
  const auto rows = rows_of(reports);
  std::vector<std::size_t> width(rows.front().size(), 0);
  for (const auto& row : rows)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  std::ostringstream out;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      const auto& cell = rows[r][c];
      const std::string pad(width[c] - cell.size(), ' ');
      if (c == 0) out << cell << pad;
      else out << "  " << pad << cell;
    }
    out << "\n";
    if (r == 0) {
      std::size_t total = 0;
      for (auto w : width) total += w + 2;
      out << std::string(total - 2, '-') << "\n";
    }
  }
  return out.str();
}

std::string render_csv(std::span<const MetricsReport> reports) {
  std::ostringstream out;
  for (const auto& row : rows_of(reports)) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) out << ',';
      if (row[c].find_first_of(",\"") != std::string::npos) {
        out << '"';
        for (char ch : row[c]) {
          if (ch == '"') out << '"';
          out << ch;
        }
        out << '"';
      } else {
        out << row[c];
      }
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace flex
