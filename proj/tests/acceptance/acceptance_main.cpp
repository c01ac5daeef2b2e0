// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Everything runs offline on the mock backend.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fixture.hpp"
#include "flex/clustering.hpp"
#include "flex/errors.hpp"
#include "flex/eval.hpp"
#include "flex/io.hpp"
#include "flex/log.hpp"
#include "flex/metrics.hpp"
#include "flex/pipeline.hpp"
#include "flex/summary.hpp"
#include "flex/tasks.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace flex;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

// Collects failed checks; the first few messages end up in the detail line.
struct Checks {
  int failed = 0;
  std::vector<std::string> notes;
  void expect(bool ok, const std::string& what) {
    if (ok) return;
    ++failed;
    if (notes.size() < 5) notes.push_back(what);
  }
  std::string summary() const {
    std::string s;
    for (const auto& n : notes) s += (s.empty() ? "" : "; ") + n;
    return s;
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------- 1

struct Row {
  const char* model;
  double cot[3];
  double flex[3];
  double err[3];
};

// CounterBench, GSM8K, ReasonIF.
const std::vector<Row> kPublished = {
    {"Gemma-1B", {49.8, 45.6, 35.3}, {51.6, 46.0, 50.0}, {3.59, 0.70, 22.08}},
    {"Gemma-4B", {64.9, 85.4, 50.0}, {74.3, 86.1, 66.0}, {26.78, 4.17, 32.00}},
    {"Gemma-12B", {68.7, 93.4, 64.3}, {84.9, 93.8, 74.0}, {51.76, 6.25, 27.10}},
    {"Gemma-27B", {76.0, 94.2, 75.0}, {80.7, 95.5, 76.7}, {19.58, 22.08, 6.70}},
    {"Qwen-0.5B", {21.3, 24.8, 28.3}, {42.6, 24.9, 35.3}, {27.06, 0.10, 9.77}},
    {"Qwen-1.5B", {39.3, 50.3, 30.3}, {47.8, 53.4, 35.0}, {14.00, 6.25, 6.70}},
    {"Qwen-3B", {50.5, 83.9, 36.3}, {58.1, 84.8, 42.3}, {15.35, 5.63, 9.42}},
    {"Qwen-7B", {69.9, 90.2, 46.3}, {78.0, 91.0, 67.7}, {26.91, 7.75, 39.75}},
    {"Qwen-14B", {74.0, 91.6, 71.3}, {80.6, 94.8, 95.0}, {25.38, 37.84, 82.56}},
    {"Qwen-32B", {79.7, 92.1, 78.3}, {84.6, 96.4, 96.3}, {24.14, 53.85, 83.08}},
    {"Qwen-72B", {82.8, 93.9, 87.0}, {88.9, 95.7, 93.7}, {35.47, 29.63, 51.28}},
};

Outcome err_consistency() {
  const char* datasets[] = {"CounterBench", "GSM8K", "ReasonIF"};
  std::vector<double> deviations;
  double worst = 0.0, gemma12_cb = 0.0;
  std::string worst_pair;
  for (const auto& row : kPublished)
    for (int d = 0; d < 3; ++d) {
      const auto err = error_rate_reduction(row.flex[d], row.cot[d]);
      if (!err) return {false, std::string("ERR undefined for ") + row.model};
      const double dev = std::fabs(round2(*err) - row.err[d]);
      deviations.push_back(dev);
      if (dev > worst) {
        worst = dev;
        worst_pair = std::string(row.model) + " " + datasets[d];
      }
      if (std::string(row.model) == "Gemma-12B" && d == 0) gemma12_cb = round2(*err);
    }
  std::sort(deviations.begin(), deviations.end());
  const double median = deviations[deviations.size() / 2];
  const bool pass = deviations.size() == 33 && std::fabs(gemma12_cb - 51.76) <= 0.01 + 1e-9 && worst <= 0.7 &&
                    median <= 0.2;
  return {pass, "33 pairs, Gemma-12B CounterBench " + fmt("%.2f", gemma12_cb) + ", max dev " + fmt("%.3f", worst) +
                    " (" + worst_pair + "), median dev " + fmt("%.3f", median)};
}

// ---------------------------------------------------------------- 2

double brute_force_inertia(const std::vector<Point>& pts, int k) {
  const std::size_t n = pts.size(), dim = pts[0].size();
  std::vector<int> label(n, 0);
  double best = INFINITY;
  while (true) {
    std::vector<Point> sum(static_cast<std::size_t>(k), Point(dim, 0.0));
    std::vector<int> count(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++count[static_cast<std::size_t>(label[i])];
      for (std::size_t d = 0; d < dim; ++d) sum[static_cast<std::size_t>(label[i])][d] += pts[i][d];
    }
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = static_cast<std::size_t>(label[i]);
      for (std::size_t d = 0; d < dim; ++d) {
        const double diff = pts[i][d] - sum[c][d] / count[c];
        total += diff * diff;
      }
    }
    best = std::min(best, total);
    std::size_t pos = 0;
    while (pos < n && ++label[pos] == k) label[pos++] = 0;
    if (pos == n) break;
  }
  return best;
}

Outcome clustering_oracle() {
  std::mt19937_64 rng(20240601);
  std::uniform_real_distribution<double> coord(-10.0, 10.0);
  double worst_rel = 0.0;
  int failures = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 3 + static_cast<int>(rng() % 6);
    const int dim = 1 + static_cast<int>(rng() % 4);
    const int k = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(std::min(3, n)));
    std::vector<Point> pts(static_cast<std::size_t>(n), Point(static_cast<std::size_t>(dim)));
    for (auto& p : pts)
      for (auto& v : p) v = coord(rng);
    const double oracle = brute_force_inertia(pts, k);
    const auto model = kmeans_best_of(pts, k, rng(), KMeansOptions{300, 25});
    const double gap = model.inertia - oracle;
    const double rel = oracle > 0.0 ? std::fabs(gap) / oracle : std::fabs(gap);
    worst_rel = std::max(worst_rel, rel);
    if (rel > 1e-9) ++failures;
  }
  return {failures == 0, "200 instances, " + std::to_string(failures) + " off the optimum, worst relative gap " +
                             fmt("%.3g", worst_rel)};
}

// ---------------------------------------------------------------- 3

Outcome knee_recovery() {
  std::string detail;
  bool pass = true;
  for (int c = 2; c <= 5; ++c) {
    int k_ok = 0, labels_ok = 0;
    std::map<int, int> picked;
    for (int trial = 0; trial < 100; ++trial) {
      const auto seed = static_cast<std::uint64_t>(1000 * c + trial);
      const auto blobs = testutil::make_blobs(c, 12, 4, seed);
      const auto sweep = inertia_sweep(blobs.points, seed);
      const int k = select_k(sweep.curve);
      ++picked[k];
      if (k != c) continue;
      ++k_ok;
      for (std::size_t i = 0; i < sweep.curve.points.size(); ++i)
        if (sweep.curve.points[i].first == k && testutil::same_partition(sweep.models[i].assignment, blobs.labels))
          ++labels_ok;
    }
    const bool ok = k_ok >= 95 && labels_ok == k_ok;
    pass = pass && ok;
    std::string modes;
    for (const auto& [k, count] : picked) modes += (modes.empty() ? "" : ",") + std::to_string(k) + "x" + std::to_string(count);
    detail += (detail.empty() ? "" : "; ") + std::string("c=") + std::to_string(c) + ": k*=c in " +
              std::to_string(k_ok) + "/100, labels " + std::to_string(labels_ok) + " [" + modes + "]";
  }
  return {pass, detail};
}

// ---------------------------------------------------------------- 4

VerifiedExplanation explanation_in(int cluster) {
  VerifiedExplanation e;
  e.case_id = "c" + std::to_string(cluster);
  e.cluster_index = cluster;
  return e;
}

Outcome scoring_properties() {
  testutil::LogCapture quiet;
  std::mt19937_64 rng(7);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Checks checks;
  for (int trial = 0; trial < 1000; ++trial) {
    const int m = 1 + static_cast<int>(rng() % 8);
    const int dim = 1 + static_cast<int>(rng() % 16);
    std::vector<std::vector<double>> df(static_cast<std::size_t>(m)), ds(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
      df[static_cast<std::size_t>(i)].resize(static_cast<std::size_t>(dim));
      ds[static_cast<std::size_t>(i)].resize(static_cast<std::size_t>(dim));
      for (auto& v : df[static_cast<std::size_t>(i)]) v = gauss(rng);
      for (auto& v : ds[static_cast<std::size_t>(i)]) v = gauss(rng);
    }
    // Cluster sizes and a random set of exhausted clusters (at least one kept).
    std::vector<std::size_t> sizes(static_cast<std::size_t>(m));
    for (auto& s : sizes) s = 1 + rng() % 50;
    const auto w = size_weights(sizes);
    std::unique_ptr<bool[]> keep(new bool[static_cast<std::size_t>(m)]);
    bool any = false;
    for (int i = 0; i < m; ++i) any |= (keep[static_cast<std::size_t>(i)] = unit(rng) < 0.7);
    if (!any) keep[rng() % static_cast<std::size_t>(m)] = true;
    const auto renorm = renormalize_weights(w, std::span<const bool>(keep.get(), static_cast<std::size_t>(m)));
    double sum = 0.0;
    for (int i = 0; i < m; ++i) {
      sum += renorm[static_cast<std::size_t>(i)];
      if (!keep[static_cast<std::size_t>(i)]) checks.expect(renorm[static_cast<std::size_t>(i)] == 0.0, "dropped weight nonzero");
    }
    checks.expect(std::fabs(sum - 1.0) <= 1e-12, "renormalized weights sum " + fmt("%.17g", sum));

    // Explanation weights over the surviving clusters.
    ClusterSelection sel;
    for (int i = 0; i < m; ++i) sel.clusters.push_back({i, sizes[static_cast<std::size_t>(i)], w[static_cast<std::size_t>(i)], {"c"}});
    sel.k_star = m;
    std::vector<VerifiedExplanation> expl;
    for (int i = 0; i < m; ++i)
      if (keep[static_cast<std::size_t>(i)]) expl.push_back(explanation_in(i));
    const auto ew = explanation_weights(expl, sel, Weighting::cluster_weighted);
    double esum = 0.0;
    for (double v : ew) esum += v;
    checks.expect(std::fabs(esum - 1.0) <= 1e-12, "explanation weights sum " + fmt("%.17g", esum));

    // Scores use all m explanations with the full weight vector.
    const double j = weighted_score(df, ds, w);
    checks.expect(j >= -1.0 - 1e-12 && j <= 1.0 + 1e-12, "J out of range " + fmt("%.17g", j));

    auto scaled = ds;
    const auto victim = rng() % static_cast<std::size_t>(m);
    const double factor = std::exp(gauss(rng) * 3.0);
    for (auto& v : scaled[victim]) v *= factor;
    auto scaled_f = df;
    for (auto& v : scaled_f[(victim + 1) % static_cast<std::size_t>(m)]) v *= factor;
    checks.expect(std::fabs(weighted_score(df, scaled, w) - j) <= 1e-12, "rescaled delta_s changes J");
    checks.expect(std::fabs(weighted_score(scaled_f, ds, w) - j) <= 1e-12, "rescaled delta_f changes J");

    // Equal-size clusters: cluster weighting is the unweighted average.
    ClusterSelection even;
    std::vector<VerifiedExplanation> all;
    for (int i = 0; i < m; ++i) {
      even.clusters.push_back({i, 7, 1.0 / m, {"c"}});
      all.push_back(explanation_in(i));
    }
    even.k_star = m;
    const auto cw = explanation_weights(all, even, Weighting::cluster_weighted);
    const auto uw = explanation_weights(all, even, Weighting::unweighted);
    checks.expect(std::fabs(weighted_score(df, ds, cw) - weighted_score(df, ds, uw)) <= 1e-12,
                  "uniform weights differ from unweighted");

    // Ties on the maximum resolve to the smallest index.
    const int len = 2 + static_cast<int>(rng() % 60);
    std::vector<double> values(static_cast<std::size_t>(len));
    for (auto& v : values) v = std::floor(unit(rng) * 4.0) / 4.0;
    const double top = *std::max_element(values.begin(), values.end());
    const int first = static_cast<int>(std::find(values.begin(), values.end(), top) - values.begin());
    checks.expect(argmax_first(values) == first, "argmax_first tie-break");
    SummaryScoreTable table;
    std::vector<CandidateSummary> cands;
    for (int i = 0; i < len; ++i) {
      table.scores.push_back({i, values[static_cast<std::size_t>(i)]});
      cands.push_back({i, "s" + std::to_string(i), "p", i});
    }
    table.selected = argmax_first(values);
    checks.expect(select_summary(table, cands).index == first, "select_summary tie-break");
  }
  return {checks.failed == 0, "1000 configurations, " + std::to_string(checks.failed) + " violations" +
                                  (checks.failed ? " (" + checks.summary() + ")" : "")};
}

// ---------------------------------------------------------------- 5

std::optional<std::string> vote_oracle(const std::vector<std::optional<std::string>>& v) {
  std::map<std::string, int> count;
  int best = 0;
  for (const auto& a : v)
    if (a) best = std::max(best, ++count[*a]);
  for (const auto& a : v)
    if (a && count[*a] == best) return a;
  return std::nullopt;
}

Outcome vote_oracle_check() {
  const std::vector<std::string> answers = {"a", "b", "c"};
  int mismatches = 0, total = 0;
  for (int code = 0; code < 243; ++code) {
    std::vector<std::optional<std::string>> v;
    for (int i = 0, c = code; i < 5; ++i, c /= 3) v.push_back(answers[static_cast<std::size_t>(c % 3)]);
    const auto got = majority_vote(v);
    const auto want = vote_oracle(v);
    ++total;
    if (!got || !want || got->answer != *want || v[got->sample] != *want) ++mismatches;
  }
  return {mismatches == 0 && total == 243, std::to_string(total) + " vote vectors, " + std::to_string(mismatches) + " mismatches"};
}

// ---------------------------------------------------------------- 6

TaskInstance instance(std::string id, std::string input, std::string gold, DatasetKind kind) {
  TaskInstance t;
  t.id = std::move(id);
  t.input = std::move(input);
  t.gold = std::move(gold);
  t.kind = kind;
  return t;
}

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

bool tag_free(const std::string& s) {
  const auto l = lower(s);
  return l.find("<answer>") == std::string::npos && l.find("</answer>") == std::string::npos;
}

Outcome answer_pipeline() {
  Checks checks;
  std::mt19937_64 rng(99);
  const std::string alphabet = "abzAQZ 0179.,;$%!?-<>/\n\t\xc3\xa9";
  const auto draw = [&](std::size_t max_len) {
    std::string s;
    const auto n = rng() % (max_len + 1);
    for (std::size_t i = 0; i < n; ++i) s.push_back(alphabet[rng() % alphabet.size()]);
    return s;
  };
  int cases = 0;
  while (cases < 10000) {
    const std::string prefix = draw(24), payload = draw(16), earlier = draw(10), suffix = draw(12);
    if (!tag_free(prefix) || !tag_free(payload) || !tag_free(earlier) || !tag_free(suffix)) continue;
    ++cases;
    // Round-trip: the final tag's payload comes back unchanged and scores
    // against itself.
    const std::string single = prefix + "<answer>" + payload + "</answer>";
    checks.expect(extract_answer(single) == payload, "round-trip");
    // Last tag wins, whatever the casing of the tags.
    const std::string multi = prefix + "<ANSWER>" + earlier + "</Answer>" + suffix + "<answer>" + payload + "</answer>" + suffix;
    const auto got = extract_answer(multi);
    checks.expect(got == payload, "last tag wins");
    // Normalization is idempotent and fixed on its own output.
    const auto once = normalize_answer(payload);
    checks.expect(normalize_answer(once) == once, "idempotence");
    if (got) checks.expect(normalize_answer(*got) == once, "normalized round-trip");
    if (!once.empty()) {
      const auto t = instance("p", "q", once, DatasetKind::generic);
      checks.expect(score(multi, t).correct, "self-scoring");
    }
  }

  // CounterBench: the incorrect response says no, the corrected one yes.
  const auto chain = instance(
      "cb", "We know that Blorn causes Fizo, Fizo or Blorn causes Plim, Plim causes Quaz, Quaz causes Skul, and Skul "
            "causes Jext. Blorn~Bern(0.4). We observed Plim. Would Jext occur if not Fizo instead of Fizo?",
      "yes", DatasetKind::yes_no);
  const auto cb_bad = score(
      "To determine if Jext would occur if not Fizo instead of Fizo, we need to follow the causal chain and "
      "understand the implications of the absence of Fizo.\n\nBlorn causes Fizo. Fizo or Blorn causes Plim. Plim "
      "causes Quaz. Quaz causes Skul. Skul causes Jext. Blorn~Bern(0.4) means Blorn has a 40% chance of occurring. "
      "We observed Plim. Plim can be caused by either Fizo or Blorn. If Fizo did not occur, Blorn must have "
      "occurred. Since Blorn causes Fizo, Fizo would still occur. The causal chain remains intact, so Jext would "
      "still occur. Therefore, the answer is <answer>no</answer>.",
      chain);
  const auto cb_good = score(
      "Under the counterfactual where Fizo is prevented, Plim can still be caused by Blorn, allowing the causal "
      "chain to continue to Jext.\nTherefore, the correct answer is <answer>yes</answer>.",
      chain);
  checks.expect(!cb_bad.correct && cb_bad.extracted == "no", "CounterBench incorrect response");
  checks.expect(cb_good.correct && cb_good.extracted == "yes", "CounterBench corrected response");

  // GSM8K: 67 against gold 10, then the corrected 10.
  const auto dogs = instance("gsm",
                             "There are 88 dogs in a park. 12 of the dogs are running. Half of them are playing with "
                             "toys. A fourth of them are barking. How many dogs are not doing anything?",
                             "10", DatasetKind::numeric);
  const auto gsm_bad = score(
      "1. Dogs running: 12\n2. Dogs playing with toys: $12 / 2 = 6$\n3. Dogs barking: $12 / 4 = 3$\n4. Total dogs "
      "doing something: $12 + 6 + 3 = 21$\n5. Dogs doing nothing: $88 - 21 = 67$\n<answer>67</answer>",
      dogs);
  const auto gsm_good = score(
      "1. Dogs running: 12\n2. Dogs playing with toys: $88 / 2 = 44$\n3. Dogs barking: $88 / 4 = 22$\n4. Total dogs "
      "doing something: $12 + 44 + 22 = 78$\n5. Dogs doing nothing: $88 - 78 = 10$\n<answer>10</answer>",
      dogs);
  checks.expect(!gsm_bad.correct && gsm_bad.failure_reason == FailureReason::mismatch, "GSM8K incorrect response");
  checks.expect(gsm_good.correct, "GSM8K corrected response");

  // ReasonIF: right answer, lowercase variables in the reasoning.
  auto caps = instance("rif",
                       "When reasoning, your response should be in English and in all capital letters. Here is the "
                       "question: Triangle $ABC$ has side lengths in arithmetic progression, and the smallest side has "
                       "length $6.$ If the triangle has an angle of $120^{\\circ},$ find the area of $ABC$. What is "
                       "$m+n$?",
                       "18", DatasetKind::constraint);
  caps.constraint = ConstraintSpec{ConstraintKind::all_caps, std::nullopt};
  const auto rif_bad = score(
      "LET THE SIDE LENGTHS BE $6, 6+d, 6+2d$ FOR SOME $d>0$.\nSINCE THE SIDES ARE IN ARITHMETIC PROGRESSION, WE "
      "HAVE $6 < 6+d < 6+2d$.\nIF THE ANGLE OPPOSITE THE SIDE OF LENGTH $6+2d$ IS $120^{\\circ}$, THEN\n\\[\n6^2 + "
      "(6+d)^2 - 2(6)(6+d) \\cos(120^{\\circ}) = (6+2d)^2.\n\\]\nSOLVING THIS EQUATION YIELDS $d=4$.\nTHE SIDE "
      "LENGTHS ARE $6, 10, 14$.\nTHE AREA IS $\\frac{1}{2}(6)(10)\\sin(120^{\\circ}) = 15\\sqrt{3}$.\nTHUS, $m+n = "
      "18$.\n<answer>18</answer>",
      caps);
  // The corrected response as rendered (text-mode wrappers removed).
  const auto rif_good = score(
      "LET THE SIDE LENGTHS BE 6, $6+D, 6+2D$ FOR SOME D>0.\nIF THE ANGLE OPPOSITE THE SIDE OF LENGTH $6+2D$ IS 120 "
      "DEGREES, THEN\n\\[\n6^2 + (6+D)^2 - 2(6)(6+D)COS(120) = (6+2D)^2.\n\\]\nSOLVING GIVES D=4.\nTHE SIDE LENGTHS "
      "ARE 6, 10, AND 14.\nTHE AREA IS $(1/2)(6)(10)SIN(120) = 15 SQRT(3)$.\nTHUS, M=15, N=3, AND M+N = 18.\n"
      "<answer>18</answer>",
      caps);
  checks.expect(!rif_bad.correct && rif_bad.extracted == "18" &&
                    rif_bad.failure_reason == FailureReason::constraint_violated,
                "ReasonIF incorrect response");
  checks.expect(rif_good.correct, "ReasonIF corrected response");

  return {checks.failed == 0, std::to_string(cases) + " generated cases and 3 worked examples, " +
                                  std::to_string(checks.failed) + " violations" +
                                  (checks.failed ? " (" + checks.summary() + ")" : "")};
}

// ---------------------------------------------------------------- 7

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).generic_string()] = read_file(e.path());
  return files;
}

struct PipelineRun {
  int k_star = 0;
  std::size_t errors = 0;
  SelectedSummary summary;
  EvaluateOutcome cot, flex;
};

PipelineRun run_pipeline(const fs::path& run_dir, const PipelineConfig& config, const fixture::Paths& paths) {
  BackendPool pool(config);
  PipelineRun out;
  out.errors = stage_collect(run_dir, config, pool).errors;
  out.k_star = stage_cluster(run_dir, config, pool).k_star;
  stage_verify_batch(run_dir, config, pool, VerifyStageOptions{ExplanationMode::human, paths.drafts});
  stage_summarize(run_dir, config, pool);
  out.summary = stage_select(run_dir, config, pool);
  out.cot = stage_evaluate(run_dir, config, pool, EvaluateStageOptions{Method::cot, false, std::nullopt});
  out.flex = stage_evaluate(run_dir, config, pool, EvaluateStageOptions{Method::flex, false, std::nullopt});
  stage_report(run_dir);
  return out;
}

Outcome end_to_end() {
  testutil::LogCapture quiet;
  ::setenv("SOURCE_DATE_EPOCH", "1700000000", 1);
  testutil::TempDir dir("acceptance-e2e");
  const auto paths = fixture::write(dir.path() / "fixture");
  const auto config = load_config(paths.config);
  const auto expected = fixture::expected();
  const auto run_dir = dir.path() / "run";
  Checks checks;

  const auto first = run_pipeline(run_dir, config, paths);
  const auto files_first = snapshot(run_dir);
  fs::remove_all(run_dir);
  const auto second = run_pipeline(run_dir, config, paths);
  const auto files_second = snapshot(run_dir);

  checks.expect(first.errors == expected.errors, "errors " + std::to_string(first.errors));
  checks.expect(first.k_star == expected.k_star, "k* = " + std::to_string(first.k_star));
  checks.expect(first.summary.index == expected.planted_index, "selected candidate " + std::to_string(first.summary.index));
  checks.expect(first.summary.text == expected.planted_summary, "selected text differs from the planted summary");

  std::map<std::string, bool> cot_correct;
  for (const auto& r : first.cot.result.records) cot_correct[r.instance_id] = r.verdict.correct;
  std::set<std::string> flipped_up, flipped_down;
  for (const auto& r : first.flex.result.records) {
    const auto it = cot_correct.find(r.instance_id);
    if (it == cot_correct.end()) continue;
    if (r.verdict.correct && !it->second) flipped_up.insert(r.instance_id);
    if (!r.verdict.correct && it->second) flipped_down.insert(r.instance_id);
  }
  checks.expect(first.cot.result.records.size() == expected.test && first.flex.result.records.size() == expected.test,
                "record counts");
  checks.expect(flipped_up == expected.sensitive_ids, "flipped set has " + std::to_string(flipped_up.size()) + " ids");
  checks.expect(flipped_down.empty(), std::to_string(flipped_down.size()) + " instances regressed");

  // Oracle from the script: CoT is right on the ok items only; the summary
  // adds every sensitive instance.
  const double cot_oracle = 100.0 * static_cast<double>(expected.cot_correct) / static_cast<double>(expected.test);
  const double flex_oracle = 100.0 * static_cast<double>(expected.cot_correct + expected.flex_sensitive) /
                             static_cast<double>(expected.test);
  checks.expect(std::fabs(first.cot.report.accuracy - cot_oracle) < 1e-9, "cot accuracy " + fmt("%.2f", first.cot.report.accuracy));
  checks.expect(std::fabs(first.flex.report.accuracy - flex_oracle) < 1e-9,
                "flex accuracy " + fmt("%.2f", first.flex.report.accuracy));
  checks.expect(first.flex.report.delta_acc_vs_cot && std::fabs(*first.flex.report.delta_acc_vs_cot - round2(flex_oracle - cot_oracle)) < 1e-9,
                "accuracy delta");

  for (const char* name : {artifacts::kErrors, artifacts::kClusters, artifacts::kExplanations, artifacts::kCandidates,
                           artifacts::kScores, artifacts::kSummary, "records-cot.jsonl", "records-flex.jsonl"})
    checks.expect(files_first.count(name) == 1, std::string("missing ") + name);

  std::size_t differing = 0;
  for (const auto& [name, content] : files_first) {
    const auto it = files_second.find(name);
    if (it == files_second.end() || it->second != content) ++differing;
  }
  checks.expect(files_first.size() == files_second.size() && differing == 0,
                std::to_string(differing) + " files differ between runs");

  return {checks.failed == 0, "k*=" + std::to_string(first.k_star) + ", selected #" +
                                  std::to_string(first.summary.index) + ", CoT " + fmt("%.1f", first.cot.report.accuracy) +
                                  " -> FLEx " + fmt("%.1f", first.flex.report.accuracy) + ", flipped " +
                                  std::to_string(flipped_up.size()) + ", " + std::to_string(files_first.size()) +
                                  " files byte-identical across runs" +
                                  (checks.failed ? " (" + checks.summary() + ")" : "")};
}

// ---------------------------------------------------------------- 8

bool unique_complete(const RunResult& r, std::size_t n) {
  std::set<std::string> ids;
  for (const auto& rec : r.records) ids.insert(rec.instance_id);
  return ids.size() == n && r.records.size() == n && r.failures.empty();
}

Outcome stacking() {
  testutil::LogCapture quiet;
  testutil::TempDir dir("acceptance-stack");
  const auto paths = fixture::write(dir.path());
  const auto train = load_dataset(paths.train);
  const auto test = load_dataset(paths.test);
  const auto expected = fixture::expected();
  auto backend = std::make_shared<MockBackend>(testutil::mock_descriptor("mock-frozen", 64), fixture::script());
  Gateway model(backend);
  Checks checks;
  const std::string summary = expected.planted_summary;
  EvalConfig config;

  const auto flex = run_flex(test, config, summary, model);
  EvalConfig cot = config;
  cot.method = Method::cot;
  const auto stacked_cot = run_stacked(test, cot, summary, model);
  checks.expect(records_jsonl(stacked_cot.records) == records_jsonl(flex.records), "CoT+summary differs from FLEx");

  const auto calls = [&] { return backend->call_count(); };

  EvalConfig sr = config;
  sr.method = Method::self_refine;
  auto before = calls();
  const auto sr_run = run_stacked(test, sr, summary, model);
  // Draft and critique per instance, plus a revision per non-empty critique.
  const auto sr_calls = calls() - before;
  checks.expect(unique_complete(sr_run, test.size()), "self-refine records");
  checks.expect(sr_calls == 2 * test.size() + 20, "self-refine calls " + std::to_string(sr_calls));
  checks.expect(method_tag(sr) != "flex", "self-refine tag");

  const auto train_run = run_train_cot(train, model, 4);
  const auto index = build_rag_index(train_run, model, 4);
  EvalConfig rag = config;
  rag.method = Method::rag;
  before = calls();
  const auto rag_run = run_stacked(test, rag, summary, model, &index, &model);
  const auto rag_calls = calls() - before;
  checks.expect(unique_complete(rag_run, test.size()), "RAG records");
  checks.expect(rag_calls == test.size(), "RAG calls " + std::to_string(rag_calls));

  EvalConfig sc = config;
  sc.method = Method::self_consistency;
  before = calls();
  const auto sc_run = run_stacked(test, sc, summary, model);
  const auto sc_calls = calls() - before;
  checks.expect(unique_complete(sc_run, test.size()), "SC records");
  checks.expect(sc_calls == test.size(), "SC calls " + std::to_string(sc_calls));
  for (const auto& r : sc_run.records)
    if (!r.votes || r.votes->size() != 5) {
      checks.expect(false, "SC votes on " + r.instance_id);
      break;
    }

  // The summary reaches every base method: all sensitive instances turn correct.
  for (const auto* run : {&sr_run, &rag_run, &sc_run}) {
    std::size_t sensitive_ok = 0;
    for (const auto& r : run->records)
      if (expected.sensitive_ids.count(r.instance_id) && r.verdict.correct) ++sensitive_ok;
    checks.expect(sensitive_ok == expected.flex_sensitive, "stacked run misses sensitive instances");
  }

  return {checks.failed == 0, "CoT+summary == FLEx over " + std::to_string(flex.records.size()) +
                                  " records; SR/RAG/SC stacked: 1000 unique records each, calls " +
                                  std::to_string(sr_calls) + "/" + std::to_string(rag_calls) + "/" +
                                  std::to_string(sc_calls) + (checks.failed ? " (" + checks.summary() + ")" : "")};
}

// ---------------------------------------------------------------- 9

Outcome overhead() {
  Checks checks;
  const auto expected = fixture::expected();
  {
    testutil::LogCapture log;
    SummaryOverhead o;
    try {
      o = summary_overhead(expected.planted_summary);
    } catch (const std::exception& e) {
      return {false, std::string("threw: ") + e.what()};
    }
    checks.expect(o.tokens == expected.planted_tokens, "fixture summary has " + std::to_string(o.tokens) + " tokens");
    checks.expect(!o.within_observed_range && log.warnings.size() == 1, "short summary not flagged");
  }
  std::string typical;
  while (count_tokens(typical) < 162) typical += "Check each step. ";
  {
    testutil::LogCapture log;
    const auto o = summary_overhead(typical);
    checks.expect(o.within_observed_range && log.warnings.empty(), "typical summary flagged");
  }
  {
    std::string longer;
    while (count_tokens(longer) <= 301) longer += "Check each step. ";
    testutil::LogCapture log;
    const auto o = summary_overhead(longer);
    checks.expect(!o.within_observed_range && log.warnings.size() == 1, "long summary not flagged");
  }
  return {checks.failed == 0, "fixture summary " + std::to_string(count_tokens(expected.planted_summary)) +
                                  " tokens (warned), " + std::to_string(count_tokens(typical)) +
                                  "-token summary accepted" + (checks.failed ? " (" + checks.summary() + ")" : "")};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"1 ERR arithmetic consistency", err_consistency},
      {"2 clustering oracle", clustering_oracle},
      {"3 knee recovery", knee_recovery},
      {"4 scoring properties", scoring_properties},
      {"5 self-consistency oracle", vote_oracle_check},
      {"6 answer pipeline", answer_pipeline},
      {"7 end-to-end mock pipeline", end_to_end},
      {"8 stacking identity", stacking},
      {"9 summary overhead report", overhead},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!o.pass) ++failed;
    std::printf("%s  %-30s %8.3fs  %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), secs, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
