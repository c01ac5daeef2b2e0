#include "doctest.h"

#include <cmath>
#include <random>

#include "flex/errors.hpp"
#include "flex/summary.hpp"
#include "test_util.hpp"

using namespace flex;
using nlohmann::json;

namespace {

VerifiedExplanation expl(const std::string& id, int cluster, const std::string& f) {
  return {id, "question " + id, "response " + id, "yes", f, cluster, Provenance::human, {}};
}

std::vector<double> scaled(std::vector<double> v, double s) {
  for (auto& x : v) x *= s;
  return v;
}

ClusterSelection three_clusters() {
  ClusterSelection sel;
  sel.k_star = 3;
  sel.clusters = {{0, 5, 0.5, {"a"}}, {1, 3, 0.3, {"b"}}, {2, 2, 0.2, {"c"}}};
  return sel;
}

}  // namespace

TEST_CASE("default prompts") {
  const auto prompts = default_summary_prompts();
  REQUIRE(prompts.size() == 5);
  int author = 0, llm = 0;
  for (const auto& p : prompts) (p.source == PromptSource::author ? author : llm)++;
  CHECK(author == 3);
  CHECK(llm == 2);
  for (const auto& p : prompts) CHECK_FALSE(p.template_text.empty());
}

TEST_CASE("prompt files round-trip") {
  testutil::TempDir dir("prompts");
  const auto prompts = default_summary_prompts();
  write_summary_prompts(dir.path(), prompts);
  const auto back = load_summary_prompts(dir.path());
  REQUIRE(back.size() == prompts.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].name == prompts[i].name);
    CHECK(back[i].template_text == prompts[i].template_text);
    CHECK(back[i].source == prompts[i].source);
  }
  CHECK_THROWS_AS(load_summary_prompts(dir.path() / "missing"), ConfigError);
}

TEST_CASE("feedback serialization and request text") {
  const std::vector<VerifiedExplanation> f = {expl("a", 0, "fa")};
  const auto arr = json::parse(serialize_feedback(f));
  REQUIRE(arr.size() == 1);
  CHECK(arr[0] == json({{"prompt", "question a"}, {"response", "response a"}, {"feedback", "fa"}}));
  const SummaryPrompt p{"n", "TEMPLATE", PromptSource::author};
  CHECK(summary_request_text(p, f) == "TEMPLATE\n\n" + serialize_feedback(f));
}

TEST_CASE("candidate generation") {
  const std::vector<VerifiedExplanation> f = {expl("a", 0, "fa"), expl("b", 1, "fb")};
  Gateway g(testutil::mock());
  const auto batch = generate_candidates(f, default_summary_prompts(), g);
  REQUIRE(batch.candidates.size() == 50);
  CHECK(batch.incomplete_prompts.empty());
  for (int l = 0; l < 50; ++l) {
    CHECK(batch.candidates[static_cast<std::size_t>(l)].index == l);
    CHECK(batch.candidates[static_cast<std::size_t>(l)].sample_index == l % 10);
    CHECK(batch.candidates[static_cast<std::size_t>(l)].prompt_name == default_summary_prompts()[static_cast<std::size_t>(l / 10)].name);
  }
  const auto again = generate_candidates(f, default_summary_prompts(), g);
  CHECK(json(again) == json(batch));

  GenerationOptions one;
  one.samples_per_prompt = 1;
  const std::vector<SummaryPrompt> single = {default_summary_prompts()[0]};
  const auto a = generate_candidates(f, single, g, one);
  CHECK(a.candidates.size() == 1);
  CHECK(a.candidates[0].text == generate_candidates(f, single, g, one).candidates[0].text);

  CHECK_THROWS_AS(generate_candidates(std::vector<VerifiedExplanation>{}, single, g), PreconditionError);
}

TEST_CASE("a failing prompt is flagged and the rest of the batch survives") {
  const auto prompts = default_summary_prompts();
  MockScript s;
  auto broken = testutil::rule({prompts[1].template_text.substr(0, 40)}, {"x"});
  broken.fail_times = 100;
  s.rules.push_back(broken);
  Gateway g(testutil::mock(s));
  testutil::LogCapture logs;
  const auto batch = generate_candidates(std::vector<VerifiedExplanation>{expl("a", 0, "f")}, prompts, g);
  CHECK(batch.candidates.size() == 40);
  CHECK(batch.incomplete_prompts == std::vector<std::string>{prompts[1].name});
  // indices stay tied to (prompt order, sample order)
  CHECK(batch.candidates[10].index == 20);
}

TEST_CASE("deltas against the mock oracle") {
  Gateway g(testutil::mock({}, 12));
  const auto e = expl("a", 0, "feedback text");
  const auto df = compute_delta_f(e, g);
  const auto hi = mock_digest_vector("question a\nresponse a\nfeedback text", 12);
  const auto lo = mock_digest_vector("question a\nresponse a", 12);
  REQUIRE(df.size() == 12);
  for (int i = 0; i < 12; ++i) CHECK(df[i] == hi[i] - lo[i]);
  CHECK(compute_delta_s(e, "feedback text", g) == df);
  for (double v : compute_delta_s(e, "", g)) CHECK(v == 0.0);
  auto empty_f = e;
  empty_f.f = "";
  for (double v : compute_delta_f(empty_f, g)) CHECK(v == 0.0);
}

TEST_CASE("delta cache matches fresh computation bitwise") {
  Gateway g(testutil::mock({}, 12));
  const std::vector<VerifiedExplanation> f = {expl("a", 0, "fa"), expl("b", 1, "fb"), expl("c", 2, "fc")};
  const auto cache = build_delta_cache(f, g, 3);
  for (std::size_t i = 0; i < f.size(); ++i) CHECK(cache.delta_f[i] == compute_delta_f(f[i], g));
}

TEST_CASE("weighted score examples") {
  const std::vector<std::vector<double>> df = {{1, 0}, {0, 1}};
  CHECK(weighted_score(df, df, std::vector<double>{0.75, 0.25}) == doctest::Approx(1.0));
  const std::vector<std::vector<double>> perp = {{0, 3}, {-2, 0}};
  CHECK(weighted_score(df, perp, std::vector<double>{0.75, 0.25}) == doctest::Approx(0.0));
  const std::vector<std::vector<double>> mixed = {{2, 0}, {0, -5}};
  CHECK(weighted_score(df, mixed, std::vector<double>{0.75, 0.25}) == doctest::Approx(0.5));

  testutil::LogCapture logs;
  const std::vector<std::vector<double>> zero = {{0, 0}, {0, 1}};
  CHECK(weighted_score(df, zero, std::vector<double>{0.5, 0.5}) == doctest::Approx(0.5));
  CHECK(logs.warnings.size() == 1);
  CHECK_THROWS_AS(weighted_score(df, zero, std::vector<double>{1.0}), PreconditionError);
}

TEST_CASE("property: cosine terms are scale invariant and J stays in [-1, 1]") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0, 1);
  std::uniform_real_distribution<double> pos(1e-3, 1e3);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t cases = 1 + rng() % 6;
    std::vector<std::vector<double>> df, ds;
    std::vector<double> w;
    for (std::size_t i = 0; i < cases; ++i) {
      std::vector<double> a(8), b(8);
      for (auto& v : a) v = n(rng);
      for (auto& v : b) v = n(rng);
      df.push_back(a);
      ds.push_back(b);
      w.push_back(1.0 / cases);
    }
    const double j = weighted_score(df, ds, w);
    CHECK(j >= -1.0);
    CHECK(j <= 1.0);
    auto df2 = df, ds2 = ds;
    for (auto& v : df2) v = scaled(v, pos(rng));
    for (auto& v : ds2) v = scaled(v, pos(rng));
    CHECK(weighted_score(df2, ds2, w) == doctest::Approx(j).epsilon(1e-12));
  }
}

TEST_CASE("explanation weights") {
  const auto sel = three_clusters();
  const std::vector<VerifiedExplanation> all = {expl("a", 0, "f"), expl("b", 1, "f"), expl("c", 2, "f")};
  const auto w = explanation_weights(all, sel, Weighting::cluster_weighted);
  CHECK(w == std::vector<double>{0.5, 0.3, 0.2});
  for (double u : explanation_weights(all, sel, Weighting::unweighted)) CHECK(u == doctest::Approx(1.0 / 3));

  testutil::LogCapture logs;
  const std::vector<VerifiedExplanation> two = {expl("a", 0, "f"), expl("b", 1, "f")};
  const auto r = explanation_weights(two, sel, Weighting::cluster_weighted);
  CHECK(r[0] == doctest::Approx(0.625));
  CHECK(r[1] == doctest::Approx(0.375));
  CHECK(r[0] + r[1] == doctest::Approx(1.0));
  CHECK(logs.warnings.size() == 1);

  const std::vector<VerifiedExplanation> stray = {expl("z", 9, "f")};
  CHECK_THROWS_AS(explanation_weights(stray, sel, Weighting::cluster_weighted), PreconditionError);
}

TEST_CASE("uniform cluster weights score identically to unweighted") {
  ClusterSelection sel;
  sel.clusters = {{0, 4, 0.25, {"a"}}, {1, 4, 0.25, {"b"}}, {2, 4, 0.25, {"c"}}, {3, 4, 0.25, {"d"}}};
  const std::vector<VerifiedExplanation> f = {expl("a", 0, "fa"), expl("b", 1, "fb"), expl("c", 2, "fc"),
                                              expl("d", 3, "fd")};
  Gateway g(testutil::mock({}, 16));
  std::vector<CandidateSummary> cands;
  for (int l = 0; l < 6; ++l) cands.push_back({l, "summary number " + std::to_string(l), "p", l});
  const auto weighted =
      score_candidates(cands, f, explanation_weights(f, sel, Weighting::cluster_weighted), Weighting::cluster_weighted, g);
  const auto plain = score_candidates(cands, f, explanation_weights(f, sel, Weighting::unweighted), Weighting::unweighted, g);
  for (std::size_t l = 0; l < cands.size(); ++l) CHECK(weighted.scores[l].score == plain.scores[l].score);
  CHECK(weighted.selected == plain.selected);
}

TEST_CASE("candidate equal to the explanation scores one") {
  const std::vector<VerifiedExplanation> f = {expl("a", 0, "same words")};
  Gateway g(testutil::mock({}, 16));
  const std::vector<CandidateSummary> cands = {{0, "other words", "p", 0}, {1, "same words", "p", 1}};
  const auto t = score_candidates(cands, f, std::vector<double>{1.0}, Weighting::unweighted, g, 2);
  CHECK(t.scores[1].score == doctest::Approx(1.0));
  CHECK(t.selected == 1);
}

TEST_CASE("argmax and ranking ties") {
  CHECK(argmax_first(std::vector<double>{0.2, 0.9, 0.9}) == 1);
  CHECK(argmax_first(std::vector<double>{-3.0}) == 0);
  CHECK_THROWS_AS(argmax_first(std::vector<double>{}), PreconditionError);

  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-1, 1), scale(0.01, 100);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> v(1 + rng() % 20);
    for (auto& x : v) x = std::round(u(rng) * 4) / 4;  // force ties
    const int base = argmax_first(v);
    const double c = u(rng) * 10, s = scale(rng);
    std::vector<double> shifted = v, stretched = v;
    for (auto& x : shifted) x += c;
    for (auto& x : stretched) x *= s;
    CHECK(argmax_first(stretched) == base);
    CHECK(argmax_first(shifted) == base);
  }
}

TEST_CASE("best, median and worst picks") {
  std::vector<CandidateSummary> cands;
  SummaryScoreTable table;
  std::mt19937_64 rng(4);
  std::vector<double> values;
  for (int l = 0; l < 50; ++l) {
    cands.push_back({l, "s" + std::to_string(l), "p", l % 10});
    values.push_back(static_cast<double>(rng() % 10) / 10.0);
    table.scores.push_back({l, values.back()});
  }
  table.selected = argmax_first(values);
  const auto best = select_summary(table, cands, Rank::best, "run-x");
  CHECK(best.index == table.selected);
  CHECK(best.text == cands[static_cast<std::size_t>(best.index)].text);
  CHECK(best.source_run_id == "run-x");
  REQUIRE(best.ranking.size() == 50);
  for (std::size_t i = 1; i < best.ranking.size(); ++i) {
    const auto& a = best.ranking[i - 1];
    const auto& b = best.ranking[i];
    CHECK((a.score > b.score || (a.score == b.score && a.index < b.index)));
  }
  CHECK(select_summary(table, cands, Rank::median).index == best.ranking[25].index);
  const auto worst = select_summary(table, cands, Rank::worst);
  const double lo = *std::min_element(values.begin(), values.end());
  CHECK(worst.score == lo);
  CHECK(worst.index == static_cast<int>(std::find(values.begin(), values.end(), lo) - values.begin()));

  SummaryScoreTable single;
  single.scores = {{0, -0.7}};
  CHECK(select_summary(single, std::vector<CandidateSummary>{{0, "only", "p", 0}}).text == "only");
  CHECK_THROWS_AS(select_summary(SummaryScoreTable{}, cands), PreconditionError);
}

TEST_CASE("score artifact round-trip") {
  const std::vector<CandidateSummary> cands = {{0, "a", "p", 0}, {1, "b", "p", 1}};
  SummaryScoreTable t;
  t.scores = {{0, 0.1}, {1, 0.4}};
  t.selected = 1;
  t.weighting = Weighting::unweighted;
  const auto j = score_artifact(cands, t);
  CHECK(j["selected_l"] == 1);
  CHECK(j["weighting"] == "unweighted");
  CHECK(j["scores"][1] == json({{"l", 1}, {"J", 0.4}}));
  CHECK(j["candidates"][0].contains("prompt_name"));
  const auto back = table_from_artifact(j);
  CHECK(back.selected == 1);
  CHECK(back.scores[1].score == 0.4);
}
