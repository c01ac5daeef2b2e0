#include "flex/summary.hpp"

#include <algorithm>
#include <cmath>
#include <cctype>
#include <map>
#include <memory>
#include <sstream>

#include "flex/errors.hpp"
#include "flex/hashing.hpp"
#include "flex/io.hpp"
#include "flex/log.hpp"
#include "flex/parallel.hpp"

namespace flex {

using nlohmann::json;

std::string to_string(PromptSource s) { return s == PromptSource::author ? "author" : "llm"; }

std::string to_string(Weighting w) { return w == Weighting::cluster_weighted ? "cluster_weighted" : "unweighted"; }

std::string to_string(Rank r) {
  switch (r) {
    case Rank::best: return "best";
    case Rank::median: return "median";
    case Rank::worst: return "worst";
  }
  return "best";
}

PromptSource parse_prompt_source(std::string_view s) {
  if (s == "author") return PromptSource::author;
  if (s == "llm") return PromptSource::llm;
  throw ConfigError("unknown prompt source '" + std::string(s) + "'");
}

Weighting parse_weighting(std::string_view s) {
  if (s == "cluster_weighted") return Weighting::cluster_weighted;
  if (s == "unweighted") return Weighting::unweighted;
  throw ConfigError("unknown weighting '" + std::string(s) + "'");
}

Rank parse_rank(std::string_view s) {
  if (s == "best") return Rank::best;
  if (s == "median") return Rank::median;
  if (s == "worst") return Rank::worst;
  throw ConfigError("unknown rank '" + std::string(s) + "'");
}

std::vector<SummaryPrompt> default_summary_prompts() {
  return {
      {"Bullet Rules",
       "From the following feedback, extract the most important ideas a model should remember to avoid similar "
       "mistakes again. Present them as clear bullet points.",
       PromptSource::author},
      {"LLM Commands",
       "Given prompt-response-feedback triples, infer general behavioral rules that raised scores. Summarize them as "
       "direct, command-style instructions. Use imperative tone, exaggerate compliance, forbid reasoning or "
       "commentary, and keep output JSON-safe and under 120 tokens.",
       PromptSource::llm},
      {"Crisp Lessons",
       "Summarize the feedback into a few crisp and actionable lessons that could help improve similar responses in "
       "the future. Focus on clarity and utility.",
       PromptSource::author},
      {"Single Directive",
       "Summarize feedback patterns into a single behavioral directive for LLM inference. Focus on strict obedience, "
       "clear polarity, and exact format replication. Output short, direct, rule-like instructions only.",
       PromptSource::author},
      {"LLM Paragraph",
       "You are analyzing multiple (prompt, response, feedback) triplets. Produce a single summary that teaches "
       "another model how to perform better on future tasks of the same kind. Identify repeated behavioral "
       "corrections, extract underlying rules that improve evaluation scores, and rewrite them as short, "
       "imperative, command-style instructions. Use exaggerated compliance for limits, avoid meta-phrasing, keep the "
       "output deterministic and JSON-safe, and compress it into one paragraph under 120 tokens. Optionally include "
       "a compact version under 40 tokens.",
       PromptSource::llm},
  };
}

std::vector<SummaryPrompt> load_summary_prompts(const std::filesystem::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("summary prompt directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().filename().string().front() != '.') files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::vector<SummaryPrompt> out;
  for (const auto& f : files) {
    SummaryPrompt p;
    p.name = f.stem().string();
    std::istringstream in(read_file(f));
    std::string line, body;
    bool header = true;
    while (std::getline(in, line)) {
      if (header && line.rfind("# name:", 0) == 0) {
        p.name = line.substr(7);
        p.name.erase(0, p.name.find_first_not_of(' '));
        continue;
      }
      if (header && line.rfind("# source:", 0) == 0) {
        std::string s = line.substr(9);
        s.erase(0, s.find_first_not_of(' '));
        p.source = parse_prompt_source(s);
        continue;
      }
      header = false;
      if (!body.empty()) body.push_back('\n');
      body += line;
    }
    while (!body.empty() && (body.back() == '\n' || body.back() == ' ')) body.pop_back();
    if (body.empty()) throw ConfigError("summary prompt file is empty: " + f.string());
    p.template_text = body;
    out.push_back(std::move(p));
  }
  if (out.empty()) throw ConfigError("no summary prompts in " + dir.string());
  return out;
}

void write_summary_prompts(const std::filesystem::path& dir, std::span<const SummaryPrompt> prompts) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    std::string file = std::to_string(i + 1) + "-";
    for (char c : prompts[i].name) file.push_back(std::isalnum(static_cast<unsigned char>(c)) ? std::tolower(c) : '-');
    write_file_atomic(dir / (file + ".txt"), "# name: " + prompts[i].name + "\n# source: " +
                                                 to_string(prompts[i].source) + "\n" + prompts[i].template_text +
                                                 "\n");
  }
}

std::string serialize_feedback(std::span<const VerifiedExplanation> explanations) {
  json arr = json::array();
  for (const auto& e : explanations) arr.push_back({{"prompt", e.x}, {"response", e.r}, {"feedback", e.f}});
  return arr.dump();
}

std::string summary_request_text(const SummaryPrompt& prompt, std::span<const VerifiedExplanation> explanations) {
  return prompt.template_text + "\n\n" + serialize_feedback(explanations);
}

CandidateBatch generate_candidates(std::span<const VerifiedExplanation> explanations,
                                   std::span<const SummaryPrompt> prompts, Gateway& summarizer,
                                   const GenerationOptions& options) {
  if (explanations.empty()) throw PreconditionError("summary generation needs at least one explanation");
  if (prompts.empty()) throw PreconditionError("summary generation needs at least one prompt");
  if (!summarizer.descriptor().has(Capability::generate))
    throw CapabilityError("summarizer backend does not declare generate");
  if (options.samples_per_prompt < 1) throw PreconditionError("samples_per_prompt must be >= 1");
  CandidateBatch batch;
  for (std::size_t p = 0; p < prompts.size(); ++p) {
    GenerationRequest req;
    req.user_prompt = summary_request_text(prompts[p], explanations);
    req.temperature = options.temperature;
    req.num_samples = options.samples_per_prompt;
    req.seed = mix_seed(options.seed, p);
    std::vector<std::string> samples;
    try {
      samples = summarizer.generate(req).samples;
    } catch (const Error& e) {
      log::warn("summary prompt '" + prompts[p].name + "' failed: " + e.what());
      batch.incomplete_prompts.push_back(prompts[p].name);
      continue;
    }
    // l = prompt position * samples + sample, so a failed prompt leaves a gap.
    for (int s = 0; s < options.samples_per_prompt; ++s)
      batch.candidates.push_back({static_cast<int>(p) * options.samples_per_prompt + s,
                                  samples[static_cast<std::size_t>(s)], prompts[p].name, s});
  }
  return batch;
}

std::vector<double> vector_difference(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw FatalError("embedding dimension mismatch");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

std::vector<double> compute_delta_f(const VerifiedExplanation& e, Gateway& embedder) {
  return compute_delta_s(e, e.f, embedder);
}

std::vector<double> compute_delta_s(const VerifiedExplanation& e, std::string_view summary, Gateway& embedder) {
  const auto with = embedder.embed_sequence(join_segments({e.x, e.r, summary}));
  const auto base = embedder.embed_sequence(join_segments({e.x, e.r}));
  return vector_difference(with.values, base.values);
}

double cosine_or_zero(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw FatalError("embedding dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) {
    log::warn("zero-norm embedding delta; cosine term set to 0");
    return 0.0;
  }
  const double c = dot / (std::sqrt(na) * std::sqrt(nb));
  return std::clamp(c, -1.0, 1.0);
}

double weighted_score(std::span<const std::vector<double>> delta_f, std::span<const std::vector<double>> delta_s,
                      std::span<const double> weights) {
  if (delta_f.size() != delta_s.size() || delta_f.size() != weights.size())
    throw PreconditionError("deltas and weights must align");
  double j = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) j += weights[i] * cosine_or_zero(delta_f[i], delta_s[i]);
  return j;
}

std::vector<double> explanation_weights(std::span<const VerifiedExplanation> explanations,
                                        const ClusterSelection& selection, Weighting weighting) {
  if (explanations.empty()) throw PreconditionError("no explanations to weight");
  if (weighting == Weighting::unweighted)
    return std::vector<double>(explanations.size(), 1.0 / static_cast<double>(explanations.size()));
  std::map<int, double> by_cluster;
  for (const auto& c : selection.clusters) by_cluster[c.index] = c.weight;
  std::vector<double> raw;
  for (const auto& e : explanations) {
    const auto it = by_cluster.find(e.cluster_index);
    if (it == by_cluster.end())
      throw PreconditionError("explanation for case " + e.case_id + " names unknown cluster " +
                              std::to_string(e.cluster_index));
    raw.push_back(it->second);
  }
  if (raw.size() < selection.clusters.size())
    log::warn(std::to_string(selection.clusters.size() - raw.size()) +
              " cluster(s) have no explanation; weights renormalized over the rest");
  const std::unique_ptr<bool[]> keep(new bool[raw.size()]);
  std::fill_n(keep.get(), raw.size(), true);
  return renormalize_weights(raw, std::span<const bool>(keep.get(), raw.size()));
}

DeltaCache build_delta_cache(std::span<const VerifiedExplanation> explanations, Gateway& embedder, int parallelism) {
  DeltaCache cache;
  cache.base.resize(explanations.size());
  cache.delta_f.resize(explanations.size());
  parallel_for(explanations.size(), parallelism, [&](std::size_t i) {
    const auto& e = explanations[i];
    cache.base[i] = embedder.embed_sequence(join_segments({e.x, e.r})).values;
    cache.delta_f[i] = vector_difference(embedder.embed_sequence(join_segments({e.x, e.r, e.f})).values, cache.base[i]);
  });
  return cache;
}

int argmax_first(std::span<const double> values) {
  if (values.empty()) throw PreconditionError("argmax of an empty list");
  int best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  return best;
}

SummaryScoreTable score_candidates(std::span<const CandidateSummary> candidates,
                                   std::span<const VerifiedExplanation> explanations, std::span<const double> weights,
                                   Weighting weighting, Gateway& embedder, int parallelism) {
  if (candidates.empty()) throw PreconditionError("no candidate summaries to score");
  if (weights.size() != explanations.size()) throw PreconditionError("one weight per explanation is required");
  const DeltaCache cache = build_delta_cache(explanations, embedder, parallelism);
  const std::size_t n = explanations.size();
  std::vector<std::vector<double>> delta_s(candidates.size() * n);
  parallel_for(delta_s.size(), parallelism, [&](std::size_t job) {
    const std::size_t l = job / n, i = job % n;
    const auto& e = explanations[i];
    delta_s[job] = vector_difference(embedder.embed_sequence(join_segments({e.x, e.r, candidates[l].text})).values,
                                     cache.base[i]);
  });
  SummaryScoreTable table;
  table.weighting = weighting;
  std::vector<double> j(candidates.size());
  for (std::size_t l = 0; l < candidates.size(); ++l) {
    j[l] = weighted_score(cache.delta_f, std::span(delta_s).subspan(l * n, n), weights);
    table.scores.push_back({candidates[l].index, j[l]});
  }
  table.selected = table.scores[static_cast<std::size_t>(argmax_first(j))].index;
  return table;
}

std::vector<ScoreEntry> rank_scores(std::span<const ScoreEntry> scores) {
  std::vector<ScoreEntry> out(scores.begin(), scores.end());
  std::stable_sort(out.begin(), out.end(), [](const ScoreEntry& a, const ScoreEntry& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.index < b.index;
  });
  return out;
}

SelectedSummary select_summary(const SummaryScoreTable& table, std::span<const CandidateSummary> candidates,
                               Rank rank, std::string source_run_id) {
  if (table.scores.empty()) throw PreconditionError("score table is empty");
  SelectedSummary out;
  out.ranking = rank_scores(table.scores);
  out.rank = rank;
  out.source_run_id = std::move(source_run_id);
  ScoreEntry pick;
  switch (rank) {
    case Rank::best: pick = out.ranking.front(); break;
    case Rank::median: pick = out.ranking[out.ranking.size() / 2]; break;
    case Rank::worst: {
      const double lowest = out.ranking.back().score;
      pick = *std::find_if(out.ranking.begin(), out.ranking.end(),
                           [&](const ScoreEntry& e) { return e.score == lowest; });
      break;
    }
  }
  const auto it = std::find_if(candidates.begin(), candidates.end(),
                               [&](const CandidateSummary& c) { return c.index == pick.index; });
  if (it == candidates.end()) throw ArtifactError("selected candidate " + std::to_string(pick.index) + " is missing");
  out.text = it->text;
  out.index = pick.index;
  out.score = pick.score;
  return out;
}

void to_json(json& j, const SummaryPrompt& p) {
  j = {{"name", p.name}, {"template", p.template_text}, {"source", to_string(p.source)}};
}

void to_json(json& j, const CandidateSummary& c) {
  j = {{"l", c.index}, {"prompt_name", c.prompt_name}, {"sample_index", c.sample_index}, {"text", c.text}};
}

void from_json(const json& j, CandidateSummary& c) {
  c.index = j.at("l").get<int>();
  c.prompt_name = j.at("prompt_name").get<std::string>();
  c.sample_index = j.at("sample_index").get<int>();
  c.text = j.at("text").get<std::string>();
}

void to_json(json& j, const CandidateBatch& b) {
  j = {{"candidates", b.candidates}, {"incomplete_prompts", b.incomplete_prompts}};
}

void from_json(const json& j, CandidateBatch& b) {
  b.candidates = j.at("candidates").get<std::vector<CandidateSummary>>();
  b.incomplete_prompts = j.value("incomplete_prompts", std::vector<std::string>{});
}

void to_json(json& j, const ScoreEntry& s) { j = {{"l", s.index}, {"J", s.score}}; }

void from_json(const json& j, ScoreEntry& s) {
  s.index = j.at("l").get<int>();
  s.score = j.at("J").get<double>();
}

void to_json(json& j, const SelectedSummary& s) {
  j = {{"text", s.text},   {"source_run_id", s.source_run_id}, {"l", s.index},
       {"J", s.score},     {"rank", to_string(s.rank)},         {"ranking", s.ranking}};
}

void from_json(const json& j, SelectedSummary& s) {
  s.text = j.at("text").get<std::string>();
  s.source_run_id = j.value("source_run_id", std::string());
  s.index = j.at("l").get<int>();
  s.score = j.at("J").get<double>();
  s.rank = parse_rank(j.value("rank", std::string("best")));
  s.ranking = j.value("ranking", json::array()).get<std::vector<ScoreEntry>>();
}

json score_artifact(std::span<const CandidateSummary> candidates, const SummaryScoreTable& table) {
  return {{"candidates", std::vector<CandidateSummary>(candidates.begin(), candidates.end())},
          {"scores", table.scores},
          {"selected_l", table.selected},
          {"weighting", to_string(table.weighting)}};
}

SummaryScoreTable table_from_artifact(const json& j) {
  SummaryScoreTable t;
  t.scores = j.at("scores").get<std::vector<ScoreEntry>>();
  t.selected = j.at("selected_l").get<int>();
  t.weighting = parse_weighting(j.at("weighting").get<std::string>());
  return t;
}

}  // namespace flex
