#include "flex/pipeline.hpp"

#include <algorithm>
#include <sstream>

#include "flex/errors.hpp"
#include "flex/hashing.hpp"
#include "flex/io.hpp"
#include "flex/log.hpp"
#include "flex/manifest.hpp"

namespace flex {

using nlohmann::json;

namespace artifacts {
std::string records(const std::string& tag) { return "records-" + tag + ".jsonl"; }
std::string report(const std::string& tag) { return "report-" + tag + ".json"; }
}  // namespace artifacts

BackendPool::BackendPool(const PipelineConfig& config) : model_(std::make_unique<Gateway>(config.backends.model)) {
  if (config.backends.summarizer) summarizer_ = std::make_unique<Gateway>(*config.backends.summarizer);
  if (config.backends.retriever) retriever_ = std::make_unique<Gateway>(*config.backends.retriever);
}

BackendPool::BackendPool(std::shared_ptr<Backend> model, std::shared_ptr<Backend> summarizer,
                         std::shared_ptr<Backend> retriever)
    : model_(std::make_unique<Gateway>(std::move(model))) {
  if (summarizer) summarizer_ = std::make_unique<Gateway>(std::move(summarizer));
  if (retriever) retriever_ = std::make_unique<Gateway>(std::move(retriever));
}

json BackendPool::descriptors() const {
  json out = {{"model", model_->descriptor()}};
  out["summarizer"] = summarizer_ ? json(summarizer_->descriptor()) : json("model");
  out["retriever"] = retriever_ ? json(retriever_->descriptor()) : json("model");
  return out;
}

namespace {

void parse_jsonl(const std::string& content, const std::string& source,
                 const std::function<void(const json&, std::size_t)>& fn) {
  std::istringstream in(content);
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error&) {
      throw SchemaError(source + ":" + std::to_string(no) + ": invalid JSON");
    }
    try {
      fn(obj, no);
    } catch (const json::exception& e) {
      throw SchemaError(source + ":" + std::to_string(no) + ": " + e.what());
    }
  }
}

std::vector<VerifiedExplanation> parse_explanations(const std::string& content, const std::string& source) {
  std::vector<VerifiedExplanation> out;
  parse_jsonl(content, source, [&](const json& obj, std::size_t) { out.push_back(obj.get<VerifiedExplanation>()); });
  return out;
}

json parse_json_artifact(const std::string& content, const std::string& source) {
  try {
    return json::parse(content);
  } catch (const json::parse_error& e) {
    throw SchemaError(source + ": " + e.what());
  }
}

// Collects inputs/outputs and writes the stage manifest. The run id is a
// digest of the stage, its start time, configuration and inputs.
class StageRecorder {
 public:
  StageRecorder(fs::path run_dir, std::string stage, std::string variant, const PipelineConfig* config,
                BackendPool* pool)
      : run_dir_(std::move(run_dir)) {
    m_.stage = std::move(stage);
    m_.variant = std::move(variant);
    m_.started = utc_timestamp();
    if (config) {
      m_.config = config_to_json(*config);
      m_.seeds = {{"clustering", config->clustering.seed},
                  {"summarization", config->summarization.seed},
                  {"evaluation", config->evaluation.seed}};
    }
    if (pool) m_.backends = pool->descriptors();
  }

  void input(const fs::path& file) { m_.inputs.push_back(artifact_ref(run_dir_, file)); }
  void output(const std::string& name) { m_.outputs.push_back(artifact_ref(run_dir_, run_dir_ / name)); }
  json& details() { return m_.details; }
  void set_started(std::string s) { m_.started = std::move(s); }

  std::string finish() {
    m_.finished = utc_timestamp();
    std::string seed = m_.stage + "\x1f" + m_.variant + "\x1f" + m_.started + "\x1f" + m_.config.dump();
    for (const auto& i : m_.inputs) seed += "\x1f" + i.hash;
    m_.run_id = m_.stage + "-" + sha256_hex(seed).substr(0, 12);
    write_manifest(run_dir_, m_);
    return m_.run_id;
  }

 private:
  fs::path run_dir_;
  RunManifest m_;
};

const fs::path& require_path(const fs::path& p, const char* key) {
  if (p.empty()) throw ConfigError(std::string(key) + " is not configured");
  return p;
}

std::vector<ErrorCase> load_errors(const fs::path& run_dir) {
  const auto content = load_artifact(run_dir, artifacts::kErrors, "collect-errors");
  return parse_errors(content, (run_dir / artifacts::kErrors).string());
}

ClusterSelection load_selection(const fs::path& run_dir) {
  const auto content = load_artifact(run_dir, artifacts::kClusters, "cluster");
  try {
    return parse_json_artifact(content, artifacts::kClusters).get<ClusterSelection>();
  } catch (const json::exception& e) {
    throw SchemaError(std::string(artifacts::kClusters) + ": " + e.what());
  }
}

std::vector<VerifiedExplanation> load_feedback(const fs::path& run_dir) {
  const auto content = load_artifact(run_dir, artifacts::kExplanations, "verify-batch");
  auto out = parse_explanations(content, (run_dir / artifacts::kExplanations).string());
  if (out.empty()) throw PreconditionError("no verified explanations in " + (run_dir / artifacts::kExplanations).string());
  return out;
}

SelectedSummary load_summary_file(const fs::path& run_dir, const std::optional<fs::path>& explicit_path) {
  std::string content, source;
  if (explicit_path) {
    if (!fs::exists(*explicit_path)) throw ArtifactError("missing artifact " + explicit_path->string());
    content = read_file(*explicit_path);
    source = explicit_path->string();
  } else {
    content = load_artifact(run_dir, artifacts::kSummary, "select");
    source = (run_dir / artifacts::kSummary).string();
  }
  try {
    return parse_json_artifact(content, source).get<SelectedSummary>();
  } catch (const json::exception& e) {
    throw SchemaError(source + ": " + e.what());
  }
}

std::vector<TaskInstance> load_split(const fs::path& path, const PipelineConfig& config) {
  if (!fs::exists(path)) throw ArtifactError("missing dataset " + path.string());
  return load_dataset(path, config.datasets.kind);
}

}  // namespace

TrainRun load_train_run(const std::string& jsonl) {
  TrainRun run;
  parse_jsonl(jsonl, artifacts::kTrainRecords, [&](const json& obj, std::size_t) {
    run.instances.push_back(obj.at("instance").get<TaskInstance>());
    run.responses.push_back(obj.at("response").get<std::string>());
    run.verdicts.push_back(obj.at("verdict").get<Verdict>());
  });
  return run;
}

std::string train_run_jsonl(const TrainRun& run) {
  std::vector<json> rows;
  for (std::size_t i = 0; i < run.instances.size(); ++i)
    rows.push_back({{"instance", run.instances[i]}, {"response", run.responses[i]}, {"verdict", run.verdicts[i]}});
  return to_jsonl(rows);
}

std::vector<ErrorCase> parse_errors(const std::string& jsonl, const std::string& source) {
  std::vector<ErrorCase> out;
  parse_jsonl(jsonl, source, [&](const json& obj, std::size_t) { out.push_back(obj.get<ErrorCase>()); });
  return out;
}

CollectOutcome stage_collect(const fs::path& run_dir, const PipelineConfig& config, BackendPool& pool) {
  RunLock lock(run_dir);
  StageRecorder rec(run_dir, "collect", "", &config, &pool);
  const auto& train_path = require_path(config.datasets.train, "datasets.train");
  auto train = load_split(train_path, config);
  if (train.empty()) throw PreconditionError("training set " + train_path.string() + " is empty");
  rec.input(train_path);
  const auto run = run_train_cot(train, pool.model(), config.evaluation.parallelism);
  const auto errors = errors_from_run(run);
  write_file_atomic(run_dir / artifacts::kTrainRecords, train_run_jsonl(run));
  write_file_atomic(run_dir / artifacts::kErrors, to_jsonl(std::vector<json>(errors.begin(), errors.end())));
  rec.output(artifacts::kTrainRecords);
  rec.output(artifacts::kErrors);
  rec.details() = {{"train", train.size()}, {"errors", errors.size()}};
  rec.finish();
  if (errors.empty()) throw PreconditionError("nothing to annotate: the model made no errors on the training split");
  return {train.size(), errors.size()};
}

SelectionStrategy parse_selection_strategy(std::string_view s) {
  if (s == "kmeans") return SelectionStrategy::kmeans;
  if (s == "random") return SelectionStrategy::random;
  if (s == "task_type") return SelectionStrategy::task_type;
  throw ConfigError("unknown selection strategy '" + std::string(s) + "'");
}

ClusterSelection stage_cluster(const fs::path& run_dir, const PipelineConfig& config, BackendPool& pool,
                               const ClusterStageOptions& options) {
  RunLock lock(run_dir);
  auto errors = load_errors(run_dir);
  if (errors.empty()) throw PreconditionError("nothing to annotate: the error set is empty");
  std::string variant;
  ClusterSelection selection;
  switch (options.strategy) {
    case SelectionStrategy::kmeans: {
      embed_errors(errors, pool.model(), config.evaluation.parallelism);
      KMeansOptions km{config.clustering.max_iter, config.clustering.restarts};
      if (options.k) {
        variant = "k" + std::to_string(*options.k);
        std::vector<Point> points;
        std::vector<std::string> ids;
        for (const auto& e : errors) {
          points.push_back(e.embedding->values);
          ids.push_back(e.id());
        }
        const auto model = kmeans_best_of(points, *options.k, mix_seed(config.clustering.seed, 0x6B00 + *options.k), km);
        selection = select_representatives(model, ids, points, config.verification.backups);
        selection.seed = config.clustering.seed;
      } else {
        MiningOptions mo{km, config.clustering.k_min, config.clustering.k_max, config.verification.backups,
                         config.clustering.seed};
        selection = cluster_errors(errors, mo).selection;
      }
      break;
    }
    case SelectionStrategy::random:
      if (!options.k) throw ConfigError("random selection needs --k");
      variant = "random";
      selection = random_selection(errors, *options.k, config.clustering.seed);
      break;
    case SelectionStrategy::task_type:
      variant = "task_type";
      selection = task_type_selection(errors, config.clustering.seed);
      break;
  }
  StageRecorder rec(run_dir, "cluster", variant, &config, &pool);
  rec.input(run_dir / artifacts::kErrors);
  write_file_atomic(run_dir / artifacts::kClusters, json(selection).dump(2) + "\n");
  rec.output(artifacts::kClusters);
  rec.details() = {{"k_star", selection.k_star}, {"strategy", selection.strategy}};
  rec.finish();
  return selection;
}

ExplanationMode parse_explanation_mode(std::string_view s) {
  if (s == "human") return ExplanationMode::human;
  if (s == "auto") return ExplanationMode::auto_generated;
  if (s == "solution") return ExplanationMode::solution_only;
  throw ConfigError("unknown explanation mode '" + std::string(s) + "'");
}

std::unique_ptr<AnnotationStore> open_annotation_store(const fs::path& run_dir, const PipelineConfig& config,
                                                       BackendPool& pool) {
  auto errors = load_errors(run_dir);
  const auto selection = load_selection(run_dir);
  return std::make_unique<AnnotationStore>(std::move(errors), selection, pool.model(),
                                           AnnotationOptions{config.verification.attempt_limit, run_dir});
}

void record_annotation_manifest(const fs::path& run_dir, const PipelineConfig& config, BackendPool& pool,
                                const std::string& variant, const std::string& started) {
  StageRecorder rec(run_dir, "annotate", variant, &config, &pool);
  rec.set_started(started);
  rec.input(run_dir / artifacts::kErrors);
  rec.input(run_dir / artifacts::kClusters);
  if (fs::exists(run_dir / artifacts::kAnnotationState)) rec.output(artifacts::kAnnotationState);
  if (fs::exists(run_dir / artifacts::kExplanations)) rec.output(artifacts::kExplanations);
  rec.details() = {{"attempt_limit", config.verification.attempt_limit}};
  rec.finish();
}

BatchOutcome stage_verify_batch(const fs::path& run_dir, const PipelineConfig& config, BackendPool& pool,
                                const VerifyStageOptions& options) {
  RunLock lock(run_dir);
  const std::string started = utc_timestamp();
  if (options.mode == ExplanationMode::human) {
    if (options.drafts.empty()) throw ConfigError("human verification needs a drafts file (--drafts)");
    if (!fs::exists(options.drafts)) throw ArtifactError("missing artifact " + options.drafts.string());
    auto store = open_annotation_store(run_dir, config, pool);
    const auto outcome = verify_batch(*store, load_drafts(options.drafts));
    for (int c : outcome.exhausted_clusters)
      log::warn("cluster " + std::to_string(c) + " produced no verified explanation");
    StageRecorder rec(run_dir, "annotate", "", &config, &pool);
    rec.set_started(started);
    rec.input(run_dir / artifacts::kErrors);
    rec.input(run_dir / artifacts::kClusters);
    rec.input(options.drafts);
    rec.output(artifacts::kAnnotationState);
    rec.output(artifacts::kExplanations);
    rec.details() = {{"mode", "human"},
                     {"verified", outcome.verified.size()},
                     {"exhausted_clusters", outcome.exhausted_clusters},
                     {"attempt_limit", config.verification.attempt_limit}};
    rec.finish();
    return outcome;
  }

  const auto errors = load_errors(run_dir);
  const auto selection = load_selection(run_dir);
  std::map<std::string, const ErrorCase*> by_id;
  for (const auto& e : errors) by_id[e.id()] = &e;
  BatchOutcome outcome;
  for (const auto& cluster : selection.clusters) {
    if (cluster.candidates.empty()) continue;
    const auto it = by_id.find(cluster.candidates.front());
    if (it == by_id.end()) throw ArtifactError("cluster names unknown case " + cluster.candidates.front());
    outcome.verified.push_back(options.mode == ExplanationMode::auto_generated
                                   ? auto_explain(*it->second, cluster.index, pool.summarizer())
                                   : solution_only(*it->second, cluster.index));
  }
  write_file_atomic(run_dir / artifacts::kExplanations, explanations_jsonl(outcome.verified));
  const std::string variant = options.mode == ExplanationMode::auto_generated ? "auto" : "solution";
  StageRecorder rec(run_dir, "annotate", variant, &config, &pool);
  rec.set_started(started);
  rec.input(run_dir / artifacts::kErrors);
  rec.input(run_dir / artifacts::kClusters);
  rec.output(artifacts::kExplanations);
  rec.details() = {{"mode", variant}, {"explanations", outcome.verified.size()}};
  rec.finish();
  return outcome;
}

CandidateBatch stage_summarize(const fs::path& run_dir, const PipelineConfig& config, BackendPool& pool) {
  RunLock lock(run_dir);
  StageRecorder rec(run_dir, "summarize", "", &config, &pool);
  const auto feedback = load_feedback(run_dir);
  rec.input(run_dir / artifacts::kExplanations);
  const auto prompts = config.summarization.prompts_dir.empty() ? default_summary_prompts()
                                                                 : load_summary_prompts(config.summarization.prompts_dir);
  const auto batch =
      generate_candidates(feedback, prompts, pool.summarizer(),
                          {config.summarization.samples_per_prompt, config.summarization.temperature,
                           config.summarization.seed});
  if (batch.candidates.empty()) throw Error("every summary prompt failed; no candidates were produced");
  write_file_atomic(run_dir / artifacts::kCandidates, json(batch).dump(2) + "\n");
  rec.output(artifacts::kCandidates);
  json prompt_list = json::array();
  for (const auto& p : prompts) prompt_list.push_back(p);
  rec.details() = {{"prompts", prompt_list}, {"candidates", batch.candidates.size()},
                   {"incomplete_prompts", batch.incomplete_prompts}};
  rec.finish();
  return batch;
}

SelectedSummary stage_raw_summary(const fs::path& run_dir) {
  RunLock lock(run_dir);
  StageRecorder rec(run_dir, "summarize", "raw", nullptr, nullptr);
  const auto feedback = load_feedback(run_dir);
  rec.input(run_dir / artifacts::kExplanations);
  SelectedSummary s;
  for (const auto& f : feedback) {
    if (!s.text.empty()) s.text.push_back('\n');
    s.text += f.f;
  }
  s.index = -1;
  s.source_run_id = "raw";
  write_file_atomic(run_dir / artifacts::kSummary, json(s).dump(2) + "\n");
  rec.output(artifacts::kSummary);
  rec.finish();
  return s;
}

SelectedSummary stage_select(const fs::path& run_dir, const PipelineConfig& config, BackendPool& pool,
                             const SelectStageOptions& options) {
  RunLock lock(run_dir);
  std::string variant;
  if (options.weighting != Weighting::cluster_weighted) variant = to_string(options.weighting);
  if (options.rank != Rank::best) variant += (variant.empty() ? "" : "-") + to_string(options.rank);
  StageRecorder rec(run_dir, "select", variant, &config, &pool);
  // Nearest upstream first, so a fresh run directory points at summarize.
  const auto cand_content = load_artifact(run_dir, artifacts::kCandidates, "summarize");
  const auto batch = parse_json_artifact(cand_content, artifacts::kCandidates).get<CandidateBatch>();
  const auto feedback = load_feedback(run_dir);
  const auto selection = load_selection(run_dir);
  rec.input(run_dir / artifacts::kExplanations);
  rec.input(run_dir / artifacts::kClusters);
  rec.input(run_dir / artifacts::kCandidates);
  const auto weights = explanation_weights(feedback, selection, options.weighting);
  const auto table = score_candidates(batch.candidates, feedback, weights, options.weighting, pool.model(),
                                      config.evaluation.parallelism);
  std::string source;
  if (const auto m = run_dir / manifest_filename("summarize"); fs::exists(m)) source = read_manifest(m).run_id;
  const auto selected = select_summary(table, batch.candidates, options.rank, source);
  write_file_atomic(run_dir / artifacts::kScores, score_artifact(batch.candidates, table).dump(2) + "\n");
  write_file_atomic(run_dir / artifacts::kSummary, json(selected).dump(2) + "\n");
  rec.output(artifacts::kScores);
  rec.output(artifacts::kSummary);
  rec.details() = {{"selected_l", selected.index}, {"J", selected.score}, {"rank", to_string(options.rank)},
                   {"weighting", to_string(options.weighting)}};
  rec.finish();
  return selected;
}

namespace {

EvaluateOutcome evaluate_into(const fs::path& run_dir, const PipelineConfig& config, BackendPool& pool,
                              EvalConfig ec, const std::optional<SelectedSummary>& summary, const std::string& tag,
                              StageRecorder& rec) {
  const auto& test_path = require_path(config.datasets.test, "datasets.test");
  const auto test = load_split(test_path, config);
  rec.input(test_path);
  if (summary) ec.summary = summary->text;
  RagIndex index;
  if (ec.method == Method::rag) {
    const auto train_content = load_artifact(run_dir, artifacts::kTrainRecords, "collect-errors");
    rec.input(run_dir / artifacts::kTrainRecords);
    index = build_rag_index(load_train_run(train_content), pool.retriever(), ec.parallelism);
  }
  EvaluateOutcome out;
  out.tag = tag;
  out.result = run_method(test, ec, pool.model(), &index, &pool.retriever());
  write_file_atomic(run_dir / artifacts::records(tag), records_jsonl(out.result.records));
  rec.output(artifacts::records(tag));

  const fs::path cot_path = run_dir / artifacts::records("cot");
  if (tag == "cot") {
    out.report = compute_metrics(out.result.records, out.result.records, tag);
  } else if (fs::exists(cot_path)) {
    const auto cot_content = load_artifact(run_dir, artifacts::records("cot"), "evaluate --method cot");
    std::vector<EvalRecord> cot;
    parse_jsonl(cot_content, cot_path.string(), [&](const json& obj, std::size_t) { cot.push_back(obj.get<EvalRecord>()); });
    rec.input(cot_path);
    out.report = compute_metrics(out.result.records, cot, method_tag(ec));
  } else {
    log::warn("no CoT records in " + run_dir.string() + "; accuracy delta and ERR are not reported");
    out.report = compute_metrics(out.result.records, method_tag(ec));
  }
  out.report.skipped = out.result.skipped;
  if (summary && ec.active_summary()) out.report.summary_tokens = summary_overhead(summary->text).tokens;
  return out;
}

}  // namespace

EvaluateOutcome stage_evaluate(const fs::path& run_dir, const PipelineConfig& config, BackendPool& pool,
                               const EvaluateStageOptions& options) {
  RunLock lock(run_dir);
  EvalConfig ec;
  ec.method = options.method;
  ec.flex_stacked = options.stacked && options.method != Method::flex;
  ec.sc_samples = config.evaluation.sc_samples;
  ec.sc_temperature = config.evaluation.sc_temperature;
  ec.rag_k = config.evaluation.rag_k;
  ec.parallelism = config.evaluation.parallelism;
  ec.seed = config.evaluation.seed;
  ec.max_new_tokens = config.evaluation.max_new_tokens;
  const std::string tag = method_tag(ec);
  StageRecorder rec(run_dir, "evaluate", tag, &config, &pool);
  std::optional<SelectedSummary> summary;
  if (ec.method == Method::flex || ec.flex_stacked) {
    summary = load_summary_file(run_dir, options.summary_path);
    rec.input(options.summary_path ? *options.summary_path : run_dir / artifacts::kSummary);
  }
  auto out = evaluate_into(run_dir, config, pool, ec, summary, tag, rec);
  write_file_atomic(run_dir / artifacts::report(tag), json(out.report).dump(2) + "\n");
  rec.output(artifacts::report(tag));
  rec.details() = {{"n", out.report.n}, {"accuracy", out.report.accuracy}, {"failures", out.result.failures.size()},
                   {"skipped", out.result.skipped.size()}};
  rec.finish();
  return out;
}

EvaluateOutcome stage_transfer(const fs::path& run_dir, const PipelineConfig& config, BackendPool& pool,
                               const TransferStageOptions& options) {
  RunLock lock(run_dir);
  if (options.summary_path.empty()) throw ConfigError("transfer needs --summary");
  std::string label = options.source_label;
  const auto summary = load_summary_file(run_dir, options.summary_path);
  if (label.empty()) label = summary.source_run_id.empty() ? "external" : summary.source_run_id;
  std::string safe;
  for (char c : label) safe.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' ? c : '_');
  const std::string tag = "transfer-" + safe;
  EvalConfig ec;
  ec.method = Method::flex;
  ec.parallelism = config.evaluation.parallelism;
  ec.seed = config.evaluation.seed;
  ec.max_new_tokens = config.evaluation.max_new_tokens;
  StageRecorder rec(run_dir, "transfer", safe, &config, &pool);
  rec.input(options.summary_path);
  auto out = evaluate_into(run_dir, config, pool, ec, summary, tag, rec);
  out.report.source = label;
  out.report.target = pool.model().descriptor().model_id;
  write_file_atomic(run_dir / artifacts::report(tag), json(out.report).dump(2) + "\n");
  rec.output(artifacts::report(tag));
  rec.finish();
  return out;
}

std::string stage_report(const fs::path& run_dir) {
  RunLock lock(run_dir);
  StageRecorder rec(run_dir, "report", "", nullptr, nullptr);
  std::vector<std::string> names;
  if (fs::is_directory(run_dir))
    for (const auto& e : fs::directory_iterator(run_dir)) {
      const auto n = e.path().filename().string();
      if (n.rfind("report-", 0) == 0 && e.path().extension() == ".json") names.push_back(n);
    }
  if (names.empty()) throw ArtifactError("missing artifact " + (run_dir / artifacts::report("cot")).string() +
                                         " (run `flex evaluate` first)");
  std::sort(names.begin(), names.end(), [](const std::string& a, const std::string& b) {
    const bool ac = a == "report-cot.json", bc = b == "report-cot.json";
    if (ac != bc) return ac;
    return a < b;
  });
  std::vector<MetricsReport> reports;
  for (const auto& n : names) {
    reports.push_back(parse_json_artifact(load_artifact(run_dir, n), n).get<MetricsReport>());
    rec.input(run_dir / n);
  }
  const std::string table = render_table(reports);
  write_file_atomic(run_dir / artifacts::kReportText, table);
  write_file_atomic(run_dir / artifacts::kReportCsv, render_csv(reports));
  rec.output(artifacts::kReportText);
  rec.output(artifacts::kReportCsv);
  rec.finish();
  return table;
}

}  // namespace flex
