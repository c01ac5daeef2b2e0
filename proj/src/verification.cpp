#include "flex/verification.hpp"

#include <algorithm>

#include "flex/errors.hpp"
#include "flex/io.hpp"
#include "flex/log.hpp"

namespace flex {

using nlohmann::json;

std::string to_string(QueueStatus s) {
  switch (s) {
    case QueueStatus::pending: return "pending";
    case QueueStatus::in_progress: return "in_progress";
    case QueueStatus::verified: return "verified";
    case QueueStatus::exhausted: return "exhausted";
  }
  return "pending";
}

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::human: return "human";
    case Provenance::auto_unverified: return "auto_unverified";
    case Provenance::solution_only: return "solution_only";
  }
  return "human";
}

QueueStatus parse_queue_status(std::string_view s) {
  if (s == "pending") return QueueStatus::pending;
  if (s == "in_progress") return QueueStatus::in_progress;
  if (s == "verified") return QueueStatus::verified;
  if (s == "exhausted") return QueueStatus::exhausted;
  throw SchemaError("unknown queue status '" + std::string(s) + "'");
}

Provenance parse_provenance(std::string_view s) {
  if (s == "human") return Provenance::human;
  if (s == "auto_unverified") return Provenance::auto_unverified;
  if (s == "solution_only") return Provenance::solution_only;
  throw SchemaError("unknown provenance '" + std::string(s) + "'");
}

void to_json(json& j, const Verdict& v) {
  j = {{"correct", v.correct ? 1 : 0},
       {"extracted", v.extracted ? json(*v.extracted) : json(nullptr)},
       {"failure_reason", v.failure_reason ? json(to_string(*v.failure_reason)) : json(nullptr)}};
}

void from_json(const json& j, Verdict& v) {
  v = Verdict{};
  v.correct = j.at("correct").get<int>() != 0;
  if (j.contains("extracted") && !j["extracted"].is_null()) v.extracted = j["extracted"].get<std::string>();
  if (j.contains("failure_reason") && !j["failure_reason"].is_null())
    v.failure_reason = parse_failure_reason(j["failure_reason"].get<std::string>());
}

void to_json(json& j, const AnnotationQueueItem& q) {
  j = {{"cluster_index", q.cluster_index}, {"size", q.cluster_size},   {"weight", q.weight},
       {"candidates", q.candidates},       {"active_index", q.active_index}, {"status", to_string(q.status)},
       {"failures_on_active", q.failures_on_active}};
}

void from_json(const json& j, AnnotationQueueItem& q) {
  q.cluster_index = j.at("cluster_index").get<int>();
  q.cluster_size = j.at("size").get<std::size_t>();
  q.weight = j.at("weight").get<double>();
  q.candidates = j.at("candidates").get<std::vector<std::string>>();
  q.active_index = j.at("active_index").get<std::size_t>();
  q.status = parse_queue_status(j.at("status").get<std::string>());
  q.failures_on_active = j.at("failures_on_active").get<int>();
}

void to_json(json& j, const VerificationAttempt& a) {
  j = {{"case_id", a.case_id},   {"explanation", a.explanation}, {"model_response", a.model_response},
       {"verdict", a.verdict},   {"attempt_number", a.attempt_number}, {"timestamp", a.timestamp}};
}

void from_json(const json& j, VerificationAttempt& a) {
  a.case_id = j.at("case_id").get<std::string>();
  a.explanation = j.at("explanation").get<std::string>();
  a.model_response = j.at("model_response").get<std::string>();
  a.verdict = j.at("verdict").get<Verdict>();
  a.attempt_number = j.at("attempt_number").get<int>();
  a.timestamp = j.at("timestamp").get<std::string>();
}

void to_json(json& j, const ErroredAttempt& a) {
  j = {{"case_id", a.case_id}, {"explanation", a.explanation}, {"error", a.error}, {"timestamp", a.timestamp}};
}

void from_json(const json& j, ErroredAttempt& a) {
  a.case_id = j.at("case_id").get<std::string>();
  a.explanation = j.at("explanation").get<std::string>();
  a.error = j.at("error").get<std::string>();
  a.timestamp = j.at("timestamp").get<std::string>();
}

void to_json(json& j, const VerifiedExplanation& v) {
  j = {{"case_id", v.case_id}, {"x", v.x}, {"r", v.r}, {"y", v.y}, {"f", v.f},
       {"cluster_index", v.cluster_index}, {"provenance", to_string(v.provenance)}, {"attempts", v.attempts}};
}

void from_json(const json& j, VerifiedExplanation& v) {
  v.case_id = j.at("case_id").get<std::string>();
  v.x = j.at("x").get<std::string>();
  v.r = j.at("r").get<std::string>();
  v.y = j.at("y").get<std::string>();
  v.f = j.at("f").get<std::string>();
  v.cluster_index = j.at("cluster_index").get<int>();
  v.provenance = parse_provenance(j.at("provenance").get<std::string>());
  v.attempts = j.value("attempts", json::array()).get<std::vector<VerificationAttempt>>();
}

std::vector<VerifiedExplanation> load_explanations(const std::filesystem::path& path) {
  std::vector<VerifiedExplanation> out;
  for_each_jsonl(path, [&](const json& obj, std::size_t line) {
    try {
      out.push_back(obj.get<VerifiedExplanation>());
    } catch (const json::exception& e) {
      throw SchemaError(path.string() + ":" + std::to_string(line) + ": " + e.what());
    }
  });
  return out;
}

std::string explanations_jsonl(std::span<const VerifiedExplanation> explanations) {
  std::vector<json> rows(explanations.begin(), explanations.end());
  return to_jsonl(rows);
}

PromptBundle verification_prompt(const ErrorCase& error_case, std::string_view explanation) {
  return {system_template(error_case.instance.kind), join_segments({error_case.x(), error_case.r(), explanation})};
}

VerificationAttempt attempt_verification(const ErrorCase& error_case, std::string_view explanation, Gateway& model,
                                         int attempt_number) {
  if (explanation.empty()) throw PreconditionError("explanation must be non-empty");
  const auto prompt = verification_prompt(error_case, explanation);
  VerificationAttempt a;
  a.case_id = error_case.id();
  a.explanation = std::string(explanation);
  a.model_response = model.generate(greedy_request(prompt.system, prompt.user)).samples.front();
  a.verdict = score(a.model_response, error_case.instance);
  a.attempt_number = attempt_number;
  a.timestamp = utc_timestamp();
  return a;
}

AnnotationQueueItem advance_on_failure(AnnotationQueueItem item) {
  item.failures_on_active = 0;
  if (item.active_index + 1 < item.candidates.size()) {
    ++item.active_index;
    item.status = QueueStatus::in_progress;
  } else {
    item.status = QueueStatus::exhausted;
  }
  return item;
}

std::string auto_explain_prompt(const ErrorCase& error_case) {
  return "A model answered the task below incorrectly.\n\nTASK:\n" + error_case.x() + "\n\nMODEL RESPONSE:\n" +
         error_case.r() + "\n\nCORRECT ANSWER:\n" + error_case.y() +
         "\n\nWrite a short explanation, addressed to the model, of the mistake it made and how to avoid it. "
         "Do not include <answer> tags.";
}

VerifiedExplanation auto_explain(const ErrorCase& error_case, int cluster_index, Gateway& summarizer) {
  auto req = greedy_request("You are an expert reviewer of model reasoning.", auto_explain_prompt(error_case));
  VerifiedExplanation v{error_case.id(), error_case.x(), error_case.r(), error_case.y(), "", cluster_index,
                        Provenance::auto_unverified, {}};
  v.f = summarizer.generate(req).samples.front();
  return v;
}

VerifiedExplanation solution_only(const ErrorCase& error_case, int cluster_index) {
  if (error_case.y().empty()) throw PreconditionError("case " + error_case.id() + " has no gold answer");
  return {error_case.id(), error_case.x(), error_case.r(), error_case.y(),
          "The correct answer is " + error_case.y() + ".", cluster_index, Provenance::solution_only, {}};
}

// ---------------------------------------------------------------------------
// AnnotationStore

AnnotationStore::AnnotationStore(std::vector<ErrorCase> cases, const ClusterSelection& selection, Gateway& model,
                                 AnnotationOptions options)
    : selection_(selection), model_(model), options_(std::move(options)) {
  if (options_.attempt_limit < 1) throw ConfigError("attempt_limit must be >= 1");
  for (auto& c : cases) {
    const std::string id = c.id();
    cases_.emplace(id, std::move(c));
  }
  for (const auto& cluster : selection_.clusters) {
    if (cluster.candidates.empty()) continue;
    AnnotationQueueItem item;
    item.cluster_index = cluster.index;
    item.cluster_size = cluster.size;
    item.weight = cluster.weight;
    item.candidates = cluster.candidates;
    for (const auto& id : cluster.candidates) {
      if (!cases_.count(id)) throw ArtifactError("cluster " + std::to_string(cluster.index) + " names unknown case " + id);
      case_cluster_[id] = cluster.index;
    }
    queue_.push_back(std::move(item));
    cluster_mutexes_.push_back(std::make_unique<std::mutex>());
  }
  if (!options_.state_dir.empty()) {
    const auto state = options_.state_dir / kStateFile;
    if (fs::exists(state)) load_state(state);
  }
}

void AnnotationStore::load_state(const std::filesystem::path& path) {
  const json state = json::parse(read_file(path));
  auto items = state.at("queue").get<std::vector<AnnotationQueueItem>>();
  if (items.size() != queue_.size()) throw ArtifactError("annotation state does not match the cluster selection");
  for (std::size_t i = 0; i < items.size(); ++i)
    if (items[i].cluster_index != queue_[i].cluster_index || items[i].candidates != queue_[i].candidates)
      throw ArtifactError("annotation state does not match the cluster selection");
  queue_ = std::move(items);
  attempts_ = state.at("attempts").get<std::map<std::string, std::vector<VerificationAttempt>>>();
  errored_ = state.at("errored").get<std::vector<ErroredAttempt>>();
  for (const auto& v : state.at("verified").get<std::vector<VerifiedExplanation>>()) verified_[v.cluster_index] = v;
}

void AnnotationStore::persist_locked() const {
  if (options_.state_dir.empty()) return;
  json verified = json::array();
  std::vector<VerifiedExplanation> ordered;
  for (const auto& [_, v] : verified_) {
    verified.push_back(v);
    ordered.push_back(v);
  }
  const json state = {{"queue", queue_}, {"attempts", attempts_}, {"errored", errored_}, {"verified", verified}};
  write_file_atomic(options_.state_dir / kStateFile, state.dump(2) + "\n");
  write_file_atomic(options_.state_dir / kExplanationsFile, explanations_jsonl(ordered));
}

std::size_t AnnotationStore::item_position(int cluster_index) const {
  for (std::size_t i = 0; i < queue_.size(); ++i)
    if (queue_[i].cluster_index == cluster_index) return i;
  throw NotFoundError("unknown cluster " + std::to_string(cluster_index));
}

std::vector<AnnotationQueueItem> AnnotationStore::queue() const {
  std::lock_guard lock(state_mutex_);
  return queue_;
}

CaseDetail AnnotationStore::case_detail(const std::string& case_id) const {
  std::lock_guard lock(state_mutex_);
  const auto it = cases_.find(case_id);
  if (it == cases_.end()) throw NotFoundError("unknown case " + case_id);
  CaseDetail d;
  d.error_case = it->second;
  const auto cl = case_cluster_.find(case_id);
  d.cluster_index = cl == case_cluster_.end() ? -1 : cl->second;
  if (const auto a = attempts_.find(case_id); a != attempts_.end()) d.attempts = a->second;
  for (const auto& e : errored_)
    if (e.case_id == case_id) d.errored.push_back(e);
  return d;
}

VerificationAttempt AnnotationStore::submit(const std::string& case_id, const std::string& explanation) {
  if (explanation.empty()) throw PreconditionError("explanation must be non-empty");
  const auto cl = case_cluster_.find(case_id);
  if (cl == case_cluster_.end()) {
    if (cases_.count(case_id)) throw ConflictError("case " + case_id + " is not queued for annotation");
    throw NotFoundError("unknown case " + case_id);
  }
  const std::size_t pos = item_position(cl->second);
  std::lock_guard cluster_lock(*cluster_mutexes_[pos]);

  int number = 0;
  {
    std::lock_guard lock(state_mutex_);
    auto& item = queue_[pos];
    if (item.status == QueueStatus::verified || item.status == QueueStatus::exhausted)
      throw ConflictError("cluster " + std::to_string(item.cluster_index) + " is already " + to_string(item.status));
    if (item.active_case() != case_id)
      throw ConflictError("case " + case_id + " is not the active candidate of cluster " +
                          std::to_string(item.cluster_index));
    number = static_cast<int>(attempts_[case_id].size()) + 1;
  }

  VerificationAttempt attempt;
  try {
    attempt = attempt_verification(cases_.at(case_id), explanation, model_, number);
  } catch (const Error& e) {
    std::lock_guard lock(state_mutex_);
    errored_.push_back({case_id, explanation, e.what(), utc_timestamp()});
    persist_locked();
    throw;
  }

  std::lock_guard lock(state_mutex_);
  auto& item = queue_[pos];
  if (item.status == QueueStatus::pending) item.status = QueueStatus::in_progress;
  auto& log = attempts_[case_id];
  const bool had_pass =
      std::any_of(log.begin(), log.end(), [](const VerificationAttempt& a) { return a.verdict.correct; });
  log.push_back(attempt);
  if (!attempt.verdict.correct && !had_pass) {
    ++item.failures_on_active;
    if (item.failures_on_active >= options_.attempt_limit) {
      item = advance_on_failure(item);
      if (item.status == QueueStatus::exhausted)
        log::warn("cluster " + std::to_string(item.cluster_index) + " exhausted all candidates; it is dropped");
    }
  }
  persist_locked();
  return attempt;
}

VerifiedExplanation AnnotationStore::finalize(int cluster_index) {
  const std::size_t pos = item_position(cluster_index);
  std::unique_lock cluster_lock(*cluster_mutexes_[pos], std::try_to_lock);
  if (!cluster_lock.owns_lock())
    throw ConflictError("cluster " + std::to_string(cluster_index) + " is being modified concurrently");
  std::lock_guard lock(state_mutex_);
  auto& item = queue_[pos];
  if (item.status == QueueStatus::verified || item.status == QueueStatus::exhausted)
    throw ConflictError("cluster " + std::to_string(cluster_index) + " is already " + to_string(item.status));
  const std::string& case_id = item.active_case();
  const auto& log = attempts_[case_id];
  const auto pass = std::find_if(log.rbegin(), log.rend(), [](const VerificationAttempt& a) { return a.verdict.correct; });
  if (pass == log.rend())
    throw PreconditionError("case " + case_id + " has no passing attempt to finalize");
  const auto& c = cases_.at(case_id);
  VerifiedExplanation v{case_id, c.x(), c.r(), c.y(), pass->explanation, cluster_index, Provenance::human, log};
  verified_[cluster_index] = v;
  item.status = QueueStatus::verified;
  persist_locked();
  return v;
}

AnnotationQueueItem AnnotationStore::abandon_active(int cluster_index) {
  const std::size_t pos = item_position(cluster_index);
  std::lock_guard cluster_lock(*cluster_mutexes_[pos]);
  std::lock_guard lock(state_mutex_);
  auto& item = queue_[pos];
  if (item.status == QueueStatus::verified || item.status == QueueStatus::exhausted)
    throw ConflictError("cluster " + std::to_string(cluster_index) + " is already " + to_string(item.status));
  item.status = QueueStatus::in_progress;
  item = advance_on_failure(item);
  if (item.status == QueueStatus::exhausted)
    log::warn("cluster " + std::to_string(cluster_index) + " exhausted all candidates; it is dropped");
  persist_locked();
  return item;
}

std::vector<VerifiedExplanation> AnnotationStore::explanations() const {
  std::lock_guard lock(state_mutex_);
  std::vector<VerifiedExplanation> out;
  for (const auto& [_, v] : verified_) out.push_back(v);
  return out;
}

BatchOutcome verify_batch(AnnotationStore& store, const std::map<std::string, std::vector<std::string>>& drafts) {
  for (const auto& initial : store.queue()) {
    const int cluster = initial.cluster_index;
    for (;;) {
      AnnotationQueueItem item;
      for (const auto& q : store.queue())
        if (q.cluster_index == cluster) item = q;
      if (item.status == QueueStatus::verified || item.status == QueueStatus::exhausted) break;
      const std::string case_id = item.active_case();
      const auto it = drafts.find(case_id);
      bool moved_on = false;
      if (it != drafts.end()) {
        for (const auto& draft : it->second) {
          const auto attempt = store.submit(case_id, draft);
          if (attempt.verdict.correct) {
            store.finalize(cluster);
            moved_on = true;
            break;
          }
          const auto after = store.queue();
          const auto& now = *std::find_if(after.begin(), after.end(),
                                          [&](const AnnotationQueueItem& q) { return q.cluster_index == cluster; });
          if (now.status == QueueStatus::exhausted || now.active_case() != case_id) {
            moved_on = true;
            break;
          }
        }
      }
      if (!moved_on) store.abandon_active(cluster);
    }
  }
  BatchOutcome out;
  out.verified = store.explanations();
  for (const auto& q : store.queue())
    if (q.status == QueueStatus::exhausted) out.exhausted_clusters.push_back(q.cluster_index);
  return out;
}

std::map<std::string, std::vector<std::string>> load_drafts(const std::filesystem::path& path) {
  std::map<std::string, std::vector<std::string>> out;
  for_each_jsonl(path, [&](const json& obj, std::size_t line) {
    if (!obj.contains("case_id") || !obj.contains("explanation"))
      throw SchemaError(path.string() + ":" + std::to_string(line) + ": drafts need case_id and explanation");
    out[obj["case_id"].get<std::string>()].push_back(obj["explanation"].get<std::string>());
  });
  return out;
}

}  // namespace flex
