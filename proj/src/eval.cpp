#include "flex/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>

#include "flex/errors.hpp"
#include "flex/hashing.hpp"
#include "flex/io.hpp"
#include "flex/log.hpp"
#include "flex/parallel.hpp"

namespace flex {

using nlohmann::json;

std::string to_string(Method m) {
  switch (m) {
    case Method::cot: return "cot";
    case Method::flex: return "flex";
    case Method::self_refine: return "self_refine";
    case Method::rag: return "rag";
    case Method::self_consistency: return "self_consistency";
  }
  return "cot";
}

Method parse_method(std::string_view s) {
  if (s == "cot") return Method::cot;
  if (s == "flex") return Method::flex;
  if (s == "self_refine" || s == "sr") return Method::self_refine;
  if (s == "rag") return Method::rag;
  if (s == "self_consistency" || s == "sc") return Method::self_consistency;
  throw ConfigError("unknown method '" + std::string(s) + "'");
}

std::optional<std::string_view> EvalConfig::active_summary() const {
  if (method == Method::flex || flex_stacked) return std::string_view(*summary);
  return std::nullopt;
}

void EvalConfig::validate() const {
  if ((method == Method::flex || flex_stacked) && (!summary || summary->empty()))
    throw PreconditionError("flex evaluation needs a non-empty summary");
  if (sc_samples < 1) throw ConfigError("sc_samples must be >= 1");
  if (sc_samples > 1 && sc_temperature <= 0.0) throw ConfigError("sampling several responses needs temperature > 0");
  if (rag_k < 1) throw ConfigError("rag_k must be >= 1");
  if (max_new_tokens < 1) throw ConfigError("max_new_tokens must be >= 1");
}

std::string method_tag(const EvalConfig& config) {
  if (config.method == Method::flex || (config.method == Method::cot && config.flex_stacked)) return "flex";
  return to_string(config.method) + (config.flex_stacked ? "+flex" : "");
}

void to_json(json& j, const EvalRecord& r) {
  j = {{"instance_id", r.instance_id},
       {"method", r.method},
       {"response", r.response},
       {"correct", r.verdict.correct ? 1 : 0},
       {"extracted", r.verdict.extracted ? json(*r.verdict.extracted) : json(nullptr)}};
  if (r.verdict.failure_reason) j["failure_reason"] = to_string(*r.verdict.failure_reason);
  if (r.responses.size() > 1) j["responses"] = r.responses;
  if (r.neighbor) j["neighbor"] = *r.neighbor;
  if (r.votes) {
    json v = json::array();
    for (const auto& a : *r.votes) v.push_back(a ? json(*a) : json(nullptr));
    j["votes"] = v;
  }
  if (r.error) j["error"] = *r.error;
}

void from_json(const json& j, EvalRecord& r) {
  r = EvalRecord{};
  r.instance_id = j.at("instance_id").get<std::string>();
  r.method = j.at("method").get<std::string>();
  r.response = j.at("response").get<std::string>();
  r.verdict.correct = j.at("correct").get<int>() != 0;
  if (j.contains("extracted") && !j["extracted"].is_null()) r.verdict.extracted = j["extracted"].get<std::string>();
  if (j.contains("failure_reason")) r.verdict.failure_reason = parse_failure_reason(j["failure_reason"].get<std::string>());
  r.responses = j.contains("responses") ? j["responses"].get<std::vector<std::string>>()
                                        : std::vector<std::string>{r.response};
  if (j.contains("neighbor")) r.neighbor = j["neighbor"].get<std::string>();
  if (j.contains("votes")) {
    std::vector<std::optional<std::string>> votes;
    for (const auto& v : j["votes"]) votes.push_back(v.is_null() ? std::nullopt : std::optional(v.get<std::string>()));
    r.votes = std::move(votes);
  }
  if (j.contains("error")) r.error = j["error"].get<std::string>();
}

std::vector<EvalRecord> load_records(const std::filesystem::path& path) {
  std::vector<EvalRecord> out;
  for_each_jsonl(path, [&](const json& obj, std::size_t line) {
    try {
      out.push_back(obj.get<EvalRecord>());
    } catch (const json::exception& e) {
      throw SchemaError(path.string() + ":" + std::to_string(line) + ": " + e.what());
    }
  });
  return out;
}

std::string records_jsonl(std::span<const EvalRecord> records) {
  return to_jsonl(std::vector<json>(records.begin(), records.end()));
}

// ---------------------------------------------------------------------------
// retrieval

std::vector<double> l2_normalize(std::span<const double> v) {
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm == 0.0) throw PreconditionError("cannot normalize a zero vector");
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / norm;
  return out;
}

RagIndex build_rag_index(const TrainRun& train, Gateway& retriever, int parallelism) {
  std::vector<std::size_t> correct;
  for (std::size_t i = 0; i < train.instances.size(); ++i)
    if (train.verdicts[i].correct) correct.push_back(i);
  RagIndex index;
  index.entries.resize(correct.size());
  parallel_for(correct.size(), parallelism, [&](std::size_t c) {
    const std::size_t i = correct[c];
    const auto& t = train.instances[i];
    index.entries[c] = {t.id, t.input, train.responses[i], l2_normalize(retriever.embed_sequence(t.input).values)};
  });
  std::sort(index.entries.begin(), index.entries.end(),
            [](const RagEntry& a, const RagEntry& b) { return a.instance_id < b.instance_id; });
  if (index.entries.empty()) log::warn("no correct training responses; the retrieval index is empty");
  return index;
}

std::vector<std::size_t> retrieve(const RagIndex& index, std::span<const double> query, int k) {
  std::vector<std::pair<double, std::size_t>> scored;
  scored.reserve(index.entries.size());
  for (std::size_t i = 0; i < index.entries.size(); ++i) {
    const auto& e = index.entries[i].embedding;
    if (e.size() != query.size()) throw FatalError("retrieval embedding dimension mismatch");
    double dot = 0.0;
    for (std::size_t d = 0; d < e.size(); ++d) dot += e[d] * query[d];
    scored.emplace_back(dot, i);
  }
  // Entries are id-sorted, so the position breaks ties toward the smaller id.
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < scored.size() && i < static_cast<std::size_t>(k); ++i) out.push_back(scored[i].second);
  return out;
}

std::string rag_user_prompt(std::span<const RagEntry* const> neighbors, std::string_view task) {
  std::string out;
  for (const auto* n : neighbors) out += "Question:\n" + n->prompt_text + "\n\nSolution:\n" + n->solution + "\n\n";
  out += "Question:\n";
  out += task;
  out += "\n\nSolution:";
  return out;
}

// ---------------------------------------------------------------------------
// self-consistency

std::optional<Vote> majority_vote(std::span<const std::optional<std::string>> answers) {
  std::map<std::string, Vote> tally;
  for (std::size_t i = 0; i < answers.size(); ++i) {
    if (!answers[i]) continue;
    auto [it, inserted] = tally.try_emplace(*answers[i], Vote{*answers[i], i, 0});
    ++it->second.count;
  }
  std::optional<Vote> best;
  for (const auto& [_, v] : tally)
    if (!best || v.count > best->count || (v.count == best->count && v.sample < best->sample)) best = v;
  return best;
}

// ---------------------------------------------------------------------------
// self-refine

const char* const kChangesSystem =
    "You are a careful self-reviewer.\nOutput EXACTLY 'NONE' or a bullet list.\nNever include <answer> tags in this "
    "step.\nDo not rewrite the full answer.";
const char* const kChangesUser =
    "You are reviewing your own draft answer.\nYour task: identify only what must change to make the draft correct "
    "and compliant.\nIf nothing needs to change, output exactly:\nnone. Otherwise output a bullet list where each "
    "line starts with '- '.\nDo NOT rewrite the answer.\n\nREQUIRED OUTPUT FORMAT FOR THE FINAL ANSWER:\n{FORMAT}\n\n"
    "USER PROMPT:\n{TASK}\n\nDRAFT RESPONSE:\n{DRAFT}\n\nCHANGES:";
const char* const kReviseSystem =
    "You are revising your own answer.\nOutput ONLY the revised response.\nFollow the required output format exactly.";
const char* const kReviseUser =
    "Revise the draft by applying the REQUIRED CHANGES.\nOutput ONLY the revised response. No commentary.\nYou MUST "
    "follow the REQUIRED OUTPUT FORMAT exactly.\n\nREQUIRED OUTPUT FORMAT:\n{FORMAT}\n\nUSER PROMPT:\n{TASK}\n\n"
    "ORIGINAL DRAFT:\n{DRAFT}\n\nREQUIRED CHANGES:\n{CHANGES}\n\nREVISED RESPONSE:";

namespace {

// Single-pass placeholder substitution, so values containing "{...}" are
// never re-expanded.
std::string fill(std::string_view tmpl, const std::map<std::string, std::string_view>& values) {
  std::string out;
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      const auto close = tmpl.find('}', i);
      if (close != std::string_view::npos) {
        const auto it = values.find(std::string(tmpl.substr(i + 1, close - i - 1)));
        if (it != values.end()) {
          out.append(it->second);
          i = close + 1;
          continue;
        }
      }
    }
    out.push_back(tmpl[i++]);
  }
  return out;
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

GenerationRequest greedy(const EvalConfig& c, std::string system, std::string user) {
  auto req = greedy_request(std::move(system), std::move(user));
  req.max_new_tokens = c.max_new_tokens;
  return req;
}

EvalRecord make_record(const TaskInstance& t, const EvalConfig& c, std::string response) {
  EvalRecord r;
  r.instance_id = t.id;
  r.method = method_tag(c);
  r.verdict = score(response, t);
  r.response = std::move(response);
  return r;
}

}  // namespace

std::string changes_prompt(std::string_view format, std::string_view task, std::string_view draft) {
  return fill(kChangesUser, {{"FORMAT", format}, {"TASK", task}, {"DRAFT", draft}});
}

std::string revise_prompt(std::string_view format, std::string_view task, std::string_view draft,
                          std::string_view changes) {
  return fill(kReviseUser, {{"FORMAT", format}, {"TASK", task}, {"DRAFT", draft}, {"CHANGES", changes}});
}

bool is_no_change(std::string_view changes) {
  std::string t = trim(changes);
  for (auto& ch : t) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return t == "none" || t == "none.";
}

// ---------------------------------------------------------------------------
// runners

EvalRecord evaluate_cot(const TaskInstance& t, const EvalConfig& config, Gateway& model) {
  const auto prompt = build_prompt(t, config.active_summary());
  auto r = make_record(t, config, model.generate(greedy(config, prompt.system, prompt.user)).samples.front());
  r.responses = {r.response};
  return r;
}

EvalRecord evaluate_self_refine(const TaskInstance& t, const EvalConfig& config, Gateway& model) {
  const auto summary = config.active_summary();
  const auto prompt = build_prompt(t, summary);
  const std::string draft = model.generate(greedy(config, prompt.system, prompt.user)).samples.front();
  const std::string format = output_format(t.kind);
  std::vector<std::string> trace{draft};
  const std::string changes =
      model.generate(greedy(config, append_summary(kChangesSystem, summary), changes_prompt(format, t.input, draft)))
          .samples.front();
  trace.push_back(changes);
  std::string final_response = draft;
  if (!is_no_change(changes)) {
    const std::string revision =
        model
            .generate(greedy(config, append_summary(kReviseSystem, summary),
                             revise_prompt(format, t.input, draft, changes)))
            .samples.front();
    trace.push_back(revision);
    if (extract_answer(revision)) final_response = revision;
  }
  auto r = make_record(t, config, final_response);
  r.responses = std::move(trace);
  return r;
}

EvalRecord evaluate_rag(const TaskInstance& t, const EvalConfig& config, Gateway& model, const RagIndex& index,
                        Gateway& retriever) {
  if (index.entries.empty()) throw PreconditionError("retrieval index is empty");
  const auto query = l2_normalize(retriever.embed_sequence(t.input).values);
  const auto hits = retrieve(index, query, config.rag_k);
  std::vector<const RagEntry*> neighbors;
  for (auto h : hits) neighbors.push_back(&index.entries[h]);
  const auto base = build_prompt(t, config.active_summary());
  auto r = make_record(t, config,
                       model.generate(greedy(config, base.system, rag_user_prompt(neighbors, t.input))).samples.front());
  r.responses = {r.response};
  r.neighbor = index.entries[hits.front()].instance_id;
  return r;
}

EvalRecord evaluate_self_consistency(const TaskInstance& t, const EvalConfig& config, Gateway& model) {
  const auto prompt = build_prompt(t, config.active_summary());
  GenerationRequest req;
  req.system_prompt = prompt.system;
  req.user_prompt = prompt.user;
  req.temperature = config.sc_temperature;
  req.num_samples = config.sc_samples;
  req.max_new_tokens = config.max_new_tokens;
  req.seed = config.seed ^ digest64(t.id);
  const auto samples = model.generate(req).samples;
  std::vector<std::optional<std::string>> votes;
  for (const auto& s : samples) {
    const auto a = extract_answer(s);
    votes.push_back(a ? std::optional(normalize_answer(*a)) : std::nullopt);
  }
  const auto winner = majority_vote(votes);
  EvalRecord r = make_record(t, config, samples[winner ? winner->sample : 0]);
  r.responses = samples;
  r.votes = std::move(votes);
  return r;
}

RunResult run_method(std::span<const TaskInstance> test, const EvalConfig& config, Gateway& model,
                     const RagIndex* index, Gateway* retriever) {
  if (test.empty()) throw PreconditionError("test set is empty");
  config.validate();
  if (config.method == Method::rag) {
    if (!index || !retriever) throw PreconditionError("retrieval evaluation needs an index and a retriever backend");
    if (index->entries.empty()) throw PreconditionError("retrieval index is empty; no correct training responses");
  }
  std::vector<std::optional<EvalRecord>> slots(test.size());
  std::vector<std::optional<std::string>> skipped(test.size());
  std::vector<char> failed(test.size(), 0);
  parallel_for(test.size(), config.parallelism, [&](std::size_t i) {
    const auto& t = test[i];
    if (t.constraint && !constraint_supported(*t.constraint)) {
      skipped[i] = t.id + ": unsupported constraint " + to_string(t.constraint->kind);
      return;
    }
    try {
      switch (config.method) {
        case Method::cot:
        case Method::flex: slots[i] = evaluate_cot(t, config, model); break;
        case Method::self_refine: slots[i] = evaluate_self_refine(t, config, model); break;
        case Method::rag: slots[i] = evaluate_rag(t, config, model, *index, *retriever); break;
        case Method::self_consistency: slots[i] = evaluate_self_consistency(t, config, model); break;
      }
    } catch (const FatalError&) {
      throw;
    } catch (const Error& e) {
      EvalRecord r;
      r.instance_id = t.id;
      r.method = method_tag(config);
      r.verdict = {false, std::nullopt, std::nullopt};
      r.error = e.what();
      slots[i] = std::move(r);
      failed[i] = 1;
    }
  });
  RunResult out;
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (slots[i]) out.records.push_back(std::move(*slots[i]));
    if (failed[i]) out.failures.push_back(test[i].id);
    if (skipped[i]) out.skipped.push_back(*skipped[i]);
  }
  std::sort(out.records.begin(), out.records.end(),
            [](const EvalRecord& a, const EvalRecord& b) { return a.instance_id < b.instance_id; });
  for (std::size_t i = 1; i < out.records.size(); ++i)
    if (out.records[i].instance_id == out.records[i - 1].instance_id)
      throw SchemaError("duplicate test instance id " + out.records[i].instance_id);
  std::sort(out.failures.begin(), out.failures.end());
  std::sort(out.skipped.begin(), out.skipped.end());
  for (const auto& s : out.skipped) log::warn("skipped " + s);
  return out;
}

RunResult run_cot(std::span<const TaskInstance> test, EvalConfig config, Gateway& model) {
  config.method = Method::cot;
  config.flex_stacked = false;
  return run_method(test, config, model);
}

RunResult run_flex(std::span<const TaskInstance> test, EvalConfig config, std::string summary, Gateway& model) {
  config.method = Method::flex;
  config.flex_stacked = false;
  config.summary = std::move(summary);
  return run_method(test, config, model);
}

RunResult run_self_refine(std::span<const TaskInstance> test, EvalConfig config, Gateway& model) {
  config.method = Method::self_refine;
  return run_method(test, config, model);
}

RunResult run_rag(std::span<const TaskInstance> test, EvalConfig config, Gateway& model, const RagIndex& index,
                  Gateway& retriever) {
  config.method = Method::rag;
  return run_method(test, config, model, &index, &retriever);
}

RunResult run_self_consistency(std::span<const TaskInstance> test, EvalConfig config, Gateway& model) {
  config.method = Method::self_consistency;
  return run_method(test, config, model);
}

RunResult run_stacked(std::span<const TaskInstance> test, EvalConfig config, std::string summary, Gateway& model,
                      const RagIndex* index, Gateway* retriever) {
  config.flex_stacked = true;
  config.summary = std::move(summary);
  return run_method(test, config, model, index, retriever);
}

}  // namespace flex
