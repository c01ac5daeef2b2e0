#include "flex/tasks.hpp"

#include <algorithm>
#include <charconv>
#include <regex>
#include <set>

#include "flex/errors.hpp"
#include "flex/io.hpp"
#include "flex/log.hpp"

namespace flex {

namespace {

bool is_ascii_alpha(unsigned char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }
bool is_ascii_digit(unsigned char c) { return c >= '0' && c <= '9'; }
bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

char ascii_lower(char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c; }

std::string lower_copy(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), ascii_lower);
  return out;
}

struct TagSpan {
  std::size_t open;         // start of "<answer>"
  std::size_t content;      // first byte after "<answer>"
  std::size_t close;        // start of "</answer>"
  std::size_t end;          // first byte after "</answer>"
};

constexpr std::string_view kOpen = "<answer>";
constexpr std::string_view kClose = "</answer>";

std::optional<TagSpan> find_final_tag(std::string_view response) {
  const std::string lower = lower_copy(response);
  const auto close = lower.rfind(kClose);
  if (close == std::string::npos) return std::nullopt;
  const auto open = lower.rfind(kOpen, close);
  if (open == std::string::npos || open + kOpen.size() > close) return std::nullopt;
  return TagSpan{open, open + kOpen.size(), close, close + kClose.size()};
}

std::size_t parse_positive(const std::string& s, const char* what) {
  std::size_t v = 0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) throw PreconditionError(std::string(what) + " argument must be an integer: '" + s + "'");
  return v;
}

}  // namespace

std::string to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::yes_no: return "yes_no";
    case DatasetKind::numeric: return "numeric";
    case DatasetKind::constraint: return "constraint";
    case DatasetKind::generic: return "generic";
  }
  return "generic";
}

std::string to_string(Split split) { return split == Split::train ? "train" : "test"; }

std::string to_string(ConstraintKind kind) {
  switch (kind) {
    case ConstraintKind::all_caps: return "all_caps";
    case ConstraintKind::language_tag: return "language_tag";
    case ConstraintKind::word_limit: return "word_limit";
    case ConstraintKind::no_digits: return "no_digits";
    case ConstraintKind::json_only: return "json_only";
    case ConstraintKind::custom_regex: return "custom_regex";
  }
  return "all_caps";
}

std::string to_string(FailureReason reason) {
  switch (reason) {
    case FailureReason::no_tag: return "no_tag";
    case FailureReason::mismatch: return "mismatch";
    case FailureReason::constraint_violated: return "constraint_violated";
  }
  return "mismatch";
}

DatasetKind parse_dataset_kind(std::string_view s) {
  if (s == "yes_no") return DatasetKind::yes_no;
  if (s == "numeric") return DatasetKind::numeric;
  if (s == "constraint") return DatasetKind::constraint;
  if (s == "generic") return DatasetKind::generic;
  throw ConfigError("unknown dataset kind '" + std::string(s) + "'");
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw SchemaError("unknown split '" + std::string(s) + "'");
}

ConstraintKind parse_constraint_kind(std::string_view s) {
  if (s == "all_caps") return ConstraintKind::all_caps;
  if (s == "language_tag") return ConstraintKind::language_tag;
  if (s == "word_limit") return ConstraintKind::word_limit;
  if (s == "no_digits") return ConstraintKind::no_digits;
  if (s == "json_only") return ConstraintKind::json_only;
  if (s == "custom_regex") return ConstraintKind::custom_regex;
  throw UnsupportedConstraint("unsupported constraint kind '" + std::string(s) + "'");
}

FailureReason parse_failure_reason(std::string_view s) {
  if (s == "no_tag") return FailureReason::no_tag;
  if (s == "mismatch") return FailureReason::mismatch;
  if (s == "constraint_violated") return FailureReason::constraint_violated;
  throw SchemaError("unknown failure reason '" + std::string(s) + "'");
}

void TaskInstance::validate() const {
  if (id.empty()) throw SchemaError("instance id must be non-empty");
  if (constraint.has_value() != (kind == DatasetKind::constraint))
    throw SchemaError("instance " + id + ": constraint must be present iff dataset is 'constraint'");
  if ((kind == DatasetKind::yes_no || kind == DatasetKind::numeric) && gold.empty())
    throw SchemaError("instance " + id + ": gold must be non-empty");
}

void to_json(nlohmann::json& j, const TaskInstance& t) {
  j = {{"id", t.id}, {"input", t.input}, {"gold", t.gold}, {"dataset", to_string(t.kind)}, {"split", to_string(t.split)}};
  if (t.constraint) {
    j["constraint"] = {{"kind", to_string(t.constraint->kind)}};
    if (t.constraint->argument) j["constraint"]["argument"] = *t.constraint->argument;
  }
}

void from_json(const nlohmann::json& j, TaskInstance& t) {
  t = TaskInstance{};
  t.id = j.at("id").get<std::string>();
  t.input = j.at("input").get<std::string>();
  t.gold = j.value("gold", std::string{});
  t.kind = parse_dataset_kind(j.at("dataset").get<std::string>());
  t.split = parse_split(j.at("split").get<std::string>());
  if (j.contains("constraint") && !j["constraint"].is_null()) {
    const auto& c = j["constraint"];
    ConstraintSpec spec;
    const std::string kind = c.at("kind").get<std::string>();
    try {
      spec.kind = parse_constraint_kind(kind);
    } catch (const UnsupportedConstraint&) {
      throw SchemaError("unknown constraint kind '" + kind + "'");
    }
    if (c.contains("argument") && !c["argument"].is_null()) spec.argument = c["argument"].get<std::string>();
    t.constraint = spec;
  }
}

std::string system_template(DatasetKind kind) {
  if (kind == DatasetKind::yes_no)
    return "You are a helpful assistant. Show your reasoning step by step. "
           "At the end, output <answer>yes</answer> or <answer>no</answer>.";
  return "You are a helpful assistant. Show your reasoning step by step. "
         "At the end, output the final answer in <answer> tags.";
}

std::string output_format(DatasetKind kind) {
  if (kind == DatasetKind::yes_no) return "At the end, output <answer>yes</answer> or <answer>no</answer>.";
  return "At the end, output the final answer in <answer> tags.";
}

std::string append_summary(std::string system, std::optional<std::string_view> summary) {
  if (summary && !summary->empty()) {
    system.push_back(' ');
    system.append(*summary);
  }
  return system;
}

PromptBundle build_prompt(const TaskInstance& instance, std::optional<std::string_view> summary) {
  return {append_summary(system_template(instance.kind), summary), instance.input};
}

std::optional<std::string> extract_answer(std::string_view response) {
  const auto tag = find_final_tag(response);
  if (!tag) return std::nullopt;
  return std::string(response.substr(tag->content, tag->close - tag->content));
}

std::string strip_final_answer(std::string_view response) {
  const auto tag = find_final_tag(response);
  if (!tag) return std::string(response);
  std::string out(response.substr(0, tag->open));
  out.append(response.substr(tag->end));
  return out;
}

std::string normalize_answer(std::string_view raw) {
  std::string out;
  bool pending_space = false;
  for (unsigned char c : raw) {
    if (is_ascii_alpha(c) || is_ascii_digit(c)) {
      if (pending_space && !out.empty()) out.push_back(' ');
      pending_space = false;
      out.push_back(ascii_lower(static_cast<char>(c)));
    } else if (is_space(c)) {
      pending_space = true;
    }
  }
  return out;
}

bool constraint_supported(const ConstraintSpec& spec) {
  switch (spec.kind) {
    case ConstraintKind::language_tag:
      return spec.argument && lower_copy(*spec.argument) == "en";
    case ConstraintKind::word_limit:
    case ConstraintKind::custom_regex:
      return spec.argument.has_value();
    default:
      return true;
  }
}

bool check_constraint(std::string_view reasoning, const ConstraintSpec& spec) {
  if (!constraint_supported(spec))
    throw UnsupportedConstraint("constraint " + to_string(spec.kind) +
                                (spec.argument ? " (" + *spec.argument + ")" : std::string()) + " is not supported");
  switch (spec.kind) {
    case ConstraintKind::all_caps:
      return std::none_of(reasoning.begin(), reasoning.end(), [](char c) { return c >= 'a' && c <= 'z'; });
    case ConstraintKind::language_tag:
      // English: no non-ASCII letters.
      return std::none_of(reasoning.begin(), reasoning.end(), [](char c) { return static_cast<unsigned char>(c) >= 0x80; });
    case ConstraintKind::word_limit: {
      const std::size_t limit = parse_positive(*spec.argument, "word_limit");
      std::size_t words = 0;
      bool in_word = false;
      for (unsigned char c : reasoning) {
        if (is_space(c)) {
          in_word = false;
        } else if (!in_word) {
          in_word = true;
          ++words;
        }
      }
      return words <= limit;
    }
    case ConstraintKind::no_digits:
      return std::none_of(reasoning.begin(), reasoning.end(), [](char c) { return c >= '0' && c <= '9'; });
    case ConstraintKind::json_only:
      return nlohmann::json::accept(reasoning);
    case ConstraintKind::custom_regex:
      try {
        return std::regex_search(reasoning.begin(), reasoning.end(), std::regex(*spec.argument));
      } catch (const std::regex_error& e) {
        throw PreconditionError("invalid custom_regex '" + *spec.argument + "': " + e.what());
      }
  }
  return false;
}

Verdict score(std::string_view response, const TaskInstance& instance) {
  Verdict v;
  const auto answer = extract_answer(response);
  if (!answer) {
    v.failure_reason = FailureReason::no_tag;
    return v;
  }
  v.extracted = normalize_answer(*answer);
  switch (instance.kind) {
    case DatasetKind::yes_no:
    case DatasetKind::numeric:
    case DatasetKind::generic:
      v.correct = *v.extracted == normalize_answer(instance.gold);
      if (!v.correct) v.failure_reason = FailureReason::mismatch;
      return v;
    case DatasetKind::constraint: {
      if (!instance.constraint) throw ConfigError("instance " + instance.id + " has no constraint");
      if (!check_constraint(strip_final_answer(response), *instance.constraint)) {
        v.failure_reason = FailureReason::constraint_violated;
        return v;
      }
      if (!instance.gold.empty() && *v.extracted != normalize_answer(instance.gold)) {
        v.failure_reason = FailureReason::mismatch;
        return v;
      }
      v.correct = true;
      return v;
    }
  }
  throw ConfigError("unknown dataset kind");
}

std::vector<TaskInstance> load_dataset(const std::filesystem::path& path, std::optional<DatasetKind> kind) {
  std::vector<TaskInstance> out;
  std::set<std::string> ids;
  for_each_jsonl(path, [&](const json& obj, std::size_t line) {
    const auto where = path.string() + ":" + std::to_string(line) + ": ";
    if (!obj.is_object()) throw SchemaError(where + "expected a JSON object");
    static const std::set<std::string> kKeys = {"id", "input", "gold", "dataset", "constraint", "split"};
    for (const auto& [key, _] : obj.items())
      if (!kKeys.count(key)) throw SchemaError(where + "unknown field '" + key + "'");
    json row = obj;
    if (!row.contains("dataset")) {
      if (!kind) throw SchemaError(where + "missing 'dataset' field");
      row["dataset"] = to_string(*kind);
    }
    TaskInstance t;
    try {
      t = row.get<TaskInstance>();
      t.validate();
    } catch (const json::exception& e) {
      throw SchemaError(where + e.what());
    } catch (const Error& e) {
      throw SchemaError(where + e.what());
    }
    if (kind && t.kind != *kind)
      throw SchemaError(where + "dataset '" + to_string(t.kind) + "' does not match expected '" + to_string(*kind) + "'");
    if (!ids.insert(t.id).second) throw SchemaError(where + "duplicate id '" + t.id + "'");
    out.push_back(std::move(t));
  });
  if (out.empty()) log::warn("dataset " + path.string() + " is empty");
  return out;
}

std::size_t count_tokens(std::string_view text) {
  std::size_t tokens = 0;
  enum class Run { none, letters, digits } run = Run::none;
  for (unsigned char c : text) {
    if (is_space(c)) {
      run = Run::none;
    } else if (is_ascii_alpha(c) || c >= 0x80) {
      if (run != Run::letters) ++tokens;
      run = Run::letters;
    } else if (is_ascii_digit(c)) {
      if (run != Run::digits) ++tokens;
      run = Run::digits;
    } else {
      ++tokens;
      run = Run::none;
    }
  }
  return tokens;
}

}  // namespace flex
