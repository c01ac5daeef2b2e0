#include "fixture.hpp"

#include <cstdio>

#include "flex/io.hpp"

namespace fixture {

using nlohmann::json;

namespace {

std::string id(char prefix, int i, int width) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%c%0*d", prefix, width, i);
  return buf;
}

flex::MockRule rule(std::vector<std::string> user, std::vector<std::string> system, std::vector<std::string> samples) {
  flex::MockRule r;
  r.user_contains = std::move(user);
  r.system_contains = std::move(system);
  r.samples = std::move(samples);
  return r;
}

// Train categories: i % 5 == 0 is a mode error, others alternate ok-yes/ok-no.
std::string train_tag(int i) {
  if (i % 5 == 0) return "MODE-" + kModes[static_cast<std::size_t>((i / 5) % 4)];
  return (i % 2) ? "[ok-yes]" : "[ok-no]";
}

// Test categories: 0-39 modes, 40-312 hard (40-59 fixable by critique),
// 313-999 ok.
std::string test_tag(int i) {
  if (i < 40) return "MODE-" + kModes[static_cast<std::size_t>(i % 4)];
  if (i < 60) return "[hard-sr]";
  if (i < 313) return "[hard]";
  return (i % 2) ? "[ok-yes]" : "[ok-no]";
}

std::string gold_for(const std::string& tag) { return tag == "[ok-no]" ? "no" : "yes"; }

const std::vector<std::vector<std::string>> kCandidateTexts = {
    // Bullet Rules
    {"- Re-read the question before answering.", "- Apply FIX-A when chains are involved.",
     "- Apply FIX-B and keep answers short.", "- Check every step twice.", "- FIX-C matters for observed variables.",
     "- Answer with yes or no only.", "- Use FIX-A and FIX-B together.", "- Think about interventions carefully.",
     "- FIX-D for counterfactual prompts.", "- Keep reasoning brief."},
    // LLM Commands
    {"ALWAYS verify the final answer.", "Use FIX-C. Never skip steps.", "Obey the output format exactly.",
     "Apply FIX-A, FIX-C before concluding.", "Do not speculate.", "FIX-B first, then answer.",
     "Never output commentary.", "Apply FIX-D strictly.", "Compare both branches.", "Output one tag only."},
    // Crisp Lessons
    {"Lesson: slow down on multi-step chains.", "Lesson: FIX-B and FIX-D reduce mistakes.",
     "Lesson: separate observation from intervention.",
     "Always apply FIX-A, FIX-B, FIX-C and FIX-D before answering.", "Lesson: FIX-A helps most often.",
     "Lesson: restate the question.", "Lesson: FIX-A, FIX-B and FIX-C cover most cases.",
     "Lesson: be explicit about assumptions.", "Lesson: FIX-C then verify.", "Lesson: answer decisively."},
    // Single Directive
    {"Directive: follow FIX-D.", "Directive: reason carefully.", "Directive: FIX-B, FIX-C, FIX-D.",
     "Directive: match the format.", "Directive: FIX-A only.", "Directive: never hedge.",
     "Directive: check polarity.", "Directive: FIX-C.", "Directive: count steps.", "Directive: answer last."},
    // LLM Paragraph
    {"Read carefully and answer in tags.", "Apply FIX-B whenever a chain is blocked.",
     "Keep outputs deterministic and short.", "FIX-A and FIX-D are the key corrections.",
     "Prefer explicit reasoning over guesses.", "FIX-C is essential for observed nodes.",
     "Summarize the chain before answering.", "Follow every instruction literally.",
     "Use FIX-B and FIX-C in tandem.", "Verify the answer tag is present."},
};

const std::vector<std::string> kPromptKeys = {"extract the most important ideas", "infer general behavioral rules",
                                              "crisp and actionable lessons", "single behavioral directive",
                                              "analyzing multiple (prompt, response, feedback)"};

}  // namespace

bool flips_with(const std::string& mode, const std::string& summary) {
  return summary.find("FIX-" + mode) != std::string::npos;
}

flex::MockScript script() {
  flex::MockScript s;
  s.embed_noise = 1.0;
  for (const auto& m : kModes) s.anchors.push_back({"MODE-" + m, 40.0});
  for (const auto& m : kModes) s.anchors.push_back({"FIX-" + m, 30.0});

  // Self-refine critique and revision.
  s.rules.push_back(rule({"[hard-sr]"}, {"careful self-reviewer"}, {"- The final answer should be yes."}));
  s.rules.push_back(rule({}, {"careful self-reviewer"}, {"NONE"}));
  s.rules.push_back(rule({}, {"revising your own answer"}, {"Revised after review. <answer>yes</answer>"}));

  // Summarizer prompts.
  for (std::size_t p = 0; p < kPromptKeys.size(); ++p) s.rules.push_back(rule({kPromptKeys[p]}, {}, kCandidateTexts[p]));

  // Summary-sensitive mode instances at test time.
  for (const auto& m : kModes)
    s.rules.push_back(rule({"MODE-" + m}, {"FIX-" + m}, {"With FIX-" + m + " in mind the chain holds. <answer>yes</answer>"}));

  // Verification: an explanation naming the right fix flips the answer.
  for (const auto& m : kModes)
    s.rules.push_back(rule({"MODE-" + m, "FIX-" + m}, {}, {"Re-checked using the explanation. <answer>yes</answer>"}));

  // Base behaviour by category.
  s.rules.push_back(rule({"[ok-yes]"}, {}, {"Following the chain step by step. <answer>yes</answer>"}));
  s.rules.push_back(rule({"[ok-no]"}, {}, {"The chain is blocked. <answer>no</answer>"}));
  s.rules.push_back(rule({"[hard-sr]"}, {}, {"I am not sure this holds. <answer>no</answer>"}));
  s.rules.push_back(rule({"[hard]"}, {},
                         {"It seems blocked. <answer>no</answer>", "Maybe it holds. <answer>yes</answer>",
                          "Probably blocked. <answer>no</answer>"}));
  for (const auto& m : kModes)
    s.rules.push_back(rule({"MODE-" + m}, {}, {"Because of MODE-" + m + " the effect cannot occur. <answer>no</answer>"}));
  return s;
}

Expected expected() {
  Expected e;
  for (int i = 0; i < 40; ++i) e.sensitive_ids.insert(id('Q', i, 4));
  return e;
}

Paths write(const std::filesystem::path& dir, int parallelism) {
  std::filesystem::create_directories(dir);
  Paths p{dir, dir / "train.jsonl", dir / "test.jsonl", dir / "mock.json", dir / "drafts.jsonl", dir / "config.json"};

  std::vector<json> train, test, drafts;
  for (int i = 0; i < 200; ++i) {
    const auto tag = train_tag(i);
    train.push_back({{"id", id('T', i, 3)},
                     {"input", "Case " + id('T', i, 3) + ": does the effect occur in this chain? " + tag},
                     {"gold", gold_for(tag)},
                     {"dataset", "yes_no"},
                     {"split", "train"}});
    if (tag.rfind("MODE-", 0) == 0) {
      const std::string m = tag.substr(5);
      // Mode A cases need a second draft; the others pass on the first.
      if (m == "A") drafts.push_back({{"case_id", id('T', i, 3)}, {"explanation", "Be more careful next time."}});
      drafts.push_back({{"case_id", id('T', i, 3)},
                        {"explanation", "FIX-" + m + ": the planted trap does not block the effect here."}});
    }
  }
  for (int i = 0; i < 1000; ++i) {
    const auto tag = test_tag(i);
    test.push_back({{"id", id('Q', i, 4)},
                    {"input", "Case " + id('Q', i, 4) + ": does the effect occur in this chain? " + tag},
                    {"gold", gold_for(tag)},
                    {"dataset", "yes_no"},
                    {"split", "test"}});
  }
  flex::write_file_atomic(p.train, flex::to_jsonl(train));
  flex::write_file_atomic(p.test, flex::to_jsonl(test));
  flex::write_file_atomic(p.drafts, flex::to_jsonl(drafts));
  flex::write_file_atomic(p.script, script().to_json().dump(2));
  const json config = {
      {"backends", {{"model", {{"kind", "mock"}, {"model_id", "mock-frozen"}, {"capabilities", {"generate", "embed"}},
                               {"mock_script", "mock.json"}, {"embed_dim", 64}}}}},
      {"datasets", {{"train", "train.jsonl"}, {"test", "test.jsonl"}, {"kind", "yes_no"}}},
      {"evaluation", {{"parallelism", parallelism}}}};
  flex::write_file_atomic(p.config, config.dump(2));
  return p;
}

}  // namespace fixture
