#pragma once

// Scripted end-to-end fixture on the mock backend.
//
// Train (200, yes/no): 40 errors in four planted modes (10 each, tokens
// MODE-A..MODE-D), the rest answered correctly. Test (1000): 687 answered
// correctly, 273 answered wrongly regardless of prompt (20 of them fixable by
// the self-refine critique), and 40 mode instances that flip to correct only
// when the system prompt carries the matching FIX-<mode> token.
//
// Summarizer: 5 prompts x 10 samples; exactly one candidate names all four
// FIX tokens and is the planted best.

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "flex/mock_backend.hpp"

namespace fixture {

inline const std::vector<std::string> kModes = {"A", "B", "C", "D"};

struct Paths {
  std::filesystem::path dir;
  std::filesystem::path train;
  std::filesystem::path test;
  std::filesystem::path script;
  std::filesystem::path drafts;
  std::filesystem::path config;
};

struct Expected {
  std::size_t train = 200;
  std::size_t errors = 40;
  int k_star = 4;
  std::size_t test = 1000;
  std::size_t cot_correct = 687;
  std::size_t flex_sensitive = 40;
  std::size_t sr_fixable = 20;
  int planted_index = 23;  // prompt 2, sample 3
  std::string planted_summary = "Always apply FIX-A, FIX-B, FIX-C and FIX-D before answering.";
  std::size_t planted_tokens = 20;
  std::set<std::string> sensitive_ids;
};

flex::MockScript script();
Expected expected();

// Writes datasets, mock script, drafts and config under `dir`.
Paths write(const std::filesystem::path& dir, int parallelism = 4);

// The answer a mode instance gets with a given summary in the system prompt.
bool flips_with(const std::string& mode, const std::string& summary);

}  // namespace fixture
