#pragma once

// Deterministic offline backend. Generation is driven by an ordered rule list
// (first match wins); unmatched requests get a digest-derived placeholder.
// Embeddings are a digest-seeded noise vector plus the anchor vectors of every
// anchor token the text contains, which lets fixtures plant cluster geometry.

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "flex/gateway.hpp"

namespace flex {

struct MockRule {
  std::optional<std::string> model;
  std::vector<std::string> user_contains;
  std::vector<std::string> system_contains;
  std::vector<std::string> user_excludes;
  std::vector<std::string> system_excludes;
  // Sample i of a request receives samples[i % samples.size()].
  std::vector<std::string> samples;
  // The first `fail_times` matching calls raise a TransportError.
  int fail_times = 0;

  bool matches(std::string_view model_id, const GenerationRequest& request) const;
};

struct EmbedAnchor {
  std::string token;
  double scale = 1.0;
};

struct MockScript {
  std::vector<MockRule> rules;
  std::vector<EmbedAnchor> anchors;
  double embed_noise = 1.0;

  static MockScript load(const std::filesystem::path& path);
  static MockScript from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

// Digest-to-vector map: sha256(text) seeds SplitMix64, each draw mapped to
// [-1, 1].
std::vector<double> mock_digest_vector(std::string_view text, int dim);

class MockBackend final : public Backend {
 public:
  explicit MockBackend(BackendDescriptor descriptor, MockScript script = {});

  const BackendDescriptor& descriptor() const override { return descriptor_; }
  std::vector<std::string> complete(const GenerationRequest& request) override;
  std::vector<double> embed(std::string_view text) override;

  // Number of complete() calls that reached a rule or the default responder.
  std::size_t call_count() const;

 private:
  std::string default_sample(const GenerationRequest& request, int index) const;

  BackendDescriptor descriptor_;
  MockScript script_;
  mutable std::mutex mutex_;
  std::vector<int> failures_left_;
  std::size_t calls_ = 0;
};

}  // namespace flex
