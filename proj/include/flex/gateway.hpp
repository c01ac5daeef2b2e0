#pragma once

// Uniform access to text generation and sequence embedding. A Gateway wraps
// one Backend (HTTP or mock) and enforces the capability, validation,
// retry, concurrency and embedding-dimension contracts in one place.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <semaphore>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace flex {

enum class BackendKind { http, mock };
enum class Capability { generate, embed };

struct BackendDescriptor {
  BackendKind kind = BackendKind::mock;
  std::string base_url;
  std::string model_id = "mock";
  std::string auth_token_env;
  std::set<Capability> capabilities{Capability::generate};

  // http
  std::string chat_path = "/v1/chat/completions";
  std::string embed_path = "/v1/embeddings";
  // How the embed capability is satisfied: "embeddings_endpoint" or
  // "hidden_state_endpoint". Both use the embeddings wire format.
  std::string embed_source = "embeddings_endpoint";
  int timeout_s = 600;

  // retry policy (transport errors only)
  int retry_attempts = 3;
  int retry_backoff_ms = 1000;

  int max_in_flight = 8;

  // mock
  std::filesystem::path mock_script;
  int embed_dim = 64;

  bool has(Capability c) const { return capabilities.count(c) != 0; }

  // Throws ConfigError on violated invariants.
  void validate() const;
};

void to_json(nlohmann::json& j, const BackendDescriptor& d);
void from_json(const nlohmann::json& j, BackendDescriptor& d);

struct GenerationRequest {
  std::string system_prompt;
  std::string user_prompt;
  double temperature = 0.0;
  int num_samples = 1;
  int max_new_tokens = 8192;
  std::optional<std::uint64_t> seed;

  void validate() const;
};

struct GenerationResult {
  std::vector<std::string> samples;
  std::string backend_model_id;
  std::int64_t latency_ms = 0;
};

struct EmbeddingVector {
  std::vector<double> values;
  std::string source_text_hash;

  std::size_t dim() const { return values.size(); }
};

class Backend {
 public:
  virtual ~Backend() = default;

  virtual const BackendDescriptor& descriptor() const = 0;

  // Returns exactly request.num_samples completions in sampling order.
  virtual std::vector<std::string> complete(const GenerationRequest& request) = 0;

  virtual std::vector<double> embed(std::string_view text) = 0;
};

// Builds the backend named by the descriptor. Mock scripts are loaded here.
std::shared_ptr<Backend> make_backend(const BackendDescriptor& descriptor);

class Gateway {
 public:
  explicit Gateway(std::shared_ptr<Backend> backend);
  explicit Gateway(const BackendDescriptor& descriptor);

  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  const BackendDescriptor& descriptor() const { return backend_->descriptor(); }

  GenerationResult generate(const GenerationRequest& request);

  EmbeddingVector embed_sequence(std::string_view text);

  // 0 until the first embedding is produced.
  std::size_t embedding_dim() const { return dim_.load(); }

 private:
  template <class Fn>
  auto with_retries(Fn&& fn) -> decltype(fn());

  std::shared_ptr<Backend> backend_;
  std::counting_semaphore<1024> in_flight_;
  std::atomic<std::size_t> dim_{0};
};

// Greedy single-sample request with the default decoding settings.
GenerationRequest greedy_request(std::string system_prompt, std::string user_prompt);

}  // namespace flex
