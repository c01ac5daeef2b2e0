#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "flex/gateway.hpp"

namespace flex {

// OpenAI-compatible client: chat completions for generate, the embeddings
// wire format for embed. Connection failures, 429 and 5xx raise
// TransportError; anything else unexpected raises ProtocolError.
class HttpBackend final : public Backend {
 public:
  explicit HttpBackend(BackendDescriptor descriptor);

  const BackendDescriptor& descriptor() const override { return descriptor_; }
  std::vector<std::string> complete(const GenerationRequest& request) override;
  std::vector<double> embed(std::string_view text) override;

  // Wire bodies, exposed for tests.
  nlohmann::json chat_body(const GenerationRequest& request) const;
  static std::vector<std::string> parse_chat_reply(const std::string& body, int expected);
  static std::vector<double> parse_embedding_reply(const std::string& body);

 private:
  std::string post(const std::string& path, const std::string& body) const;

  BackendDescriptor descriptor_;
};

}  // namespace flex
