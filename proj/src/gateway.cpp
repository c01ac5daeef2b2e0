#include "flex/gateway.hpp"

#include <chrono>
#include <cmath>
#include <thread>

#include "flex/errors.hpp"
#include "flex/hashing.hpp"
#include "flex/http_backend.hpp"
#include "flex/log.hpp"
#include "flex/mock_backend.hpp"

namespace flex {

using nlohmann::json;

void BackendDescriptor::validate() const {
  if (!has(Capability::generate)) throw ConfigError("backend '" + model_id + "' must declare the generate capability");
  if (kind == BackendKind::http) {
    if (base_url.empty()) throw ConfigError("http backend requires base_url");
    if (model_id.empty()) throw ConfigError("http backend requires model_id");
  }
  if (embed_dim <= 0) throw ConfigError("embed_dim must be positive");
  if (max_in_flight <= 0 || max_in_flight > 1024) throw ConfigError("max_in_flight must be in [1, 1024]");
  if (retry_attempts < 1) throw ConfigError("retry_attempts must be >= 1");
  if (embed_source != "embeddings_endpoint" && embed_source != "hidden_state_endpoint")
    throw ConfigError("embed_source must be embeddings_endpoint or hidden_state_endpoint");
}

void to_json(json& j, const BackendDescriptor& d) {
  json caps = json::array();
  if (d.has(Capability::generate)) caps.push_back("generate");
  if (d.has(Capability::embed)) caps.push_back("embed");
  j = json{{"kind", d.kind == BackendKind::http ? "http" : "mock"},
           {"model_id", d.model_id},
           {"capabilities", caps},
           {"max_in_flight", d.max_in_flight},
           {"retry_attempts", d.retry_attempts},
           {"retry_backoff_ms", d.retry_backoff_ms}};
  if (d.kind == BackendKind::http) {
    j["base_url"] = d.base_url;
    j["auth_token_env"] = d.auth_token_env;
    j["chat_path"] = d.chat_path;
    j["embed_path"] = d.embed_path;
    j["embed_source"] = d.embed_source;
    j["timeout_s"] = d.timeout_s;
  } else {
    j["mock_script"] = d.mock_script.string();
    j["embed_dim"] = d.embed_dim;
  }
}

void from_json(const json& j, BackendDescriptor& d) {
  static const std::set<std::string> kKeys = {
      "kind",        "base_url",   "model_id",     "auth_token_env", "capabilities",   "chat_path",
      "embed_path",  "embed_source", "timeout_s",  "retry_attempts", "retry_backoff_ms", "max_in_flight",
      "mock_script", "embed_dim"};
  if (!j.is_object()) throw ConfigError("backend spec must be an object");
  for (const auto& [key, _] : j.items())
    if (!kKeys.count(key)) throw ConfigError("unknown backend key '" + key + "'");

  d = BackendDescriptor{};
  const std::string kind = j.value("kind", "mock");
  if (kind == "http") d.kind = BackendKind::http;
  else if (kind == "mock") d.kind = BackendKind::mock;
  else throw ConfigError("unknown backend kind '" + kind + "'");

  d.base_url = j.value("base_url", d.base_url);
  d.model_id = j.value("model_id", d.model_id);
  d.auth_token_env = j.value("auth_token_env", d.auth_token_env);
  if (j.contains("capabilities")) {
    d.capabilities.clear();
    for (const auto& c : j.at("capabilities")) {
      const auto name = c.get<std::string>();
      if (name == "generate") d.capabilities.insert(Capability::generate);
      else if (name == "embed") d.capabilities.insert(Capability::embed);
      else throw ConfigError("unknown capability '" + name + "'");
    }
  }
  d.chat_path = j.value("chat_path", d.chat_path);
  d.embed_path = j.value("embed_path", d.embed_path);
  d.embed_source = j.value("embed_source", d.embed_source);
  d.timeout_s = j.value("timeout_s", d.timeout_s);
  d.retry_attempts = j.value("retry_attempts", d.retry_attempts);
  d.retry_backoff_ms = j.value("retry_backoff_ms", d.retry_backoff_ms);
  d.max_in_flight = j.value("max_in_flight", d.max_in_flight);
  d.mock_script = j.value("mock_script", std::string{});
  d.embed_dim = j.value("embed_dim", d.embed_dim);
}

void GenerationRequest::validate() const {
  if (num_samples < 1) throw PreconditionError("num_samples must be positive");
  if (max_new_tokens < 1) throw PreconditionError("max_new_tokens must be positive");
  if (!(temperature >= 0.0) || !std::isfinite(temperature)) throw PreconditionError("temperature must be >= 0");
  if (num_samples >= 2 && temperature <= 0.0)
    throw PreconditionError("num_samples >= 2 requires temperature > 0");
}

GenerationRequest greedy_request(std::string system_prompt, std::string user_prompt) {
  GenerationRequest req;
  req.system_prompt = std::move(system_prompt);
  req.user_prompt = std::move(user_prompt);
  return req;
}

std::shared_ptr<Backend> make_backend(const BackendDescriptor& descriptor) {
  descriptor.validate();
  if (descriptor.kind == BackendKind::http) return std::make_shared<HttpBackend>(descriptor);
  MockScript script;
  if (!descriptor.mock_script.empty()) script = MockScript::load(descriptor.mock_script);
  return std::make_shared<MockBackend>(descriptor, std::move(script));
}

Gateway::Gateway(std::shared_ptr<Backend> backend)
    : backend_(std::move(backend)), in_flight_(backend_->descriptor().max_in_flight) {
  backend_->descriptor().validate();
}

Gateway::Gateway(const BackendDescriptor& descriptor) : Gateway(make_backend(descriptor)) {}

template <class Fn>
auto Gateway::with_retries(Fn&& fn) -> decltype(fn()) {
  const auto& d = descriptor();
  auto backoff = std::chrono::milliseconds(d.retry_backoff_ms);
  for (int attempt = 1;; ++attempt) {
    in_flight_.acquire();
    try {
      auto out = fn();
      in_flight_.release();
      return out;
    } catch (const TransportError& e) {
      in_flight_.release();
      if (attempt >= d.retry_attempts) throw;
      log::warn("transport error on " + d.model_id + " (attempt " + std::to_string(attempt) + "): " + e.what());
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    } catch (...) {
      in_flight_.release();
      throw;
    }
  }
}

GenerationResult Gateway::generate(const GenerationRequest& request) {
  if (!descriptor().has(Capability::generate))
    throw CapabilityError("backend '" + descriptor().model_id + "' lacks the generate capability");
  request.validate();
  const auto start = std::chrono::steady_clock::now();
  GenerationResult result;
  result.samples = with_retries([&] { return backend_->complete(request); });
  if (result.samples.size() != static_cast<std::size_t>(request.num_samples))
    throw ProtocolError("backend returned " + std::to_string(result.samples.size()) + " samples, expected " +
                        std::to_string(request.num_samples));
  result.backend_model_id = descriptor().model_id;
  result.latency_ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count();
  return result;
}

EmbeddingVector Gateway::embed_sequence(std::string_view text) {
  if (!descriptor().has(Capability::embed))
    throw CapabilityError("backend '" + descriptor().model_id + "' lacks the embed capability");
  if (text.empty()) throw PreconditionError("cannot embed empty text");
  EmbeddingVector out;
  out.values = with_retries([&] { return backend_->embed(text); });
  if (out.values.empty()) throw ProtocolError("backend returned an empty embedding");
  for (double v : out.values)
    if (!std::isfinite(v)) throw ProtocolError("backend returned a non-finite embedding entry");
  std::size_t expected = 0;
  if (!dim_.compare_exchange_strong(expected, out.values.size()) && expected != out.values.size())
    throw FatalError("embedding dimension drift: " + std::to_string(expected) + " -> " +
                     std::to_string(out.values.size()));
  out.source_text_hash = sha256_hex(text);
  return out;
}

}  // namespace flex
