#include "flex/http_backend.hpp"

#include <cstdlib>

#include "httplib.h"

#include "flex/errors.hpp"

namespace flex {

using nlohmann::json;

namespace {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // optional path prefix, no trailing slash
};

SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  const auto host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
  const auto path_start = url.find('/', host_start);
  if (path_start == std::string::npos) return {url, ""};
  std::string prefix = url.substr(path_start);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {url.substr(0, path_start), prefix};
}

}  // namespace

HttpBackend::HttpBackend(BackendDescriptor descriptor) : descriptor_(std::move(descriptor)) {
  descriptor_.validate();
}

json HttpBackend::chat_body(const GenerationRequest& request) const {
  json messages = json::array();
  if (!request.system_prompt.empty())
    messages.push_back({{"role", "system"}, {"content", request.system_prompt}});
  messages.push_back({{"role", "user"}, {"content", request.user_prompt}});
  json body = {{"model", descriptor_.model_id},
               {"messages", messages},
               {"temperature", request.temperature},
               {"top_p", 1.0},
               {"n", request.num_samples},
               {"max_tokens", request.max_new_tokens}};
  if (request.seed) body["seed"] = *request.seed;
  return body;
}

std::vector<std::string> HttpBackend::parse_chat_reply(const std::string& body, int expected) {
  json reply;
  try {
    reply = json::parse(body);
  } catch (const json::parse_error& e) {
    throw ProtocolError(std::string("malformed chat reply: ") + e.what());
  }
  if (!reply.contains("choices") || !reply["choices"].is_array())
    throw ProtocolError("chat reply lacks a choices array");
  std::vector<std::string> samples(static_cast<std::size_t>(expected));
  std::vector<bool> seen(samples.size(), false);
  std::size_t position = 0;
  for (const auto& choice : reply["choices"]) {
    const std::size_t index = choice.contains("index") ? choice["index"].get<std::size_t>() : position;
    ++position;
    if (index >= samples.size() || seen[index]) throw ProtocolError("chat reply has an unexpected choice index");
    const auto& message = choice.value("message", json::object());
    if (!message.contains("content") || !message["content"].is_string())
      throw ProtocolError("chat reply choice lacks message.content");
    samples[index] = message["content"].get<std::string>();
    seen[index] = true;
  }
  for (bool s : seen)
    if (!s) throw ProtocolError("chat reply returned fewer choices than requested");
  return samples;
}

std::vector<double> HttpBackend::parse_embedding_reply(const std::string& body) {
  try {
    const json reply = json::parse(body);
    const auto& data = reply.at("data");
    if (!data.is_array() || data.empty()) throw ProtocolError("embedding reply has no data");
    return data.at(0).at("embedding").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed embedding reply: ") + e.what());
  }
}

std::string HttpBackend::post(const std::string& path, const std::string& body) const {
  const auto url = split_url(descriptor_.base_url);
  httplib::Client client(url.origin);
  client.set_connection_timeout(std::min(descriptor_.timeout_s, 30), 0);
  client.set_read_timeout(descriptor_.timeout_s, 0);
  client.set_write_timeout(descriptor_.timeout_s, 0);
  httplib::Headers headers;
  if (!descriptor_.auth_token_env.empty()) {
    if (const char* token = std::getenv(descriptor_.auth_token_env.c_str()))
      headers.emplace("Authorization", std::string("Bearer ") + token);
  }
  auto res = client.Post(url.prefix + path, headers, body, "application/json");
  if (!res) throw TransportError("request to " + descriptor_.base_url + path + " failed: " + httplib::to_string(res.error()));
  if (res->status == 429 || res->status >= 500)
    throw TransportError("server returned HTTP " + std::to_string(res->status));
  if (res->status != 200)
    throw ProtocolError("server returned HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
  return res->body;
}

std::vector<std::string> HttpBackend::complete(const GenerationRequest& request) {
  return parse_chat_reply(post(descriptor_.chat_path, chat_body(request).dump()), request.num_samples);
}

std::vector<double> HttpBackend::embed(std::string_view text) {
  const json body = {{"model", descriptor_.model_id}, {"input", std::string(text)}};
  return parse_embedding_reply(post(descriptor_.embed_path, body.dump()));
}

}  // namespace flex
