#include "flex/mock_backend.hpp"

#include <cstdio>

#include "flex/errors.hpp"
#include "flex/hashing.hpp"
#include "flex/io.hpp"

namespace flex {

namespace {

bool contains_all(std::string_view haystack, const std::vector<std::string>& needles) {
  for (const auto& n : needles)
    if (haystack.find(n) == std::string_view::npos) return false;
  return true;
}

bool contains_any(std::string_view haystack, const std::vector<std::string>& needles) {
  for (const auto& n : needles)
    if (haystack.find(n) != std::string_view::npos) return true;
  return false;
}

std::vector<std::string> string_list(const json& j, const char* key) {
  if (!j.contains(key)) return {};
  const auto& v = j.at(key);
  if (v.is_string()) return {v.get<std::string>()};
  return v.get<std::vector<std::string>>();
}

}  // namespace

bool MockRule::matches(std::string_view model_id, const GenerationRequest& request) const {
  if (model && *model != model_id) return false;
  return contains_all(request.user_prompt, user_contains) && contains_all(request.system_prompt, system_contains) &&
         !contains_any(request.user_prompt, user_excludes) && !contains_any(request.system_prompt, system_excludes);
}

MockScript MockScript::from_json(const json& j) {
  MockScript s;
  for (const auto& r : j.value("rules", json::array())) {
    MockRule rule;
    if (r.contains("model")) rule.model = r.at("model").get<std::string>();
    rule.user_contains = string_list(r, "user_contains");
    rule.system_contains = string_list(r, "system_contains");
    rule.user_excludes = string_list(r, "user_excludes");
    rule.system_excludes = string_list(r, "system_excludes");
    if (r.contains("response")) rule.samples = {r.at("response").get<std::string>()};
    if (r.contains("samples")) rule.samples = r.at("samples").get<std::vector<std::string>>();
    rule.fail_times = r.value("fail_times", 0);
    if (rule.samples.empty() && rule.fail_times == 0)
      throw SchemaError("mock rule needs 'response', 'samples' or 'fail_times'");
    s.rules.push_back(std::move(rule));
  }
  for (const auto& a : j.value("anchors", json::array()))
    s.anchors.push_back({a.at("token").get<std::string>(), a.value("scale", 1.0)});
  s.embed_noise = j.value("embed_noise", 1.0);
  return s;
}

MockScript MockScript::load(const std::filesystem::path& path) {
  try {
    return from_json(json::parse(read_file(path)));
  } catch (const json::exception& e) {
    throw SchemaError("mock script " + path.string() + ": " + e.what());
  }
}

json MockScript::to_json() const {
  json rules = json::array();
  for (const auto& r : this->rules) {
    json o;
    if (r.model) o["model"] = *r.model;
    if (!r.user_contains.empty()) o["user_contains"] = r.user_contains;
    if (!r.system_contains.empty()) o["system_contains"] = r.system_contains;
    if (!r.user_excludes.empty()) o["user_excludes"] = r.user_excludes;
    if (!r.system_excludes.empty()) o["system_excludes"] = r.system_excludes;
    if (!r.samples.empty()) o["samples"] = r.samples;
    if (r.fail_times > 0) o["fail_times"] = r.fail_times;
    rules.push_back(std::move(o));
  }
  json anchor_list = json::array();
  for (const auto& a : anchors) anchor_list.push_back({{"token", a.token}, {"scale", a.scale}});
  return {{"rules", rules}, {"anchors", anchor_list}, {"embed_noise", embed_noise}};
}

std::vector<double> mock_digest_vector(std::string_view text, int dim) {
  std::uint64_t state = digest64(text);
  std::vector<double> v(static_cast<std::size_t>(dim));
  for (auto& x : v) {
    const std::uint64_t bits = splitmix64(state) >> 11;
    x = static_cast<double>(bits) * 0x1.0p-53 * 2.0 - 1.0;
  }
  return v;
}

MockBackend::MockBackend(BackendDescriptor descriptor, MockScript script)
    : descriptor_(std::move(descriptor)), script_(std::move(script)) {
  failures_left_.reserve(script_.rules.size());
  for (const auto& r : script_.rules) failures_left_.push_back(r.fail_times);
}

std::size_t MockBackend::call_count() const {
  std::lock_guard lock(mutex_);
  return calls_;
}

std::string MockBackend::default_sample(const GenerationRequest& request, int index) const {
  std::string key = descriptor_.model_id;
  key += '\x1f' + request.system_prompt + '\x1f' + request.user_prompt + '\x1f';
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", request.temperature);
  key += buf;
  key += '\x1f' + (request.seed ? std::to_string(*request.seed) : std::string("-")) + '\x1f' + std::to_string(index);
  return "mock response " + sha256_hex(key).substr(0, 16);
}

std::vector<std::string> MockBackend::complete(const GenerationRequest& request) {
  for (std::size_t i = 0; i < script_.rules.size(); ++i) {
    const auto& rule = script_.rules[i];
    if (!rule.matches(descriptor_.model_id, request)) continue;
    {
      std::lock_guard lock(mutex_);
      ++calls_;
      if (failures_left_[i] > 0) {
        --failures_left_[i];
        throw TransportError("scripted transport failure");
      }
    }
    if (rule.samples.empty()) continue;
    std::vector<std::string> out;
    out.reserve(static_cast<std::size_t>(request.num_samples));
    for (int s = 0; s < request.num_samples; ++s) out.push_back(rule.samples[s % rule.samples.size()]);
    return out;
  }
  {
    std::lock_guard lock(mutex_);
    ++calls_;
  }
  std::vector<std::string> out;
  for (int s = 0; s < request.num_samples; ++s) out.push_back(default_sample(request, s));
  return out;
}

std::vector<double> MockBackend::embed(std::string_view text) {
  std::vector<double> v = mock_digest_vector(text, descriptor_.embed_dim);
  for (auto& x : v) x *= script_.embed_noise;
  for (const auto& anchor : script_.anchors) {
    if (text.find(anchor.token) == std::string_view::npos) continue;
    const auto a = mock_digest_vector("anchor\x1f" + anchor.token, descriptor_.embed_dim);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += anchor.scale * a[i];
  }
  return v;
}

}  // namespace flex
