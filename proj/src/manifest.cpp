#include "flex/manifest.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <map>

#include "flex/errors.hpp"
#include "flex/hashing.hpp"
#include "flex/io.hpp"

namespace flex {

using nlohmann::json;

void to_json(json& j, const ArtifactRef& a) { j = {{"path", a.path}, {"hash", a.hash}}; }

void from_json(const json& j, ArtifactRef& a) {
  a.path = j.at("path").get<std::string>();
  a.hash = j.at("hash").get<std::string>();
}

void to_json(json& j, const RunManifest& m) {
  j = {{"run_id", m.run_id},     {"stage", m.stage},       {"variant", m.variant},   {"config", m.config},
       {"seeds", m.seeds},       {"backends", m.backends}, {"details", m.details},   {"inputs", m.inputs},
       {"outputs", m.outputs},   {"started", m.started},   {"finished", m.finished}};
}

void from_json(const json& j, RunManifest& m) {
  m.run_id = j.at("run_id").get<std::string>();
  m.stage = j.at("stage").get<std::string>();
  m.variant = j.value("variant", std::string());
  m.config = j.value("config", json::object());
  m.seeds = j.value("seeds", json::object());
  m.backends = j.value("backends", json::object());
  m.details = j.value("details", json::object());
  m.inputs = j.value("inputs", json::array()).get<std::vector<ArtifactRef>>();
  m.outputs = j.value("outputs", json::array()).get<std::vector<ArtifactRef>>();
  m.started = j.value("started", std::string());
  m.finished = j.value("finished", std::string());
}

std::string manifest_filename(const std::string& stage, const std::string& variant) {
  return "manifest-" + stage + (variant.empty() ? "" : "-" + variant) + ".json";
}

ArtifactRef artifact_ref(const fs::path& run_dir, const fs::path& file) {
  const auto content = read_file(file);
  std::error_code ec;
  const auto rel = fs::relative(fs::weakly_canonical(file), fs::weakly_canonical(run_dir), ec);
  const bool inside = !ec && !rel.empty() && rel.begin()->string() != "..";
  return {inside ? rel.generic_string() : fs::absolute(file).string(), git_blob_hash(content)};
}

void write_manifest(const fs::path& run_dir, const RunManifest& manifest) {
  write_file_atomic(run_dir / manifest_filename(manifest.stage, manifest.variant), json(manifest).dump(2) + "\n");
}

RunManifest read_manifest(const fs::path& path) {
  try {
    return json::parse(read_file(path)).get<RunManifest>();
  } catch (const json::exception& e) {
    throw ArtifactError("corrupt manifest " + path.string() + ": " + e.what());
  }
}

namespace {

std::vector<RunManifest> all_manifests(const fs::path& run_dir) {
  std::vector<fs::path> files;
  if (fs::is_directory(run_dir))
    for (const auto& e : fs::directory_iterator(run_dir)) {
      const auto name = e.path().filename().string();
      if (name.rfind("manifest-", 0) == 0 && e.path().extension() == ".json") files.push_back(e.path());
    }
  std::sort(files.begin(), files.end());
  std::vector<RunManifest> out;
  for (const auto& f : files) out.push_back(read_manifest(f));
  return out;
}

}  // namespace

std::string load_artifact(const fs::path& run_dir, const std::string& name, const std::string& producer_hint) {
  const fs::path file = run_dir / name;
  if (!fs::exists(file)) {
    std::string msg = "missing artifact " + file.string();
    if (!producer_hint.empty()) msg += " (run `flex " + producer_hint + "` first)";
    throw ArtifactError(msg);
  }
  const std::string content = read_file(file);
  const std::string actual = git_blob_hash(content);
  // Stages may legitimately rewrite an artifact (an ablation variant, a
  // resumed annotation session); the content must match one of the recorded
  // producer hashes.
  std::vector<std::string> producers;
  bool matched = false;
  for (const auto& m : all_manifests(run_dir))
    for (const auto& o : m.outputs)
      if (o.path == name) {
        producers.push_back(manifest_filename(m.stage, m.variant));
        matched = matched || o.hash == actual;
      }
  if (!producers.empty() && !matched)
    throw ArtifactError("artifact " + file.string() + " does not match the hash recorded in " + producers.back());
  return content;
}

std::vector<std::string> verify_run(const fs::path& run_dir) {
  std::map<std::string, std::pair<bool, bool>> seen;  // path -> (exists, matched)
  for (const auto& m : all_manifests(run_dir))
    for (const auto& o : m.outputs) {
      const fs::path file = fs::path(o.path).is_absolute() ? fs::path(o.path) : run_dir / o.path;
      auto& [exists, matched] = seen[o.path];
      exists = fs::exists(file);
      matched = matched || (exists && git_blob_hash(read_file(file)) == o.hash);
    }
  std::vector<std::string> bad;
  for (const auto& [path, state] : seen)
    if (!state.second) bad.push_back(path);
  return bad;
}

RunLock::RunLock(const fs::path& run_dir) : path_(run_dir / kLockFile) {
  fs::create_directories(run_dir);
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0)
    throw ConflictError("run directory " + run_dir.string() + " is locked by another stage (remove " + path_.string() +
                        " if no stage is running)");
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

RunLock::~RunLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

std::string new_run_id(const std::string& stage) {
  static std::atomic<unsigned> counter{0};
  const auto now = std::chrono::system_clock::now().time_since_epoch().count();
  const std::string seed = stage + ":" + std::to_string(now) + ":" + std::to_string(::getpid()) + ":" +
                           std::to_string(counter.fetch_add(1));
  return stage + "-" + sha256_hex(seed).substr(0, 12);
}

}  // namespace flex
