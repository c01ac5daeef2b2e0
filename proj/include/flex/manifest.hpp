#pragma once

// Run-directory bookkeeping: per-stage manifests with git-blob content hashes
// of every input and output artifact, hash verification on load, and the
// run-directory lock.

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace flex {

struct ArtifactRef {
  std::string path;  // relative to the run directory when inside it
  std::string hash;  // git blob id
};

struct RunManifest {
  std::string run_id;
  std::string stage;
  std::string variant;
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json seeds = nlohmann::json::object();
  nlohmann::json backends = nlohmann::json::object();
  nlohmann::json details = nlohmann::json::object();
  std::vector<ArtifactRef> inputs;
  std::vector<ArtifactRef> outputs;
  std::string started;
  std::string finished;
};

void to_json(nlohmann::json& j, const ArtifactRef& a);
void from_json(const nlohmann::json& j, ArtifactRef& a);
void to_json(nlohmann::json& j, const RunManifest& m);
void from_json(const nlohmann::json& j, RunManifest& m);

// manifest-<stage>.json or manifest-<stage>-<variant>.json
std::string manifest_filename(const std::string& stage, const std::string& variant = {});

// Hashes `file` and returns a reference relative to run_dir when possible.
ArtifactRef artifact_ref(const std::filesystem::path& run_dir, const std::filesystem::path& file);

void write_manifest(const std::filesystem::path& run_dir, const RunManifest& manifest);
RunManifest read_manifest(const std::filesystem::path& path);

// Reads an artifact from the run directory. A missing file raises
// ArtifactError naming it and the stage that produces it. When manifests list
// the file as an output, its content must match one of the recorded hashes.
std::string load_artifact(const std::filesystem::path& run_dir, const std::string& name,
                          const std::string& producer_hint = {});

// Checks every output recorded by the run's manifests; returns the paths
// whose content matches none of their recorded hashes.
std::vector<std::string> verify_run(const std::filesystem::path& run_dir);

// Exclusive per-run-directory lock held for the lifetime of the object.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& run_dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

  static constexpr const char* kLockFile = ".flex.lock";

 private:
  std::filesystem::path path_;
};

std::string new_run_id(const std::string& stage);

}  // namespace flex
