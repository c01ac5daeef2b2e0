#pragma once

// JSON-over-HTTP front of the AnnotationStore, consumed by the annotation
// workbench. Endpoints:
//   GET  /queue
//   GET  /cases/{id}
//   POST /cases/{id}/attempts     {"explanation": str}
//   POST /clusters/{i}/finalize
//   GET  /export
//   GET  /summary/scores          (404 until summary scoring has run)

#include <filesystem>
#include <memory>
#include <string>
#include <thread>

#include "flex/verification.hpp"

namespace httplib {
class Server;
}

namespace flex {

struct ServiceOptions {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  // When non-empty, every request must carry "Authorization: Bearer <token>".
  std::string token;
  // Candidates/scores artifact served at /summary/scores.
  std::filesystem::path scores_path;
};

class AnnotationServer {
 public:
  AnnotationServer(AnnotationStore& store, ServiceOptions options);
  ~AnnotationServer();

  AnnotationServer(const AnnotationServer&) = delete;
  AnnotationServer& operator=(const AnnotationServer&) = delete;

  // Binds and serves on a background thread; returns the bound port.
  int start();
  // Binds and serves on the calling thread until stop().
  void run();
  void stop();

  int port() const { return port_; }

 private:
  void install_routes();
  int bind();

  AnnotationStore& store_;
  ServiceOptions options_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
};

// JSON views shared by the service and the CLI export.
nlohmann::json queue_json(const std::vector<AnnotationQueueItem>& queue);
nlohmann::json case_detail_json(const CaseDetail& detail);
nlohmann::json export_json(const std::vector<VerifiedExplanation>& explanations);

}  // namespace flex
