#include "flex/annotation_service.hpp"

#include "httplib.h"

#include "flex/errors.hpp"
#include "flex/io.hpp"
#include "flex/log.hpp"

namespace flex {

using nlohmann::json;

json queue_json(const std::vector<AnnotationQueueItem>& queue) {
  json items = json::array();
  std::size_t verified = 0, exhausted = 0;
  for (const auto& q : queue) {
    json item = q;
    item["active_case"] = q.active_case();
    items.push_back(std::move(item));
    if (q.status == QueueStatus::verified) ++verified;
    if (q.status == QueueStatus::exhausted) ++exhausted;
  }
  return {{"items", items},
          {"progress", {{"total", queue.size()}, {"verified", verified}, {"exhausted", exhausted}}}};
}

json case_detail_json(const CaseDetail& d) {
  return {{"case_id", d.error_case.id()},
          {"x", d.error_case.x()},
          {"r", d.error_case.r()},
          {"y", d.error_case.y()},
          {"cluster_index", d.cluster_index},
          {"attempts", d.attempts},
          {"errored", d.errored}};
}

json export_json(const std::vector<VerifiedExplanation>& explanations) {
  json out = json::array();
  for (const auto& v : explanations) out.push_back(v);
  return out;
}

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, {{"error", message}});
}

// Maps library errors onto HTTP status codes.
template <class Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const NotFoundError& e) {
    send_error(res, 404, e.what());
  } catch (const ConflictError& e) {
    send_error(res, 409, e.what());
  } catch (const PreconditionError& e) {
    send_error(res, 400, e.what());
  } catch (const json::exception& e) {
    send_error(res, 400, std::string("malformed request: ") + e.what());
  } catch (const Error& e) {
    send_error(res, 502, e.what());
  }
}

}  // namespace

AnnotationServer::AnnotationServer(AnnotationStore& store, ServiceOptions options)
    : store_(store), options_(std::move(options)), server_(std::make_unique<httplib::Server>()) {
  install_routes();
}

AnnotationServer::~AnnotationServer() { stop(); }

void AnnotationServer::install_routes() {
  auto& s = *server_;
  s.set_pre_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Headers", "Authorization, Content-Type");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    if (req.method == "OPTIONS") {
      res.status = 204;
      return httplib::Server::HandlerResponse::Handled;
    }
    if (!options_.token.empty() && req.get_header_value("Authorization") != "Bearer " + options_.token) {
      send_error(res, 401, "missing or invalid token");
      return httplib::Server::HandlerResponse::Handled;
    }
    return httplib::Server::HandlerResponse::Unhandled;
  });

  s.Get("/queue", [this](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, queue_json(store_.queue())); });
  });

  s.Get(R"(/cases/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, case_detail_json(store_.case_detail(req.matches[1]))); });
  });

  s.Post(R"(/cases/([^/]+)/attempts)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const json body = json::parse(req.body);
      if (!body.is_object() || !body.contains("explanation") || !body["explanation"].is_string())
        throw PreconditionError("body must be {\"explanation\": string}");
      const auto attempt = store_.submit(req.matches[1], body["explanation"].get<std::string>());
      json out = attempt;
      for (const auto& q : store_.queue())
        for (const auto& c : q.candidates)
          if (c == attempt.case_id) out["queue_item"] = json(q);
      send_json(res, 200, out);
    });
  });

  s.Post(R"(/clusters/(-?\d+)/finalize)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, json(store_.finalize(std::stoi(req.matches[1])))); });
  });

  s.Get("/export", [this](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, export_json(store_.explanations())); });
  });

  s.Get("/summary/scores", [this](const httplib::Request&, httplib::Response& res) {
    if (options_.scores_path.empty() || !fs::exists(options_.scores_path)) {
      send_error(res, 404, "no summary scores available yet");
      return;
    }
    guarded(res, [&] { send_json(res, 200, json::parse(read_file(options_.scores_path))); });
  });
}

int AnnotationServer::bind() {
  if (options_.port == 0) {
    port_ = server_->bind_to_any_port(options_.host);
    if (port_ <= 0) throw FatalError("could not bind " + options_.host);
  } else {
    if (!server_->bind_to_port(options_.host, options_.port))
      throw FatalError("could not bind " + options_.host + ":" + std::to_string(options_.port));
    port_ = options_.port;
  }
  return port_;
}

int AnnotationServer::start() {
  bind();
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port_;
}

void AnnotationServer::run() {
  bind();
  log::info("annotation service listening on " + options_.host + ":" + std::to_string(port_));
  server_->listen_after_bind();
}

void AnnotationServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace flex
