#include "todrr/ab_server.hpp"

#include "httplib.h"
#include "todrr/error.hpp"

namespace todrr::ab {
namespace {

void reply(httplib::Response& res, int status, const Json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

Json error_body(const std::string& msg) { return Json{{"error", msg}}; }

}  // namespace

ABServer::ABServer(ABStore& store, std::filesystem::path static_dir)
    : store_(store), server_(std::make_unique<httplib::Server>()) {
  auto& srv = *server_;

  srv.Get("/api/tasks/next", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string evaluator = req.get_param_value("evaluator");
    if (evaluator.empty()) return reply(res, 400, error_body("missing evaluator parameter"));
    const Progress p = store_.progress(evaluator);
    if (auto task = store_.next_task(evaluator)) return reply(res, 200, task_view(*task, p));
    reply(res, 200, Json{{"exhausted", true}, {"progress", Json{{"done", p.done}, {"total", p.total}}}});
  });

  srv.Post("/api/judgments", [this](const httplib::Request& req, httplib::Response& res) {
    ABJudgment j;
    try {
      j = judgment_from_json(Json::parse(req.body));
    } catch (const std::exception& e) {
      return reply(res, 400, error_body(e.what()));
    }
    j.timestamp.clear();
    switch (store_.submit(j)) {
      case SubmitStatus::ok:
        return reply(res, 201, Json{{"status", "ok"}});
      case SubmitStatus::unknown_task:
        return reply(res, 404, error_body("unknown task_id"));
      case SubmitStatus::duplicate:
        return reply(res, 409, error_body("task already judged by this evaluator"));
    }
  });

  srv.Get("/api/stats", [this](const httplib::Request&, httplib::Response& res) { reply(res, 200, store_.stats()); });

  srv.Get("/api/progress", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string evaluator = req.get_param_value("evaluator");
    if (evaluator.empty()) return reply(res, 400, error_body("missing evaluator parameter"));
    const Progress p = store_.progress(evaluator);
    reply(res, 200, Json{{"evaluator", evaluator}, {"done", p.done}, {"total", p.total}});
  });

  srv.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string msg = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      msg = e.what();
    } catch (...) {
    }
    reply(res, 500, error_body(msg));
  });

  if (!static_dir.empty() && !srv.set_mount_point("/", static_dir.string())) {
    throw DataError("static asset directory not found: " + static_dir.string());
  }
}

ABServer::~ABServer() { stop(); }

int ABServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = server_->bind_to_any_port(host);
    if (bound < 0) throw DataError("cannot bind " + host);
    return bound;
  }
  if (!server_->bind_to_port(host, port)) throw DataError("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void ABServer::listen() { server_->listen_after_bind(); }

void ABServer::stop() {
  if (server_) server_->stop();
}

}  // namespace todrr::ab
