#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "todrr/ab.hpp"

namespace httplib {
class Server;
}

namespace todrr::ab {

// HTTP JSON API over an ABStore:
//   GET  /api/tasks/next?evaluator=ID
//   POST /api/judgments      {"task_id","evaluator","choice": "left"|"right"|"A"|"B"}
//   GET  /api/stats
//   GET  /api/progress?evaluator=ID
class ABServer {
 public:
  explicit ABServer(ABStore& store, std::filesystem::path static_dir = {});
  ~ABServer();

  // Binds to host:port (port 0 picks a free port) and returns the port.
  int bind(const std::string& host, int port);
  // Blocks serving requests until stop() is called.
  void listen();
  void stop();

 private:
  ABStore& store_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace todrr::ab
