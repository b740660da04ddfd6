#pragma once

// HTTP API over an EventStore for the review UI.
//
//   GET  /api/events?status=<pending|confirmed|rejected>
//   GET  /api/events/{id}
//   GET  /api/events/{id}/context
//   POST /api/events/{id}/review   {"decision": "confirmed"|"rejected", "note": "..."}
//   GET  /api/summary
//   GET  /api/pr.csv               precision/recall of the score over reviewed events
//
// Errors are {"error": msg} with 400, 404, 409 or 422.

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "noisepair/store.hpp"

namespace noisepair {

struct ServeConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::optional<std::filesystem::path> static_dir;
};

class ApiServer {
 public:
  ApiServer(EventStore& store, ServeConfig config);
  ~ApiServer();
  ApiServer(const ApiServer&) = delete;
  ApiServer& operator=(const ApiServer&) = delete;

  // Binds config.port (0 picks a free port) and returns the bound port.
  int bind();
  // Serves until stop(); call bind() first.
  void run();
  void stop();
  // Blocks until the server accepts connections.
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace noisepair
