#include "noisepair/http_api.hpp"

#include <algorithm>
#include <sstream>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "noisepair/error.hpp"
#include "noisepair/evaluation.hpp"

namespace noisepair {

using json = nlohmann::json;

namespace {

void send_json(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, {{"error", message}}, status);
}

std::vector<CandidateEvent> sorted_events(const StoreState& state) {
  std::vector<CandidateEvent> out;
  out.reserve(state.size());
  for (const auto& [id, e] : state) out.push_back(e);
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.window_start_s < b.window_start_s;
  });
  return out;
}

}  // namespace

struct ApiServer::Impl {
  EventStore& store;
  ServeConfig config;
  httplib::Server server;

  Impl(EventStore& s, ServeConfig c) : store(s), config(std::move(c)) { routes(); }

  void routes() {
    server.Get("/api/events", [this](const httplib::Request& req, httplib::Response& res) {
      std::optional<ReviewStatus> filter;
      if (req.has_param("status") && !req.get_param_value("status").empty()) {
        try {
          filter = review_status_from_string(req.get_param_value("status"));
        } catch (const Error& e) {
          return send_error(res, 400, e.what());
        }
      }
      json out = json::array();
      for (const auto& e : sorted_events(*store.snapshot())) {
        if (!filter || e.review_status == *filter) out.push_back(to_json(e));
      }
      send_json(res, out);
    });

    server.Get(R"(/api/events/([^/]+))", [this](const httplib::Request& req,
                                                 httplib::Response& res) {
      const auto e = store.find(req.matches[1]);
      if (!e) return send_error(res, 404, "not found");
      send_json(res, to_json(*e));
    });

    server.Get(R"(/api/events/([^/]+)/context)", [this](const httplib::Request& req,
                                                         httplib::Response& res) {
      const auto ctx = store.context(req.matches[1]);
      if (!ctx) return send_error(res, 404, "not found");
      send_json(res, *ctx);
    });

    server.Post(R"(/api/events/([^/]+)/review)", [this](const httplib::Request& req,
                                                         httplib::Response& res) {
      ReviewStatus decision;
      std::optional<std::string> note;
      try {
        const json body = json::parse(req.body);
        decision = review_status_from_string(body.at("decision").get<std::string>());
        if (decision == ReviewStatus::pending) throw Error("invalid decision");
        if (body.contains("note") && !body["note"].is_null()) {
          note = body["note"].get<std::string>();
        }
      } catch (const json::exception&) {
        return send_error(res, 400, "invalid review body");
      } catch (const Error&) {
        return send_error(res, 400, "invalid decision");
      }
      try {
        send_json(res, to_json(store.review(req.matches[1], decision, note)));
      } catch (const NotFoundError& e) {
        send_error(res, 404, e.what());
      } catch (const ConflictError& e) {
        send_error(res, 409, e.what());
      }
    });

    server.Get("/api/summary", [this](const httplib::Request&, httplib::Response& res) {
      const auto s = store.summary();
      send_json(res, {{"pending", s.pending},
                      {"confirmed", s.confirmed},
                      {"rejected", s.rejected},
                      {"total", s.pending + s.confirmed + s.rejected},
                      {"pr_export", "/api/pr.csv"}});
    });

    // Confirmed reviews are positives, rejected ones negatives.
    server.Get("/api/pr.csv", [this](const httplib::Request&, httplib::Response& res) {
      std::vector<ScoredSample> samples;
      for (const auto& e : sorted_events(*store.snapshot())) {
        if (e.review_status == ReviewStatus::pending) continue;
        samples.push_back({e.score, e.review_status == ReviewStatus::confirmed});
      }
      try {
        const auto curve = pr_curve(samples);
        std::ostringstream out;
        write_pr_csv(curve, out);
        res.set_content(out.str(), "text/csv");
      } catch (const Error& e) {
        send_error(res, 422, e.what());
      }
    });

    server.set_exception_handler(
        [](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
          try {
            std::rethrow_exception(ep);
          } catch (const std::exception& e) {
            send_error(res, 500, e.what());
          } catch (...) {
            send_error(res, 500, "internal error");
          }
        });

    if (config.static_dir) {
      if (!server.set_mount_point("/", config.static_dir->string())) {
        throw Error("static dir not found: " + config.static_dir->string());
      }
    }
  }
};

ApiServer::ApiServer(EventStore& store, ServeConfig config)
    : impl_(std::make_unique<Impl>(store, std::move(config))) {}

ApiServer::~ApiServer() { stop(); }

int ApiServer::bind() {
  auto& c = impl_->config;
  if (c.port == 0) {
    c.port = impl_->server.bind_to_any_port(c.host);
    if (c.port < 0) throw Error("cannot bind " + c.host);
  } else if (!impl_->server.bind_to_port(c.host, c.port)) {
    throw Error("cannot bind " + c.host + ":" + std::to_string(c.port));
  }
  return c.port;
}

void ApiServer::run() { impl_->server.listen_after_bind(); }

void ApiServer::stop() {
  if (impl_) impl_->server.stop();
}

void ApiServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace noisepair
