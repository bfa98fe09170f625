/* Copyright 2026 The LayoutForge Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/


#pragma once

#include <atomic>
#include <cstdlib>
#include <functional>
#include <string>

// api.hpp (and with it Eigen) must precede httplib: <resolv.h>, pulled in by
// httplib, defines a `res` macro that collides with Eigen's internals.
#include "layoutforge/api.hpp"

#include <httplib.h>

namespace lf {

inline constexpr int kDefaultPort = 8080;

// Port from LAYOUTFORGE_PORT, else the built-in default.
inline int default_port() {
  if (const char* env = std::getenv("LAYOUTFORGE_PORT")) {
    try {
      const int port = std::stoi(env);
      if (port > 0 && port < 65536) return port;
    } catch (const std::exception&) {
    }
    fail(ErrorCode::kInvalidInput, std::string("LAYOUTFORGE_PORT='") + env + "' is not a port number");
  }
  return kDefaultPort;
}

struct ServiceCounters {
  std::atomic<long> requests{0};
  std::atomic<long> errors{0};
};

namespace detail {

inline void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

// Runs a handler and turns every failure into a structured JSON error.
inline void guarded(httplib::Response& res, ServiceCounters& counters, const std::function<json()>& handler) {
  ++counters.requests;
  try {
    send_json(res, 200, handler());
    return;
  } catch (const Error& e) {
    send_json(res, http_status(e.code()), error_body(e));
  } catch (const json::exception& e) {
    send_json(res, 400, {{"code", "invalid_input"}, {"message", std::string("malformed JSON: ") + e.what()}});
  } catch (const std::exception&) {
    send_json(res, 500, {{"code", "internal"}, {"message", "internal error"}});
  }
  ++counters.errors;
}

inline json parse_body(const httplib::Request& req) {
  try {
    return json::parse(req.body);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::kInvalidInput, std::string("malformed JSON: ") + e.what(), "body");
  }
}

}  // namespace detail

// Registers the /v1 routes against a read-only registry. Handlers keep no
// per-request state, so concurrent requests are independent.
inline void install_routes(httplib::Server& server, const ModelRegistry& registry, ServiceCounters& counters) {
  server.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
    res.set_content("ok", "text/plain");
  });
  server.Get("/v1/models", [&](const httplib::Request&, httplib::Response& res) {
    detail::guarded(res, counters, [&] { return registry.list(); });
  });
  server.Post("/v1/generate", [&](const httplib::Request& req, httplib::Response& res) {
    detail::guarded(res, counters, [&] {
      const GenerateRequest r = parse_generate_request(detail::parse_body(req));
      return handle_generate(registry.get(r.model), r).body;
    });
  });
  server.Post("/v1/metrics/evaluate", [&](const httplib::Request& req, httplib::Response& res) {
    detail::guarded(res, counters, [&] {
      const json body = detail::parse_body(req);
      const std::string id = body.is_object() ? body.value("model", std::string()) : std::string();
      return handle_evaluate(registry.get(id), body);
    });
  });
  server.Get("/v1/prior", [&](const httplib::Request& req, httplib::Response& res) {
    detail::guarded(res, counters, [&] { return handle_prior(registry.get(req.get_param_value("model"))); });
  });
  server.Get("/v1/attention", [&](const httplib::Request& req, httplib::Response& res) {
    detail::guarded(res, counters, [&] {
      require(req.has_param("seq"), ErrorCode::kInvalidInput, "missing query parameter seq", "seq");
      return handle_attention(registry.get(req.get_param_value("model")), req.get_param_value("seq"));
    });
  });
  server.set_exception_handler([&](const httplib::Request&, httplib::Response& res, std::exception_ptr) {
    ++counters.errors;
    detail::send_json(res, 500, {{"code", "internal"}, {"message", "internal error"}});
  });
  // The designer front end is served from another origin during development.
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
  server.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
}

}  // namespace lf
