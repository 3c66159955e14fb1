// Copyright 2026 The promptdet Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <atomic>
#include <chrono>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "promptdet/workflows.h"

namespace httplib {
class Server;
}

namespace promptdet {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  size_t max_sessions = 64;
  double session_ttl_s = 1800.0;
  size_t max_upload_bytes = 32u << 20;
  int64_t count_exemplars = kCountingExemplars;  // 0 accepts any non-empty set
  std::string library_path;  // embedding library loaded at start and saved on change
};

// Sessions keyed by id with an LRU capacity and an idle TTL. Lookups share a
// lock; inserts and evictions take it exclusively.
class SessionStore {
 public:
  SessionStore(size_t capacity, std::chrono::milliseconds ttl);

  void insert(std::shared_ptr<const ImageSession> session);
  // Throws NotFoundError for unknown, evicted or expired ids.
  std::shared_ptr<const ImageSession> get(const std::string& id) const;
  bool erase(const std::string& id);
  size_t size() const;
  std::vector<std::string> ids() const;

 private:
  struct Slot {
    std::shared_ptr<const ImageSession> session;
    mutable std::atomic<int64_t> last_used;  // ms, for the TTL
    mutable std::atomic<uint64_t> recency;   // access order, for LRU
  };
  static int64_t now_ticks();
  void evict_locked();

  size_t capacity_;
  std::chrono::milliseconds ttl_;
  mutable std::atomic<uint64_t> clock_{0};
  mutable std::shared_mutex mutex_;
  std::unordered_map<std::string, std::unique_ptr<Slot>> slots_;
};

struct ApiResponse {
  int status = 200;
  nlohmann::json body;
};

// The HTTP API over an Engine. Handlers are usable without a socket.
class Service {
 public:
  Service(std::shared_ptr<Engine> engine, ServiceConfig config);
  ~Service();

  // `image_bytes` is the raw upload (PNG or PPM); JSON bodies may carry
  // {"image_base64": ...} instead.
  ApiResponse create_session(const std::string& body, const std::string& content_type);
  ApiResponse create_session_from_bytes(const std::string& image_bytes);
  ApiResponse get_session(const std::string& id) const;
  ApiResponse delete_session(const std::string& id);
  ApiResponse detect(const std::string& id, const nlohmann::json& request);
  ApiResponse create_embedding(const nlohmann::json& request);
  ApiResponse list_embeddings() const;
  ApiResponse get_embedding(const std::string& label) const;
  ApiResponse delete_embedding(const std::string& label);
  ApiResponse health() const;
  ApiResponse model_info() const;

  // Binds (port 0 picks a free port) and returns the bound port.
  int bind();
  // Blocks until stop().
  void serve();
  void stop();

  Engine& engine() { return *engine_; }
  SessionStore& sessions() { return sessions_; }

 private:
  void install_routes();
  void persist_library_locked() const;

  std::shared_ptr<Engine> engine_;
  ServiceConfig config_;
  SessionStore sessions_;
  mutable std::shared_mutex library_mutex_;
  EmbeddingLibrary library_;
  std::unique_ptr<httplib::Server> server_;
  std::atomic<int64_t> created_{0};
};

// Error body {code, message, field?} and HTTP status for an exception.
ApiResponse error_response(const std::exception& e);

std::string base64_decode(const std::string& text);

}  // namespace promptdet
