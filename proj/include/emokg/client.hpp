#pragma once

// JSON request/response transports for the external model clients
// (LMM, backbone, denoiser, embedding provider, classifier).

#include <chrono>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emokg/cues.hpp"

namespace emokg {

inline constexpr std::chrono::milliseconds kDefaultClientTimeout{30000};

class JsonTransport {
 public:
  virtual ~JsonTransport() = default;
  /// One request, one response. Throws Error(ClientError) on transport failure or timeout.
  virtual nlohmann::json call(const nlohmann::json& request) = 0;
  /// True when concurrent calls must be serialized by the caller.
  virtual bool exclusive() const { return false; }
};

/// POSTs the request as application/json to `url` (http://host:port/path).
class HttpTransport final : public JsonTransport {
 public:
  explicit HttpTransport(std::string url, std::chrono::milliseconds timeout = kDefaultClientTimeout);
  nlohmann::json call(const nlohmann::json& request) override;

 private:
  std::string host_;
  std::string path_;
  std::chrono::milliseconds timeout_;
};

/// Long-lived child process speaking one JSON object per line on stdin/stdout.
class SubprocessTransport final : public JsonTransport {
 public:
  explicit SubprocessTransport(std::vector<std::string> argv,
                               std::chrono::milliseconds timeout = kDefaultClientTimeout);
  ~SubprocessTransport() override;
  SubprocessTransport(const SubprocessTransport&) = delete;
  SubprocessTransport& operator=(const SubprocessTransport&) = delete;

  nlohmann::json call(const nlohmann::json& request) override;
  bool exclusive() const override { return true; }

 private:
  std::string read_line();

  std::vector<std::string> argv_;
  std::chrono::milliseconds timeout_;
  int pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string pending_;
  std::mutex mutex_;
};

/// In-process handler; used by tests and by embedders that link a model directly.
class FunctionTransport final : public JsonTransport {
 public:
  using Handler = std::function<nlohmann::json(const nlohmann::json&)>;
  explicit FunctionTransport(Handler handler) : handler_(std::move(handler)) {}
  nlohmann::json call(const nlohmann::json& request) override { return handler_(request); }

 private:
  Handler handler_;
};

/// Builds a transport from {"url": "..."} or {"command": ["prog", "arg", ...]},
/// with optional "timeout_ms".
std::unique_ptr<JsonTransport> make_transport(const nlohmann::json& config);

/// {"system", "user"} -> {"text"}.
class JsonLmmClient final : public LmmClient {
 public:
  explicit JsonLmmClient(std::shared_ptr<JsonTransport> transport) : transport_(std::move(transport)) {}
  std::string complete(const std::string& system, const std::string& user) override;

 private:
  std::shared_ptr<JsonTransport> transport_;
};

}  // namespace emokg
