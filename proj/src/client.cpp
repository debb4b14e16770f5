#include "emokg/client.hpp"

#include <csignal>
#include <cstring>

#include <fcntl.h>
#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

#include <httplib.h>

#include "emokg/error.hpp"

namespace emokg {

using nlohmann::json;

HttpTransport::HttpTransport(std::string url, std::chrono::milliseconds timeout) : timeout_(timeout) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos || url.substr(0, scheme) != "http")
    fail(Errc::ConfigError, "client url must start with http://, got '" + url + "'");
  const auto slash = url.find('/', scheme + 3);
  host_ = url.substr(0, slash);
  path_ = slash == std::string::npos ? "/" : url.substr(slash);
}

json HttpTransport::call(const json& request) {
  httplib::Client cli(host_);
  const auto secs = timeout_.count() / 1000;
  const auto usecs = (timeout_.count() % 1000) * 1000;
  cli.set_connection_timeout(secs, usecs);
  cli.set_read_timeout(secs, usecs);
  cli.set_write_timeout(secs, usecs);
  auto res = cli.Post(path_, request.dump(), "application/json");
  if (!res) fail(Errc::ClientError, "HTTP request to " + host_ + path_ + " failed: " + httplib::to_string(res.error()));
  if (res->status != 200)
    fail(Errc::ClientError, "HTTP " + std::to_string(res->status) + " from " + host_ + path_);
  try {
    return json::parse(res->body);
  } catch (const json::exception& e) {
    fail(Errc::ClientError, std::string("malformed JSON response: ") + e.what());
  }
}

SubprocessTransport::SubprocessTransport(std::vector<std::string> argv, std::chrono::milliseconds timeout)
    : argv_(std::move(argv)), timeout_(timeout) {
  if (argv_.empty()) fail(Errc::ConfigError, "subprocess client needs a command");
  int in_pipe[2];
  int out_pipe[2];
  if (pipe(in_pipe) != 0 || pipe(out_pipe) != 0) fail(Errc::ClientError, "pipe() failed");
  pid_ = fork();
  if (pid_ < 0) fail(Errc::ClientError, "fork() failed");
  if (pid_ == 0) {
    dup2(in_pipe[0], STDIN_FILENO);
    dup2(out_pipe[1], STDOUT_FILENO);
    close(in_pipe[0]);
    close(in_pipe[1]);
    close(out_pipe[0]);
    close(out_pipe[1]);
    std::vector<char*> args;
    for (auto& a : argv_) args.push_back(a.data());
    args.push_back(nullptr);
    execvp(args[0], args.data());
    _exit(127);
  }
  close(in_pipe[0]);
  close(out_pipe[1]);
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];
  fcntl(to_child_, F_SETFD, FD_CLOEXEC);
  fcntl(from_child_, F_SETFD, FD_CLOEXEC);
  std::signal(SIGPIPE, SIG_IGN);
}

SubprocessTransport::~SubprocessTransport() {
  if (to_child_ >= 0) close(to_child_);
  if (from_child_ >= 0) close(from_child_);
  if (pid_ > 0) {
    int status = 0;
    // closing stdin normally ends the child; give it a moment, then kill
    for (int i = 0; i < 50; ++i) {
      if (waitpid(pid_, &status, WNOHANG) == pid_) return;
      usleep(10000);
    }
    kill(pid_, SIGKILL);
    waitpid(pid_, &status, 0);
  }
}

std::string SubprocessTransport::read_line() {
  const auto deadline = std::chrono::steady_clock::now() + timeout_;
  while (true) {
    if (const auto nl = pending_.find('\n'); nl != std::string::npos) {
      std::string line = pending_.substr(0, nl);
      pending_.erase(0, nl + 1);
      return line;
    }
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) fail(Errc::ClientError, "subprocess client timed out");
    pollfd pfd{from_child_, POLLIN, 0};
    const int rc = poll(&pfd, 1, static_cast<int>(left.count()));
    if (rc == 0) fail(Errc::ClientError, "subprocess client timed out");
    if (rc < 0) fail(Errc::ClientError, std::string("poll failed: ") + std::strerror(errno));
    char buf[4096];
    const auto n = read(from_child_, buf, sizeof buf);
    if (n <= 0) fail(Errc::ClientError, "subprocess client closed its output");
    pending_.append(buf, static_cast<std::size_t>(n));
  }
}

json SubprocessTransport::call(const json& request) {
  std::lock_guard lock(mutex_);
  const std::string line = request.dump() + "\n";
  std::size_t written = 0;
  while (written < line.size()) {
    const auto n = write(to_child_, line.data() + written, line.size() - written);
    if (n <= 0) fail(Errc::ClientError, "cannot write to subprocess client");
    written += static_cast<std::size_t>(n);
  }
  const std::string reply = read_line();
  try {
    return json::parse(reply);
  } catch (const json::exception& e) {
    fail(Errc::ClientError, std::string("malformed JSON line from subprocess: ") + e.what());
  }
}

std::unique_ptr<JsonTransport> make_transport(const json& config) {
  const auto timeout = std::chrono::milliseconds(config.value("timeout_ms", kDefaultClientTimeout.count()));
  if (config.contains("url")) return std::make_unique<HttpTransport>(config.at("url").get<std::string>(), timeout);
  if (config.contains("command"))
    return std::make_unique<SubprocessTransport>(config.at("command").get<std::vector<std::string>>(), timeout);
  fail(Errc::ConfigError, "client config needs either 'url' or 'command'");
}

std::string JsonLmmClient::complete(const std::string& system, const std::string& user) {
  const json reply = transport_->call({{"system", system}, {"user", user}});
  if (!reply.is_object() || !reply.contains("text") || !reply.at("text").is_string())
    fail(Errc::ClientError, "LMM response lacks a 'text' string");
  return reply.at("text").get<std::string>();
}

}  // namespace emokg
