#include "doctest.h"

#include <chrono>
#include <thread>

#include <nlohmann/json.hpp>

#include "emokg/client.hpp"
#include "emokg/error.hpp"
#include "fixtures.hpp"

// After Eigen: <resolv.h> defines _res.
#include <httplib.h>

using namespace emokg;
using nlohmann::json;

#ifdef EMOKG_PYTHON
TEST_CASE("subprocess transport") {
  const std::vector<std::string> argv{EMOKG_PYTHON, (fixture::fixtures_dir() / "fake_client.py").string()};
  SubprocessTransport t(argv, std::chrono::milliseconds(5000));
  CHECK(t.exclusive());
  CHECK(t.call({{"x", 1}}).at("echo").at("x") == 1);
  CHECK(t.call({{"x", 2}}).at("echo").at("x") == 2);

  JsonLmmClient lmm(std::make_shared<SubprocessTransport>(argv));
  CHECK(lmm.complete("sys", "user") == "a snarling dog under a dim sky");

  SubprocessTransport garbage(argv);
  CHECK_THROWS_AS(garbage.call({{"garbage", true}}), Error);

  SubprocessTransport slow(argv, std::chrono::milliseconds(200));
  try {
    slow.call({{"sleep", 2}});
    FAIL("expected a timeout");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::ClientError);
  }
}
#endif

TEST_CASE("subprocess that exits immediately") {
  SubprocessTransport t({"/bin/true"}, std::chrono::milliseconds(2000));
  CHECK_THROWS_AS(t.call({{"x", 1}}), Error);
}

TEST_CASE("http transport") {
  httplib::Server server;
  server.Post("/lmm", [](const httplib::Request& req, httplib::Response& res) {
    const auto j = json::parse(req.body);
    res.set_content(json{{"text", "echo:" + j.at("user").get<std::string>()}}.dump(), "application/json");
  });
  server.Post("/broken", [](const httplib::Request&, httplib::Response& res) { res.status = 500; });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  const std::string base = "http://127.0.0.1:" + std::to_string(port);
  auto t = make_transport({{"url", base + "/lmm"}, {"timeout_ms", 5000}});
  JsonLmmClient lmm(std::shared_ptr<JsonTransport>(std::move(t)));
  CHECK(lmm.complete("s", "hello") == "echo:hello");
  HttpTransport broken(base + "/broken");
  CHECK_THROWS_AS(broken.call(json::object()), Error);

  server.stop();
  th.join();
  HttpTransport gone(base + "/lmm", std::chrono::milliseconds(500));
  CHECK_THROWS_AS(gone.call(json::object()), Error);
}

TEST_CASE("transport configuration errors") {
  CHECK_THROWS_AS(make_transport(json::object()), Error);
  CHECK_THROWS_AS(HttpTransport("ftp://x"), Error);
  CHECK_THROWS_AS(SubprocessTransport({}), Error);
  JsonLmmClient lmm(std::make_shared<FunctionTransport>([](const json&) { return json{{"txt", "x"}}; }));
  CHECK_THROWS_AS(lmm.complete("a", "b"), Error);
}
