// Copyright 2026 The dogseg Authors
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

#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "dogseg/service.hpp"

using namespace dogseg;
using namespace dogseg::service;
using nlohmann::json;
namespace fs = std::filesystem;

namespace
{

enc::FeatureFrame two_movers()
{
  enc::FeatureFrame f(24);
  for (std::size_t i = 0; i < f.occupancy.size(); ++i) {
    f.var_vx[i] = f.var_vy[i] = 0.25F;
    f.labels[i] = enc::kLabelStatic;
  }
  for (int y = 3; y < 6; ++y) {
    for (int x = 3; x < 6; ++x) {
      f.occupied.at(x, y) = f.occupied.at(x + 12, y + 12) = 1;
      f.occupancy.at(x, y) = f.occupancy.at(x + 12, y + 12) = 0.9F;
      f.mean_vx.at(x, y) = 2.0F;
      f.mean_vy.at(x + 12, y + 12) = -2.0F;
    }
  }
  return f;
}

struct Fixture
{
  fs::path dir;
  std::unique_ptr<label::LabelStore> store;
  std::unique_ptr<Service> svc;
  std::unique_ptr<httplib::Client> cli;

  explicit Fixture(const std::string & name, int frames = 3)
  {
    dir = fs::temp_directory_path() / ("dogseg_svc_" + name);
    fs::remove_all(dir);
    store = std::make_unique<label::LabelStore>(dir.string());
    const auto f = two_movers();
    const auto al = label::auto_label("x", f, label::BaselineClassifier{1.0});
    for (int i = 0; i < frames; ++i) {
      const auto split = i == frames - 1 ? enc::Split::kTest : enc::Split::kTrain;
      store->import_frame({"f" + std::to_string(i), split, label::kSourceBaseline, false, 0.5 * i}, f, al.labels, al.clusters);
    }
    restart();
  }

  void restart()
  {
    cli.reset();
    svc.reset();
    store = std::make_unique<label::LabelStore>(dir.string());
    ServiceConfig cfg;
    cfg.port = 0;
    cfg.cors_origin = "http://localhost:5173";
    svc = std::make_unique<Service>(*store, cfg);
    const int port = svc->start();
    cli = std::make_unique<httplib::Client>("127.0.0.1", port);
  }

  httplib::Result post(const std::string & id, const json & body)
  {
    return cli->Post("/frames/" + id + "/corrections", body.dump(), "application/json");
  }
};

}  // namespace

TEST_CASE("base64")
{
  const std::string text = "any carnal pleasure.";
  for (std::size_t n = 0; n <= text.size(); ++n) {
    const auto enc = base64_encode(reinterpret_cast<const std::uint8_t *>(text.data()), n);
    const auto dec = base64_decode(enc);
    CHECK(std::string(dec.begin(), dec.end()) == text.substr(0, n));
  }
  CHECK(base64_encode(reinterpret_cast<const std::uint8_t *>("Man"), 3) == "TWFu");
  CHECK(base64_encode(reinterpret_cast<const std::uint8_t *>("Ma"), 2) == "TWE=");
  CHECK_THROWS_AS(base64_decode("TWF"), DataError);
  CHECK_THROWS_AS(base64_decode("T*Fu"), DataError);
}

TEST_CASE("frame index")
{
  {
    const auto dir = fs::temp_directory_path() / "dogseg_svc_empty";
    fs::remove_all(dir);
    label::LabelStore store(dir.string());
    ServiceConfig cfg;
    cfg.port = 0;
    cfg.static_dir = dir.string();
    std::ofstream(dir / "index.html") << "<html>ui</html>";
    Service svc(store, cfg);
    httplib::Client cli("127.0.0.1", svc.start());
    const auto r = cli.Get("/frames");
    REQUIRE(r);
    CHECK(r->status == 200);
    CHECK(json::parse(r->body)["frames"].empty());
    const auto page = cli.Get("/index.html");
    REQUIRE(page);
    CHECK(page->body == "<html>ui</html>");
    CHECK(cli.Get("/frames/x")->status == 404);
  }

  Fixture fx("index", 5);
  auto r = fx.cli->Get("/frames?split=train");
  REQUIRE(r);
  CHECK(r->status == 200);
  CHECK(r->get_header_value("Access-Control-Allow-Origin") == "http://localhost:5173");
  const auto j = json::parse(r->body);
  CHECK(j["total"] == 4);
  CHECK(j["frames"].size() == 4);
  CHECK(j["frames"][1]["id"] == "f1");
  CHECK(j["frames"][1]["time"] == 0.5);
  CHECK(j["frames"][1]["clusters"] == 2);
  CHECK(fx.cli->Get("/frames?split=train")->body == r->body);

  r = fx.cli->Get("/frames?offset=1&limit=2");
  CHECK(json::parse(r->body)["frames"].size() == 2);
  CHECK(json::parse(r->body)["frames"][0]["id"] == "f1");
  CHECK(fx.cli->Get("/frames?split=holiday")->status == 400);
  CHECK(fx.cli->Get("/frames?limit=0")->status == 400);
  CHECK(fx.cli->Get("/frames?offset=abc")->status == 400);

  // progress recounted from the audit log
  CHECK(fx.post("f0", {{"cluster_id", 0}, {"action", "accept"}})->status == 200);
  CHECK(fx.post("f0", {{"cluster_id", 1}, {"action", "reject"}})->status == 200);
  CHECK(fx.post("f2", {{"action", "add-region"}, {"region", {{10, 10}}}})->status == 200);
  CHECK(fx.post("f2", {{"action", "skip"}})->status == 200);
  std::map<std::string, int> from_log;
  std::ifstream audit(fx.dir / "audit.jsonl");
  for (std::string line; std::getline(audit, line);) {
    const auto a = json::parse(line);
    if (a["action"] != "skip") {
      ++from_log[a["frame"]];
    }
  }
  const auto listed = json::parse(fx.cli->Get("/frames")->body)["frames"];
  for (const auto & f : listed) {
    CHECK(f["reviewed"] == from_log[f["id"]]);
  }
}

TEST_CASE("frame payload")
{
  Fixture fx("payload");
  const auto r = fx.cli->Get("/frames/f1");
  REQUIRE(r);
  CHECK(r->status == 200);
  const auto p = parse_payload(r->body);
  CHECK(p.record.id == "f1");
  CHECK(p.side == 24);
  CHECK(p.clusters.size() == fx.store->frame("f1").clusters.size());
  CHECK(p.occupancy == fx.store->features("f1").occupancy.data);
  CHECK(p.vy == fx.store->features("f1").mean_vy.data);
  CHECK(p.labels == fx.store->frame("f1").labels.data);
  CHECK(payload_json(p) == r->body);
  CHECK(parse_payload(payload_json(p)).clusters[1].hull == p.clusters[1].hull);

  CHECK(fx.cli->Get("/frames/nope")->status == 404);
  CHECK_THROWS_AS(parse_payload("{}"), DataError);
}

TEST_CASE("corrections over http")
{
  Fixture fx("corr");
  auto r = fx.post("f0", {{"cluster_id", 1}, {"action", "reject"}});
  REQUIRE(r);
  CHECK(r->status == 200);
  CHECK(parse_payload(r->body).clusters[1].review == cluster::Review::kRejected);
  // read your writes, also after a restart of the service
  CHECK(parse_payload(fx.cli->Get("/frames/f0")->body).clusters[1].review == cluster::Review::kRejected);
  fx.restart();
  const auto again = parse_payload(fx.cli->Get("/frames/f0")->body);
  CHECK(again.clusters[1].review == cluster::Review::kRejected);
  CHECK(again.labels[static_cast<std::size_t>(16 * 24 + 16)] == enc::kLabelStatic);

  // exported training labels carry the rejection
  for (const auto & [rec, lbl] : fx.store->training_labels()) {
    if (rec.id == "f0") {
      CHECK(lbl.at(16, 16) == enc::kLabelStatic);
      CHECK(lbl.at(4, 4) == enc::kLabelDynamic);
    }
  }

  const auto before = fx.cli->Get("/frames/f1")->body;
  CHECK(fx.post("f1", {{"cluster_id", 0}, {"action", "explode"}})->status == 422);
  CHECK(fx.cli->Post("/frames/f1/corrections", "{not json", "application/json")->status == 422);
  CHECK(fx.post("f1", {{"cluster_id", "zero"}, {"action", "accept"}})->status == 422);
  CHECK(fx.post("f1", {{"action", "add-region"}, {"region", {{99, 1}}}})->status == 422);
  CHECK(fx.post("f1", {{"action", "add-region"}, {"region", {1, 2, 3}}})->status == 422);
  CHECK(fx.cli->Get("/frames/f1")->body == before);

  CHECK(fx.post("nope", {{"cluster_id", 0}, {"action", "accept"}})->status == 404);
  CHECK(fx.post("f1", {{"cluster_id", 7}, {"action", "accept"}})->status == 404);
  CHECK(fx.post("f0", {{"cluster_id", 1}, {"action", "accept"}})->status == 409);
  CHECK(fx.post("f0", {{"action", "add-region"}, {"region", {{16, 16}}}})->status == 409);

  const auto pre = fx.cli->Options("/frames/f0/corrections");
  REQUIRE(pre);
  CHECK(pre->status == 204);
  CHECK(pre->get_header_value("Access-Control-Allow-Methods").find("POST") != std::string::npos);
}

TEST_CASE("concurrent conflicting posts")
{
  Fixture fx("race");
  const int port = fx.svc->port();
  for (int round = 0; round < 4; ++round) {
    const std::string id = "f" + std::to_string(round % 2);
    const int cluster_id = round / 2;
    std::atomic<int> ok{0};
    std::atomic<int> conflict{0};
    auto worker = [&](const char * action) {
      httplib::Client c("127.0.0.1", port);
      const auto r = c.Post("/frames/" + id + "/corrections",
        json{{"cluster_id", cluster_id}, {"action", action}}.dump(), "application/json");
      if (r && r->status == 200) ++ok;
      if (r && r->status == 409) ++conflict;
    };
    std::thread a(worker, "reject");
    std::thread b(worker, "accept");
    a.join();
    b.join();
    CHECK(ok == 1);
    CHECK(conflict == 1);
  }
  for (const auto & id : {"f0", "f1"}) {
    CHECK(fx.store->replay(id) == fx.store->frame(id).labels);
  }
}
