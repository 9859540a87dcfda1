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

#include "dogseg/service.hpp"

#include <bit>
#include <cstring>

#include <httplib.h>
#include <json.hpp>

namespace dogseg::service
{

namespace
{

using nlohmann::json;

constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

static_assert(std::endian::native == std::endian::little, "raster payloads assume a little-endian host");

json raster_json(const std::uint8_t * bytes, std::size_t size, const char * type, int side)
{
  return {{"type", type}, {"width", side}, {"height", side}, {"data", base64_encode(bytes, size)}};
}

template <typename T>
std::vector<T> raster_from(const json & j, const char * type, int side)
{
  if (j.at("type").get<std::string>() != type || j.at("width").get<int>() != side || j.at("height").get<int>() != side) {
    throw DataError(std::string("raster is not ") + type + " of the frame's size");
  }
  const auto bytes = base64_decode(j.at("data").get<std::string>());
  std::vector<T> out(static_cast<std::size_t>(side) * side);
  if (bytes.size() != out.size() * sizeof(T)) {
    throw DataError("raster byte count does not match its size");
  }
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

void send_error(httplib::Response & res, int status, const std::string & message)
{
  res.status = status;
  res.set_content(json{{"error", message}}.dump(), "application/json");
}

}  // namespace

std::string base64_encode(const std::uint8_t * data, std::size_t size)
{
  std::string out;
  out.reserve((size + 2) / 3 * 4);
  for (std::size_t i = 0; i < size; i += 3) {
    const std::uint32_t b0 = data[i];
    const std::uint32_t b1 = i + 1 < size ? data[i + 1] : 0;
    const std::uint32_t b2 = i + 2 < size ? data[i + 2] : 0;
    const std::uint32_t v = (b0 << 16) | (b1 << 8) | b2;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += i + 1 < size ? kAlphabet[(v >> 6) & 63] : '=';
    out += i + 2 < size ? kAlphabet[v & 63] : '=';
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string & text)
{
  if (text.size() % 4 != 0) {
    throw DataError("base64 length must be a multiple of 4");
  }
  auto value = [](char c) -> int {
    const char * p = std::strchr(kAlphabet, c);
    return c != '\0' && p != nullptr ? static_cast<int>(p - kAlphabet) : -1;
  };
  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    const bool last = i + 4 == text.size();
    const int pad = last ? (text[i + 3] == '=') + (text[i + 2] == '=') : 0;
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = text[i + static_cast<std::size_t>(k)];
      const int d = k >= 4 - pad ? 0 : value(c);
      if (d < 0) {
        throw DataError("invalid base64 character");
      }
      v = (v << 6) | static_cast<std::uint32_t>(d);
    }
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    if (pad < 2) {
      out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
    }
    if (pad < 1) {
      out.push_back(static_cast<std::uint8_t>(v & 0xff));
    }
  }
  return out;
}

FramePayload make_payload(const label::LabelStore & store, const std::string & id)
{
  const auto state = store.frame(id);
  const auto f = store.features(id);
  FramePayload p;
  p.record = state.record;
  p.side = f.side;
  p.occupancy = f.occupancy.data;
  p.vx = f.mean_vx.data;
  p.vy = f.mean_vy.data;
  p.labels = state.labels.data;
  p.clusters = state.clusters;
  for (const auto & c : p.clusters) {
    p.reviewed += c.review != cluster::Review::kAuto ? 1 : 0;
  }
  return p;
}

std::string payload_json(const FramePayload & p)
{
  json j;
  j["id"] = p.record.id;
  j["split"] = enc::to_string(p.record.split);
  j["source"] = p.record.source;
  j["skipped"] = p.record.skipped;
  j["time"] = p.record.time;
  j["side"] = p.side;
  auto bytes = [](const auto & v) { return reinterpret_cast<const std::uint8_t *>(v.data()); };
  j["occupancy"] = raster_json(bytes(p.occupancy), p.occupancy.size() * 4, "f32le", p.side);
  j["vx"] = raster_json(bytes(p.vx), p.vx.size() * 4, "f32le", p.side);
  j["vy"] = raster_json(bytes(p.vy), p.vy.size() * 4, "f32le", p.side);
  j["labels"] = raster_json(p.labels.data(), p.labels.size(), "u8", p.side);
  j["clusters"] = json::array();
  for (const auto & c : p.clusters) {
    j["clusters"].push_back(json::parse(cluster::to_json_line(c)));
  }
  j["reviewed"] = p.reviewed;
  return j.dump();
}

FramePayload parse_payload(const std::string & text)
{
  try {
    const auto j = json::parse(text);
    FramePayload p;
    p.record.id = j.at("id").get<std::string>();
    p.record.split = enc::parse_split(j.at("split").get<std::string>());
    p.record.source = j.at("source").get<std::string>();
    p.record.skipped = j.at("skipped").get<bool>();
    p.record.time = j.at("time").get<double>();
    p.side = j.at("side").get<int>();
    p.occupancy = raster_from<float>(j.at("occupancy"), "f32le", p.side);
    p.vx = raster_from<float>(j.at("vx"), "f32le", p.side);
    p.vy = raster_from<float>(j.at("vy"), "f32le", p.side);
    p.labels = raster_from<std::uint8_t>(j.at("labels"), "u8", p.side);
    for (const auto & c : j.at("clusters")) {
      p.clusters.push_back(cluster::from_json_line(c.dump()));
    }
    p.reviewed = j.at("reviewed").get<int>();
    return p;
  } catch (const json::exception & e) {
    throw DataError(std::string("bad frame payload: ") + e.what());
  }
}

Service::Service(label::LabelStore & store, ServiceConfig config)
: store_(store), config_(std::move(config)), server_(std::make_unique<httplib::Server>())
{
  routes();
}

Service::~Service()
{
  stop();
}

void Service::routes()
{
  auto & s = *server_;
  const std::string origin = config_.cors_origin;
  s.set_post_routing_handler([origin](const httplib::Request &, httplib::Response & res) {
    res.set_header("Access-Control-Allow-Origin", origin);
  });
  s.Options(R"(/.*)", [](const httplib::Request &, httplib::Response & res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
  if (!config_.static_dir.empty() && !s.set_mount_point("/", config_.static_dir)) {
    throw ConfigError("static directory " + config_.static_dir + " does not exist");
  }

  s.Get("/frames", [this](const httplib::Request & req, httplib::Response & res) {
    std::vector<label::FrameRecord> records;
    int offset = 0;
    int limit = config_.page_limit;
    try {
      if (req.has_param("split")) {
        const auto split = enc::parse_split(req.get_param_value("split"));
        records = store_.frames(split);
      } else {
        records = store_.frames();
      }
      if (req.has_param("offset")) {
        offset = std::stoi(req.get_param_value("offset"));
      }
      if (req.has_param("limit")) {
        limit = std::stoi(req.get_param_value("limit"));
      }
    } catch (const std::exception & e) {
      send_error(res, 400, e.what());
      return;
    }
    if (offset < 0 || limit < 1 || limit > 1000) {
      send_error(res, 400, "offset must be >= 0 and limit in 1..1000");
      return;
    }
    json list = json::array();
    for (std::size_t i = static_cast<std::size_t>(offset); i < records.size() && list.size() < static_cast<std::size_t>(limit); ++i) {
      const auto & r = records[i];
      const auto st = store_.frame(r.id);
      int reviewed = 0;
      for (const auto & c : st.clusters) {
        reviewed += c.review != cluster::Review::kAuto ? 1 : 0;
      }
      list.push_back({{"id", r.id}, {"split", enc::to_string(r.split)}, {"source", r.source}, {"skipped", r.skipped},
        {"time", r.time}, {"clusters", st.clusters.size()}, {"reviewed", reviewed}});
    }
    res.set_content(json{{"frames", list}, {"total", records.size()}, {"offset", offset}, {"limit", limit}}.dump(),
      "application/json");
  });

  s.Get(R"(/frames/([^/]+))", [this](const httplib::Request & req, httplib::Response & res) {
    try {
      res.set_content(payload_json(make_payload(store_, req.matches[1])), "application/json");
    } catch (const NotFoundError & e) {
      send_error(res, 404, e.what());
    }
  });

  s.Post(R"(/frames/([^/]+)/corrections)", [this](const httplib::Request & req, httplib::Response & res) {
    const std::string id = req.matches[1];
    label::Correction c;
    try {
      const auto j = json::parse(req.body);
      c.action = label::parse_action(j.at("action").get<std::string>());
      c.cluster_id = j.value("cluster_id", -1);
      if (j.contains("region")) {
        for (const auto & p : j.at("region")) {
          if (!p.is_array() || p.size() != 2) {
            throw DataError("region cells must be [x, y]");
          }
          c.region.push_back({p.at(0).get<int>(), p.at(1).get<int>()});
        }
      }
    } catch (const std::exception & e) {
      send_error(res, 422, e.what());
      return;
    }
    try {
      store_.apply_correction(id, c);
      res.set_content(payload_json(make_payload(store_, id)), "application/json");
    } catch (const NotFoundError & e) {
      send_error(res, 404, e.what());
    } catch (const ConflictError & e) {
      send_error(res, 409, e.what());
    } catch (const BoundsError & e) {
      send_error(res, 422, e.what());
    } catch (const DataError & e) {
      send_error(res, 422, e.what());
    }
  });
}

int Service::start()
{
  if (config_.port == 0) {
    port_ = server_->bind_to_any_port(config_.host);
  } else {
    port_ = server_->bind_to_port(config_.host, config_.port) ? config_.port : -1;
  }
  if (port_ < 0) {
    throw ConfigError("cannot bind " + config_.host + ":" + std::to_string(config_.port));
  }
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port_;
}

void Service::run()
{
  if (!server_->listen(config_.host, config_.port)) {
    throw ConfigError("cannot serve on " + config_.host + ":" + std::to_string(config_.port));
  }
}

void Service::stop()
{
  if (server_) {
    server_->stop();
  }
  if (thread_.joinable()) {
    thread_.join();
  }
}

}  // namespace dogseg::service
