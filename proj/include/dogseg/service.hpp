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

#ifndef DOGSEG__SERVICE_HPP_
#define DOGSEG__SERVICE_HPP_

#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "dogseg/labeler.hpp"

namespace httplib
{
class Server;
}

namespace dogseg::service
{

/// Everything the annotation UI needs to draw and correct one frame.
/// Rasters travel as base64 of little-endian f32 (occupancy, velocities) or u8 (labels).
struct FramePayload
{
  label::FrameRecord record;
  int side = 0;
  std::vector<float> occupancy;
  std::vector<float> vx;
  std::vector<float> vy;
  std::vector<std::uint8_t> labels;
  std::vector<cluster::LabeledCluster> clusters;
  int reviewed = 0;  // clusters no longer in review state auto
};

FramePayload make_payload(const label::LabelStore & store, const std::string & id);
std::string payload_json(const FramePayload & payload);
FramePayload parse_payload(const std::string & text);

std::string base64_encode(const std::uint8_t * data, std::size_t size);
std::vector<std::uint8_t> base64_decode(const std::string & text);

struct ServiceConfig
{
  std::string host = "127.0.0.1";
  int port = 8765;  // 0 = any free port
  std::string cors_origin = "*";
  int page_limit = 100;
  std::string static_dir;  // served at / when set (annotation UI build)
};

// GET  /frames?split=&offset=&limit=     frame index with review progress
// GET  /frames/{id}                      FramePayload
// POST /frames/{id}/corrections          {"cluster_id", "action", "region"} -> FramePayload
// Error bodies are {"error": message} with 400, 404, 409 or 422.
class Service
{
public:
  Service(label::LabelStore & store, ServiceConfig config);
  ~Service();
  Service(const Service &) = delete;
  Service & operator=(const Service &) = delete;

  /// Binds and serves on a background thread; returns the bound port.
  int start();
  /// Binds and serves on the calling thread until stop().
  void run();
  void stop();
  int port() const { return port_; }

private:
  void routes();

  label::LabelStore & store_;
  ServiceConfig config_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace dogseg::service

#endif  // DOGSEG__SERVICE_HPP_
