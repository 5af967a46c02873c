#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <fstream>
#include <sstream>
#include <string>

#include "rvo/error.hpp"
#include "rvo/worldgen/scenario.hpp"

namespace rvo {

namespace detail {

template <class Enum, std::size_t N>
Enum parse_enum(const std::string& text, const std::array<Enum, N>& values, const char* field) {
  for (Enum v : values)
    if (to_string(v) == text) return v;
  throw Error(ErrorCode::InvalidScenario, std::string(field) + ": unknown value '" + text + "'");
}

}  // namespace detail

inline nlohmann::json scenario_to_json(const Scenario& s) {
  nlohmann::json j;
  j["id"] = s.id;
  j["seed"] = s.seed;
  j["trajectory"] = to_string(s.trajectory);
  j["frames"] = s.frames;
  j["fps"] = s.fps;
  j["speed"] = s.speed;
  j["landmark_density"] = s.landmark_density;
  j["pixel_noise"] = s.pixel_noise;
  j["outlier_rate"] = s.outlier_rate;
  j["descriptor_flip_rate"] = s.descriptor_flip_rate;
  j["intrinsics"] = {{"focal", s.intrinsics.focal}, {"cx", s.intrinsics.cx}, {"cy", s.intrinsics.cy},
                     {"width", s.intrinsics.width}, {"height", s.intrinsics.height}};
  j["min_depth"] = s.min_depth;
  j["max_range"] = s.max_range;
  j["lateral_margin"] = s.lateral_margin;
  j["road_half_width"] = s.road_half_width;
  j["landmark_min_height"] = s.landmark_min_height;
  j["landmark_max_height"] = s.landmark_max_height;
  j["events"] = nlohmann::json::array();
  for (const auto& e : s.events)
    j["events"].push_back({{"start", e.start}, {"end", e.end}, {"kind", to_string(e.kind)}, {"magnitude", e.magnitude}});
  return j;
}

/// Missing fields keep their defaults; unknown fields are rejected so typos
/// do not go unnoticed. The result is validated.
inline Scenario scenario_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidScenario, "scenario: expected a JSON object");
  Scenario s;
  auto get = [&](const nlohmann::json& obj, const char* field, auto& out) {
    if (!obj.contains(field)) return;
    try {
      obj.at(field).get_to(out);
    } catch (const nlohmann::json::exception&) {
      throw Error(ErrorCode::InvalidScenario, std::string(field) + ": wrong type");
    }
  };
  static const char* known[] = {"id",        "seed",           "trajectory",       "frames",
                                "fps",       "speed",          "landmark_density", "pixel_noise",
                                "outlier_rate", "descriptor_flip_rate", "intrinsics", "min_depth",
                                "max_range", "lateral_margin", "road_half_width",  "landmark_min_height",
                                "landmark_max_height", "events"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(std::begin(known), std::end(known), key) == std::end(known))
      throw Error(ErrorCode::InvalidScenario, key + ": unknown field");
  }
  get(j, "id", s.id);
  get(j, "seed", s.seed);
  if (j.contains("trajectory")) {
    std::string t;
    get(j, "trajectory", t);
    s.trajectory = detail::parse_enum(t, std::array{TrajectoryKind::straight, TrajectoryKind::loop,
                                                    TrajectoryKind::figure_eight, TrajectoryKind::kitti_like},
                                      "trajectory");
  }
  get(j, "frames", s.frames);
  get(j, "fps", s.fps);
  get(j, "speed", s.speed);
  get(j, "landmark_density", s.landmark_density);
  get(j, "pixel_noise", s.pixel_noise);
  get(j, "outlier_rate", s.outlier_rate);
  get(j, "descriptor_flip_rate", s.descriptor_flip_rate);
  if (j.contains("intrinsics")) {
    const auto& k = j.at("intrinsics");
    if (!k.is_object()) throw Error(ErrorCode::InvalidScenario, "intrinsics: expected an object");
    get(k, "focal", s.intrinsics.focal);
    get(k, "cx", s.intrinsics.cx);
    get(k, "cy", s.intrinsics.cy);
    get(k, "width", s.intrinsics.width);
    get(k, "height", s.intrinsics.height);
  }
  get(j, "min_depth", s.min_depth);
  get(j, "max_range", s.max_range);
  get(j, "lateral_margin", s.lateral_margin);
  get(j, "road_half_width", s.road_half_width);
  get(j, "landmark_min_height", s.landmark_min_height);
  get(j, "landmark_max_height", s.landmark_max_height);
  if (j.contains("events")) {
    const auto& ev = j.at("events");
    if (!ev.is_array()) throw Error(ErrorCode::InvalidScenario, "events: expected an array");
    for (const auto& e : ev) {
      FailureEvent f;
      get(e, "start", f.start);
      get(e, "end", f.end);
      get(e, "magnitude", f.magnitude);
      std::string kind = "texture_dropout";
      get(e, "kind", kind);
      f.kind = detail::parse_enum(
          kind, std::array{EventKind::texture_dropout, EventKind::noise_burst, EventKind::pose_jitter}, "events.kind");
      s.events.push_back(f);
    }
  }
  validate(s);
  return s;
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::InvalidArgument, "cannot open scenario file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::ParseError, path + ": " + e.what());
  }
  return scenario_from_json(j);
}

inline void save_scenario(const Scenario& s, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::InvalidArgument, "cannot write scenario file " + path);
  out << scenario_to_json(s).dump(2) << "\n";
}

}  // namespace rvo
