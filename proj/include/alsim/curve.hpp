#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "alsim/common.hpp"
#include "json.hpp"

namespace alsim {

/// Test-set evaluation after one retrain.
struct CurvePoint {
  std::size_t labeled_count = 0;
  double macro_f1 = 0.0;
  std::optional<double> fpr;
  std::optional<double> fnr;
  std::size_t labeled_abuse = 0;  // abusive items among the labeled set

  double abuse_fraction() const {
    return labeled_count == 0 ? 0.0 : double(labeled_abuse) / double(labeled_count);
  }

  bool operator==(const CurvePoint&) const = default;
};

struct LearningCurve {
  std::vector<CurvePoint> points;
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t seed = 0;
  bool failed = false;
  std::string failure_reason;
};

inline nlohmann::json to_json(const CurvePoint& p) {
  nlohmann::json j = {{"labeled_count", p.labeled_count},
                      {"macro_f1", p.macro_f1},
                      {"fpr", nullptr},
                      {"fnr", nullptr},
                      {"labeled_abuse", p.labeled_abuse},
                      {"abuse_fraction", p.abuse_fraction()}};
  if (p.fpr) j["fpr"] = *p.fpr;
  if (p.fnr) j["fnr"] = *p.fnr;
  return j;
}

inline CurvePoint curve_point_from_json(const nlohmann::json& j) {
  CurvePoint p;
  p.labeled_count = j.at("labeled_count").get<std::size_t>();
  p.macro_f1 = j.at("macro_f1").get<double>();
  if (j.contains("fpr") && !j["fpr"].is_null()) p.fpr = j["fpr"].get<double>();
  if (j.contains("fnr") && !j["fnr"].is_null()) p.fnr = j["fnr"].get<double>();
  p.labeled_abuse = j.at("labeled_abuse").get<std::size_t>();
  return p;
}

/// One JSON object per point, newline-terminated.
inline std::string curve_to_jsonl(const LearningCurve& curve) {
  std::string out;
  for (const auto& p : curve.points) {
    out += to_json(p).dump();
    out += '\n';
  }
  return out;
}

inline std::vector<CurvePoint> curve_points_from_jsonl(std::istream& in) {
  std::vector<CurvePoint> pts;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) pts.push_back(curve_point_from_json(nlohmann::json::parse(line)));
  return pts;
}

inline void write_text_file(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace alsim
