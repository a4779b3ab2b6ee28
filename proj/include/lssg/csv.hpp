#pragma once

// Detection and ground-truth CSV files.
//
//   detections:   scan_id,cz,cy,cx,d,h,w,score
//   ground truth: scan_id,cz,cy,cx,d,h,w
//
// A ground-truth row whose geometry fields are all empty ("scan_7,,,,,,")
// declares a scan without nodules, so it still counts toward FP per scan.
// Numbers are written in shortest round-trip form.

#include <charconv>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "lssg/detect.hpp"
#include "lssg/io.hpp"

namespace lssg {

using DetectionsByScan = std::map<std::string, std::vector<Detection>>;
using GroundTruthByScan = std::map<std::string, std::vector<Box3D>>;

inline constexpr const char* kDetectionHeader = "scan_id,cz,cy,cx,d,h,w,score";
inline constexpr const char* kGroundTruthHeader = "scan_id,cz,cy,cx,d,h,w";

inline std::string format_number(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_number(const std::string& s, std::size_t line_no) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw InputError("csv line " + std::to_string(line_no) + ": bad number '" + s + "'");
  }
  return v;
}

inline std::vector<std::vector<std::string>> read_rows(const std::string& text, const std::string& header,
                                                       std::size_t fields) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw InputError("csv: empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != header) throw InputError("csv: expected header '" + header + "'");
  std::vector<std::vector<std::string>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() != fields) {
      throw InputError("csv line " + std::to_string(line_no) + ": expected " + std::to_string(fields) +
                       " fields");
    }
    rows.push_back(std::move(f));
  }
  return rows;
}

inline Box3D parse_box(const std::vector<std::string>& f, std::size_t line_no) {
  Box3D b{parse_number(f[1], line_no), parse_number(f[2], line_no), parse_number(f[3], line_no),
          parse_number(f[4], line_no), parse_number(f[5], line_no), parse_number(f[6], line_no)};
  if (!b.valid()) throw InputError("csv line " + std::to_string(line_no) + ": invalid box");
  return b;
}

inline void append_box(std::string& out, const std::string& scan, const Box3D& b) {
  out += scan;
  for (double v : {b.cz, b.cy, b.cx, b.d, b.h, b.w}) {
    out += ',';
    out += format_number(v);
  }
}

}  // namespace detail

inline std::string detections_to_csv(const DetectionsByScan& dets) {
  std::string out = std::string(kDetectionHeader) + "\n";
  for (const auto& [scan, list] : dets) {
    for (const auto& d : list) {
      detail::append_box(out, scan, d.box);
      out += ',' + format_number(d.score) + '\n';
    }
  }
  return out;
}

inline DetectionsByScan detections_from_csv(const std::string& text) {
  DetectionsByScan out;
  std::size_t line_no = 1;
  for (const auto& f : detail::read_rows(text, kDetectionHeader, 8)) {
    ++line_no;
    Detection d{detail::parse_box(f, line_no), detail::parse_number(f[7], line_no)};
    if (!(d.score >= 0 && d.score <= 1)) throw InputError("csv: score outside [0,1]");
    out[f[0]].push_back(d);
  }
  return out;
}

inline std::string ground_truth_to_csv(const GroundTruthByScan& gts) {
  std::string out = std::string(kGroundTruthHeader) + "\n";
  for (const auto& [scan, list] : gts) {
    if (list.empty()) out += scan + ",,,,,,\n";
    for (const auto& b : list) {
      detail::append_box(out, scan, b);
      out += '\n';
    }
  }
  return out;
}

inline GroundTruthByScan ground_truth_from_csv(const std::string& text) {
  GroundTruthByScan out;
  std::size_t line_no = 1;
  for (const auto& f : detail::read_rows(text, kGroundTruthHeader, 7)) {
    ++line_no;
    auto& list = out[f[0]];
    bool empty = true;
    for (std::size_t i = 1; i < 7; ++i) empty = empty && f[i].empty();
    if (!empty) list.push_back(detail::parse_box(f, line_no));
  }
  return out;
}

inline DetectionsByScan read_detections(const std::filesystem::path& p) {
  return detections_from_csv(read_file(p));
}
inline GroundTruthByScan read_ground_truth(const std::filesystem::path& p) {
  return ground_truth_from_csv(read_file(p));
}

}  // namespace lssg
