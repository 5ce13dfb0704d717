#pragma once

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "weakloc/regions.hpp"
#include "weakloc/tensor.hpp"

namespace weakloc {

// ---- PGM (binary P5, 8-bit) ----

inline void write_pgm(const std::string& path, int h, int w, const double* data) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw data_error("pgm: cannot open " + path + " for writing");
  os << "P5\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> row(std::size_t(h) * w);
  for (std::size_t i = 0; i < row.size(); ++i) {
    const double v = std::clamp(data[i], 0.0, 1.0);
    row[i] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  os.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size()));
  if (!os) throw data_error("pgm: write failed for " + path);
}

// Values scaled to [0,1]; returns a [1,H,W] tensor.
inline Tensor read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw data_error("pgm: cannot open " + path);
  auto next_token = [&]() -> std::string {
    std::string tok;
    int c;
    while ((c = is.get()) != EOF) {
      if (c == '#') {  // comment to end of line
        while ((c = is.get()) != EOF && c != '\n') {}
        continue;
      }
      if (std::isspace(c)) {
        if (!tok.empty()) break;
        continue;
      }
      tok.push_back(char(c));
    }
    return tok;
  };
  if (next_token() != "P5") throw data_error("pgm: " + path + " is not binary P5");
  const int w = std::atoi(next_token().c_str());
  const int h = std::atoi(next_token().c_str());
  const int maxval = std::atoi(next_token().c_str());
  if (w < 1 || h < 1 || maxval < 1 || maxval > 255)
    throw data_error("pgm: bad header in " + path);
  std::vector<unsigned char> buf(std::size_t(h) * w);
  is.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
  if (!is) throw data_error("pgm: truncated pixel data in " + path);
  Tensor t({1, h, w});
  for (std::size_t i = 0; i < buf.size(); ++i) t.data[i] = double(buf[i]) / double(maxval);
  return t;
}

// ---- PNG (8-bit grayscale, read-only) ----

inline Tensor read_png_gray(const std::string& path) {
  std::FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw data_error("png: cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw data_error("png: libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw data_error("png: failed to decode " + path);
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);
  if (color != PNG_COLOR_TYPE_GRAY) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw data_error("png: " + path + " is not grayscale");
  }
  if (depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (depth == 16) png_set_strip_16(png);
  png_read_update_info(png, info);
  const int w = int(png_get_image_width(png, info));
  const int h = int(png_get_image_height(png, info));
  std::vector<unsigned char> buf(std::size_t(h) * w);
  std::vector<png_bytep> rows(h);
  for (int r = 0; r < h; ++r) rows[r] = buf.data() + std::size_t(r) * w;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  Tensor t({1, h, w});
  for (std::size_t i = 0; i < buf.size(); ++i) t.data[i] = double(buf[i]) / 255.0;
  return t;
}

// ---- CSV ----

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

struct CsvRow {
  int line = 0;  // 1-based line number in the file
  std::vector<std::string> fields;
};

inline std::vector<CsvRow> read_csv(const std::string& path, bool skip_header = true) {
  std::ifstream is(path);
  if (!is) throw data_error("csv: cannot open " + path);
  std::vector<CsvRow> rows;
  std::string line;
  int n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (line.empty() || (n == 1 && skip_header)) continue;
    rows.push_back(CsvRow{n, split_csv(line)});
  }
  return rows;
}

inline double parse_double(const std::string& s, const std::string& path, int line) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0')
    throw data_error(path + " line " + std::to_string(line) + ": bad number '" + s + "'");
  return v;
}

inline int parse_int(const std::string& s, const std::string& path, int line) {
  char* end = nullptr;
  const long v = std::strtol(s.c_str(), &end, 10);
  if (end == s.c_str() || *end != '\0')
    throw data_error(path + " line " + std::to_string(line) + ": bad integer '" + s + "'");
  return int(v);
}

// Shortest representation that round-trips the double exactly.
inline std::string fmt_double(double v) {
  char buf[40];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) return buf;
  }
  return buf;
}

// ---- prediction / detection files ----

struct DetectionRow {
  std::string id;
  int cls = 0;
  Box box;
  double threshold = 0.0;
};

inline void write_detections_csv(const std::string& path, const std::vector<DetectionRow>& rows) {
  std::ofstream os(path);
  if (!os) throw data_error("cannot open " + path + " for writing");
  os << "id,class,cx,cy,w,h,threshold\n";
  for (const auto& r : rows)
    os << r.id << ',' << r.cls << ',' << fmt_double(r.box.cx) << ',' << fmt_double(r.box.cy) << ','
       << fmt_double(r.box.w) << ',' << fmt_double(r.box.h) << ',' << fmt_double(r.threshold)
       << '\n';
}

inline std::vector<DetectionRow> read_detections_csv(const std::string& path) {
  std::vector<DetectionRow> out;
  for (const auto& row : read_csv(path)) {
    if (row.fields.size() != 7)
      throw data_error(path + " line " + std::to_string(row.line) + ": expected 7 fields");
    DetectionRow r;
    r.id = row.fields[0];
    r.cls = parse_int(row.fields[1], path, row.line);
    r.box.cx = parse_double(row.fields[2], path, row.line);
    r.box.cy = parse_double(row.fields[3], path, row.line);
    r.box.w = parse_double(row.fields[4], path, row.line);
    r.box.h = parse_double(row.fields[5], path, row.line);
    r.threshold = parse_double(row.fields[6], path, row.line);
    out.push_back(std::move(r));
  }
  return out;
}

// Boxes with confidences, the serialized form of refined proposals.
inline void write_proposals_csv(const std::string& path, const std::string& id,
                                const std::vector<RefinedProposal>& props, bool append) {
  std::ofstream os(path, append ? std::ios::app : std::ios::out);
  if (!os) throw data_error("cannot open " + path + " for writing");
  if (!append) os << "id,class,cx,cy,w,h,confidence\n";
  for (const auto& p : props)
    os << id << ',' << p.class_index << ',' << fmt_double(p.box.cx) << ',' << fmt_double(p.box.cy)
       << ',' << fmt_double(p.box.w) << ',' << fmt_double(p.box.h) << ','
       << fmt_double(p.confidence) << '\n';
}

inline void write_scores_csv(const std::string& path,
                             const std::vector<std::pair<std::string, std::vector<double>>>& rows) {
  std::ofstream os(path);
  if (!os) throw data_error("cannot open " + path + " for writing");
  os << "id";
  if (!rows.empty())
    for (std::size_t k = 0; k < rows[0].second.size(); ++k) os << ",score" << k;
  os << '\n';
  for (const auto& [id, scores] : rows) {
    os << id;
    for (double s : scores) os << ',' << fmt_double(s);
    os << '\n';
  }
}

inline std::vector<std::pair<std::string, std::vector<double>>> read_scores_csv(
    const std::string& path) {
  std::vector<std::pair<std::string, std::vector<double>>> out;
  for (const auto& row : read_csv(path)) {
    if (row.fields.size() < 2)
      throw data_error(path + " line " + std::to_string(row.line) + ": expected id and scores");
    std::vector<double> scores;
    for (std::size_t i = 1; i < row.fields.size(); ++i)
      scores.push_back(parse_double(row.fields[i], path, row.line));
    out.emplace_back(row.fields[0], std::move(scores));
  }
  return out;
}

}  // namespace weakloc
