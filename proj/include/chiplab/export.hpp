#pragma once

// Artifact serialisation: CSV with fixed number formatting, 16-bit grayscale
// PNG, and SHA-256 digests for manifests.

#include <chiplab/detection.hpp>
#include <chiplab/errors.hpp>
#include <chiplab/optics.hpp>
#include <chiplab/pad_source.hpp>
#include <chiplab/timing.hpp>

#include <png.h>
#include <sodium.h>

#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace chiplab {

/// Locale-independent, platform-stable number formatting.
inline std::string fmt(double v) {
  if (v == 0) return "0";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline std::string sha256_hex(std::string_view bytes) {
  ensure_sodium();
  unsigned char out[crypto_hash_sha256_BYTES];
  crypto_hash_sha256(out, reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size());
  static constexpr char hex[] = "0123456789abcdef";
  std::string s;
  for (unsigned char c : out) {
    s += hex[c >> 4];
    s += hex[c & 15];
  }
  return s;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("io_error", "cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& p, std::string_view bytes) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("io_error", "cannot write " + p.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("io_error", "short write to " + p.string());
}

inline std::string map_csv(const OpticalMap& m) {
  std::string s = "# chiplab optical map\n";
  s += "# kind=" + std::string(to_string(m.kind)) + "\n";
  s += "# region_um=" + fmt(m.region.x0) + "," + fmt(m.region.y0) + "," + fmt(m.region.x1) + "," + fmt(m.region.y1) + "\n";
  s += "# pitch_um=" + fmt(m.pitch_um) + "\n";
  s += "# cols=" + std::to_string(m.cols) + " rows=" + std::to_string(m.rows) + "\n";
  s += "# lens=" + std::string(lens_spec(m.lens).name) + "\n";
  if (m.kind == MapKind::emission) s += "# exposure_s=" + fmt(m.exposure_s) + "\n";
  else s += "# dwell_s=" + fmt(m.dwell_s) + " target_hz=" + fmt(m.target_hz) + " power_pct=" + fmt(m.power_pct) + "\n";
  for (int j = 0; j < m.rows; ++j) {
    for (int i = 0; i < m.cols; ++i) {
      if (i) s += ',';
      s += fmt(m.at(i, j));
    }
    s += '\n';
  }
  return s;
}

inline std::string trace_csv(const EopTrace& t) {
  std::string s = "time_s,value\n";
  for (std::size_t k = 0; k < t.samples.size(); ++k) s += fmt(t.time_at(k)) + "," + fmt(t.samples[k]) + "\n";
  return s;
}

inline std::string series_csv(const SensorSeries& s, bool with_moving_average = true) {
  std::string out = with_moving_average ? "t_s,reading,laser_on,power_pct,moving_avg_2s\n" : "t_s,reading,laser_on,power_pct\n";
  std::vector<double> ma;
  if (with_moving_average) ma = moving_average(s, 2.0);
  for (std::size_t i = 0; i < s.size(); ++i) {
    out += fmt(s.t_s[i]) + "," + fmt(s.readings[i]) + "," + (s.laser_on[i] ? "1" : "0") + "," + fmt(s.power_pct[i]);
    if (with_moving_average) out += "," + fmt(ma[i]);
    out += '\n';
  }
  return out;
}

inline std::string alarms_csv(const DetectionReport& r) {
  std::string s = "index,t_s,statistic,direction\n";
  for (const auto& a : r.alarms)
    s += std::to_string(a.index) + "," + fmt(a.t_s) + "," + fmt(a.statistic) + "," + std::to_string(a.direction) + "\n";
  return s;
}

inline std::string detection_summary(const DetectionReport& r) {
  std::string s;
  s += "baseline " + fmt(r.baseline) + "\n";
  s += "alarms " + std::to_string(r.alarms.size()) + "\n";
  s += "false_alarms " + std::to_string(r.false_alarms) + "\n";
  s += "false_alarms_per_hour " + fmt(r.false_alarms_per_hour) + "\n";
  for (std::size_t i = 0; i < r.onset_s.size(); ++i)
    s += "onset " + fmt(r.onset_s[i]) + " latency_s " + (r.latency_s[i] >= 0 ? fmt(r.latency_s[i]) : "missed") + "\n";
  for (const auto& [p, ps] : r.per_power)
    s += "power " + fmt(p) + " onsets " + std::to_string(ps.onsets) + " detected " + std::to_string(ps.detected) +
         " median_latency_s " + fmt(ps.median_latency_s) + "\n";
  return s;
}

inline std::string roc_csv(const RocCurve& c) {
  std::string s = "threshold,fpr,tpr\n";
  for (const auto& p : c.points) s += fmt(p.threshold) + "," + fmt(p.fpr) + "," + fmt(p.tpr) + "\n";
  return s;
}

namespace detail {

// Top image row first, two big-endian bytes per pixel.
inline std::string encode_png16(int cols, int rows, const std::vector<unsigned char>& pixels) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error("io_error", "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error("io_error", "png_create_info_struct failed");
  }
  std::string out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("io_error", "png encoding failed");
  }
  png_set_write_fn(
      png, &out,
      [](png_structp p, png_bytep data, png_size_t len) {
        static_cast<std::string*>(png_get_io_ptr(p))->append(reinterpret_cast<const char*>(data), len);
      },
      nullptr);
  png_set_IHDR(png, info, static_cast<png_uint_32>(cols), static_cast<png_uint_32>(rows), 16, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int j = 0; j < rows; ++j)
    png_write_row(png, const_cast<png_bytep>(pixels.data()) + static_cast<std::size_t>(j) * cols * 2);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

}  // namespace detail

/// 16-bit grayscale PNG of a map, min-max normalised; row 0 of the map
/// (smallest y) is the bottom image row.
inline std::string map_png(const OpticalMap& m) {
  const auto [mn, mx] = std::minmax_element(m.values.begin(), m.values.end());
  const double lo = m.values.empty() ? 0.0 : *mn;
  const double span = m.values.empty() || !(*mx > *mn) ? 1.0 : *mx - *mn;
  std::vector<unsigned char> pixels(static_cast<std::size_t>(m.cols) * m.rows * 2);
  std::size_t k = 0;
  for (int j = m.rows - 1; j >= 0; --j) {
    for (int i = 0; i < m.cols; ++i) {
      const auto v = static_cast<unsigned>(std::lround((m.at(i, j) - lo) / span * 65535.0));
      pixels[k++] = static_cast<unsigned char>(v >> 8);
      pixels[k++] = static_cast<unsigned char>(v & 0xFF);
    }
  }
  return detail::encode_png16(m.cols, m.rows, pixels);
}

/// Binary grid payload: 4-byte little-endian header length, JSON header,
/// then cols*rows little-endian float32 values, row-major from row 0.
inline std::string map_binary(const OpticalMap& m, const std::string& json_header) {
  std::string out;
  const auto n = static_cast<std::uint32_t>(json_header.size());
  for (int i = 0; i < 4; ++i) out += static_cast<char>((n >> (8 * i)) & 0xFF);
  out += json_header;
  for (double v : m.values) {
    const float f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    for (int i = 0; i < 4; ++i) out += static_cast<char>((bits >> (8 * i)) & 0xFF);
  }
  return out;
}

}  // namespace chiplab
