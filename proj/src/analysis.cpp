#include "t4v/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace t4v {

namespace {

constexpr const char* kModule = "analysis";

std::string g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void check_name(const std::string& name) {
  if (name.find_first_of(",\n\r") != std::string::npos) {
    fail(Errc::format, kModule, "class name '" + name + "' cannot be written to CSV");
  }
}

void write_text(const std::filesystem::path& path, const std::string& text, bool binary = false) {
  std::ofstream out(path, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
  out << text;
  if (!out) fail(Errc::io, kModule, "cannot write " + path.string());
}

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

CorrelationMap correlation_map(const ClassifierMatrix& w) {
  CorrelationMap m;
  m.class_names = w.class_names;
  if (m.class_names.empty()) {
    for (Eigen::Index k = 0; k < w.classes(); ++k) m.class_names.push_back(std::to_string(k));
  }
  m.matrix = cosine_rows(w.weights, w.weights);
  m.source = w.init_kind;
  return m;
}

std::array<std::uint8_t, 3> heat_color(double v, double lo, double hi) {
  if (!(lo < hi)) fail(Errc::spec, kModule, "clip range needs lo < hi");
  const double t = (std::clamp(v, lo, hi) - lo) / (hi - lo);
  auto byte = [](double x) { return static_cast<std::uint8_t>(std::lround(255.0 * x)); };
  if (t < 0.5) {
    const double s = 2.0 * t;
    return {byte(s), byte(s), 255};
  }
  const double s = 2.0 * (t - 0.5);
  return {255, byte(1.0 - s), byte(1.0 - s)};
}

std::string map_csv(const CorrelationMap& m) {
  const auto c = static_cast<std::size_t>(m.matrix.rows());
  if (m.class_names.size() != c || m.matrix.cols() != m.matrix.rows()) {
    fail(Errc::dimension, kModule, "correlation map must be square with one name per class");
  }
  std::string out = "class";
  for (const auto& n : m.class_names) {
    check_name(n);
    out += "," + n;
  }
  out += "\n";
  for (std::size_t i = 0; i < c; ++i) {
    out += m.class_names[i];
    for (std::size_t j = 0; j < c; ++j) out += "," + g17(m.matrix(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
    out += "\n";
  }
  return out;
}

std::vector<unsigned char> map_ppm(const CorrelationMap& m, double clip_lo, double clip_hi) {
  if (!(clip_lo < clip_hi)) fail(Errc::spec, kModule, "clip range needs lo < hi");
  const std::string header = "P6\n" + std::to_string(m.matrix.cols()) + " " + std::to_string(m.matrix.rows()) + "\n255\n";
  std::vector<unsigned char> out(header.begin(), header.end());
  for (Eigen::Index i = 0; i < m.matrix.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.matrix.cols(); ++j) {
      const auto rgb = heat_color(m.matrix(i, j), clip_lo, clip_hi);
      out.insert(out.end(), rgb.begin(), rgb.end());
    }
  }
  return out;
}

ExportedMap export_map(const CorrelationMap& m, double clip_lo, double clip_hi, const std::filesystem::path& stem) {
  ExportedMap out{stem, stem};
  out.csv += ".csv";
  out.ppm += ".ppm";
  const auto image = map_ppm(m, clip_lo, clip_hi);
  write_text(out.csv, map_csv(m));
  write_text(out.ppm, std::string(image.begin(), image.end()), true);
  return out;
}

CorrelationMap read_map_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::io, kModule, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) fail(Errc::format, kModule, path.string() + ": empty file");
  auto header = split_commas(line);
  if (header.empty() || header[0] != "class") fail(Errc::format, kModule, path.string() + ": missing 'class' header");
  CorrelationMap m;
  m.class_names.assign(header.begin() + 1, header.end());
  const auto c = static_cast<Eigen::Index>(m.class_names.size());
  m.matrix.resize(c, c);
  for (Eigen::Index i = 0; i < c; ++i) {
    if (!std::getline(in, line)) fail(Errc::format, kModule, path.string() + ": missing row " + std::to_string(i));
    const auto cells = split_commas(line);
    if (static_cast<Eigen::Index>(cells.size()) != c + 1) {
      fail(Errc::format, kModule, path.string() + ": row " + std::to_string(i) + " has the wrong cell count");
    }
    for (Eigen::Index j = 0; j < c; ++j) {
      const std::string& cell = cells[static_cast<std::size_t>(j + 1)];
      char* end = nullptr;
      m.matrix(i, j) = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str() || *end != '\0') fail(Errc::format, kModule, path.string() + ": bad number '" + cell + "'");
    }
  }
  return m;
}

std::string convergence_csv(std::span<const RunLog> logs, std::span<const std::string> names) {
  if (logs.empty()) fail(Errc::spec, kModule, "no run logs given");
  if (!names.empty() && names.size() != logs.size()) fail(Errc::alignment, kModule, "one name per run log required");
  const auto& axis = logs.front().epochs;
  for (std::size_t r = 1; r < logs.size(); ++r) {
    const auto& e = logs[r].epochs;
    bool same = e.size() == axis.size();
    for (std::size_t i = 0; same && i < e.size(); ++i) same = e[i].epoch == axis[i].epoch;
    if (!same) {
      fail(Errc::alignment, kModule, "run " + std::to_string(r) + " has " + std::to_string(e.size()) + " epochs, run 0 has " +
                                         std::to_string(axis.size()));
    }
  }
  std::string out = "epoch";
  for (std::size_t r = 0; r < logs.size(); ++r) {
    const std::string name = names.empty() ? "run" + std::to_string(r) : names[r];
    check_name(name);
    out += "," + name;
  }
  out += "\n";
  for (std::size_t i = 0; i < axis.size(); ++i) {
    out += std::to_string(axis[i].epoch);
    for (const auto& log : logs) out += "," + g17(log.epochs[i].train_loss);
    out += "\n";
  }
  return out;
}

void convergence_curves(std::span<const RunLog> logs, const std::filesystem::path& path,
                        std::span<const std::string> names) {
  write_text(path, convergence_csv(logs, names));
}

}  // namespace t4v
