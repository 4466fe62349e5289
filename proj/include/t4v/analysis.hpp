#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "t4v/classifier.hpp"
#include "t4v/trainer.hpp"

namespace t4v {

/// c x c cosine similarities between classifier rows.
struct CorrelationMap {
  std::vector<std::string> class_names;
  Matrix matrix;
  InitKind source = InitKind::RandomNormal;
};

CorrelationMap correlation_map(const ClassifierMatrix& w);

/// Colour of value v after clipping to [lo, hi]: blue (0,0,255) at lo, white at the
/// midpoint, red (255,0,0) at hi, linear in between, rounded to the nearest byte.
std::array<std::uint8_t, 3> heat_color(double v, double lo, double hi);

/// Header "class,<names...>", then one row per class: name followed by %.17g values.
std::string map_csv(const CorrelationMap& m);
/// Binary P6 image, one pixel per matrix entry, row i = class i.
std::vector<unsigned char> map_ppm(const CorrelationMap& m, double clip_lo, double clip_hi);

struct ExportedMap {
  std::filesystem::path csv;
  std::filesystem::path ppm;
};

/// Writes <stem>.csv and <stem>.ppm.
ExportedMap export_map(const CorrelationMap& m, double clip_lo, double clip_hi, const std::filesystem::path& stem);
CorrelationMap read_map_csv(const std::filesystem::path& path);

/// Column "epoch" then one train-loss column per run.
std::string convergence_csv(std::span<const RunLog> logs, std::span<const std::string> names = {});
void convergence_curves(std::span<const RunLog> logs, const std::filesystem::path& path,
                        std::span<const std::string> names = {});

}  // namespace t4v
