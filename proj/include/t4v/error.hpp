#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace t4v {

/// Failure categories. The CLI maps these onto its exit-code taxonomy.
enum class Errc {
  dimension,
  rank,
  not_positive_definite,
  degenerate_row,
  manifest,
  format,
  index,
  insufficient_data,
  normalization,
  numeric,
  spec,
  alignment,
  sampler,
  usage,
  io,
};

std::string_view to_string(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, std::string_view module, const std::string& message)
      : std::runtime_error(std::string(module) + ": " + std::string(to_string(code)) + " error: " +
                           message),
        code_(code),
        module_(module) {}

  Errc code() const noexcept { return code_; }
  const std::string& module() const noexcept { return module_; }

 private:
  Errc code_;
  std::string module_;
};

[[noreturn]] inline void fail(Errc code, std::string_view module, const std::string& message) {
  throw Error(code, module, message);
}

inline std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::dimension: return "dimension";
    case Errc::rank: return "rank";
    case Errc::not_positive_definite: return "not-positive-definite";
    case Errc::degenerate_row: return "degenerate-row";
    case Errc::manifest: return "manifest";
    case Errc::format: return "format";
    case Errc::index: return "index";
    case Errc::insufficient_data: return "insufficient-data";
    case Errc::normalization: return "normalization";
    case Errc::numeric: return "numeric";
    case Errc::spec: return "spec";
    case Errc::alignment: return "alignment";
    case Errc::sampler: return "sampler";
    case Errc::usage: return "usage";
    case Errc::io: return "io";
  }
  return "unknown";
}

}  // namespace t4v
