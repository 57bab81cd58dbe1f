#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

#include "encwatt/error.hpp"

namespace encwatt {

// x265 speed presets, fastest first.
enum class Preset { ultrafast, superfast, veryfast, faster, fast, medium, slow, slower, veryslow };

inline constexpr std::array<Preset, 9> kAllPresets = {
    Preset::ultrafast, Preset::superfast, Preset::veryfast, Preset::faster,  Preset::fast,
    Preset::medium,    Preset::slow,      Preset::slower,   Preset::veryslow};

inline constexpr std::string_view to_string(Preset p) {
  constexpr std::array<std::string_view, 9> names = {
      "ultrafast", "superfast", "veryfast", "faster", "fast",
      "medium",    "slow",      "slower",   "veryslow"};
  return names[static_cast<std::size_t>(p)];
}

inline std::optional<Preset> try_parse_preset(std::string_view s) {
  for (auto p : kAllPresets)
    if (to_string(p) == s) return p;
  return std::nullopt;
}

inline Preset parse_preset(std::string_view s) {
  if (auto p = try_parse_preset(s)) return *p;
  throw DomainError("unknown preset '" + std::string(s) + "'");
}

}  // namespace encwatt
