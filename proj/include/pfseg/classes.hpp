#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "pfseg/tensor.hpp"

namespace pfseg {

using Rgb = std::array<std::uint8_t, 3>;

enum class ClassGroup { Static, Dynamic };

inline std::string_view group_name(ClassGroup g) { return g == ClassGroup::Static ? "static" : "dynamic"; }

/// Colour of void / unlabeled pixels in label images.
inline constexpr Rgb kVoidColor{0, 0, 0};

struct ClassTable {
  std::vector<std::string> names;
  std::vector<Rgb> palette;
  std::vector<ClassGroup> groups;

  std::size_t size() const { return names.size(); }

  void validate() const {
    if (names.size() != palette.size() || names.size() != groups.size())
      throw std::invalid_argument("class table: names, palette and partition differ in length");
    if (std::set<std::string>(names.begin(), names.end()).size() != names.size())
      throw std::invalid_argument("class table: duplicate class name");
    if (std::set<Rgb>(palette.begin(), palette.end()).size() != palette.size())
      throw std::invalid_argument("class table: duplicate palette colour");
  }

  std::size_t index_of(std::string_view name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return i;
    throw std::out_of_range("class table has no class '" + std::string(name) + "'");
  }

  ClassGroup group(std::size_t cls) const { return groups.at(cls); }
  ClassGroup group(std::string_view name) const { return groups[index_of(name)]; }

  std::optional<std::size_t> index_of_color(const Rgb& c) const {
    for (std::size_t i = 0; i < palette.size(); ++i)
      if (palette[i] == c) return i;
    return std::nullopt;
  }

  /// Label value -> colour; void and unknown values map to kVoidColor.
  Rgb color_of(std::int32_t label) const {
    if (label < 0 || static_cast<std::size_t>(label) >= palette.size()) return kVoidColor;
    return palette[static_cast<std::size_t>(label)];
  }
};

/// The 11-class CamVid evaluation set with its customary palette.
inline ClassTable default_class_table() {
  using G = ClassGroup;
  ClassTable t{
      {"sky", "building", "pole", "road", "sidewalk", "tree", "sign", "fence", "car", "pedestrian", "bicyclist"},
      {Rgb{128, 128, 128}, Rgb{128, 0, 0}, Rgb{192, 192, 128}, Rgb{128, 64, 128}, Rgb{60, 40, 222},
       Rgb{128, 128, 0}, Rgb{192, 128, 128}, Rgb{64, 64, 128}, Rgb{64, 0, 128}, Rgb{64, 64, 0}, Rgb{0, 128, 192}},
      {G::Static, G::Static, G::Static, G::Static, G::Static, G::Static, G::Static, G::Static, G::Dynamic,
       G::Dynamic, G::Dynamic}};
  t.validate();
  return t;
}

}  // namespace pfseg
