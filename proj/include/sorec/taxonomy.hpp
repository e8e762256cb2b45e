// Object and affordance label sets with the valid-combination matrix.
#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace sorec {

class Taxonomy {
 public:
  static constexpr std::size_t kObjects = 14;
  static constexpr std::size_t kAffordances = 13;

  static constexpr std::array<std::string_view, kObjects> objects{
      "Ball", "Book", "Bottle", "Box",   "Brush",   "Can",        "Cup",
      "Hammer", "Key", "Knife", "Pen", "Pitcher", "Smartphone", "Sponge"};
  static constexpr std::array<std::string_view, kAffordances> affordances{
      "Grasp", "Lift", "Push", "Rotate", "Open", "Hammer", "Cut", "Pour", "Squeeze", "Unlock", "Paint", "Write", "Type"};

  // Rows follow `objects`, columns follow `affordances`.
  static constexpr std::array<std::array<bool, kAffordances>, kObjects> valid{{
      //  Gr Li Pu Ro Op Ha Cu Po Sq Un Pa Wr Ty
      {1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0},  // Ball
      {1, 1, 1, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0},  // Book
      {1, 1, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0},  // Bottle
      {1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0},  // Box
      {1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0},  // Brush
      {1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0},  // Can
      {1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0},  // Cup
      {1, 1, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0},  // Hammer
      {1, 1, 0, 0, 0, 0, 1, 0, 0, 1, 0, 0, 0},  // Key
      {1, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0},  // Knife
      {1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 0},  // Pen
      {1, 1, 1, 1, 0, 0, 0, 1, 0, 0, 0, 0, 0},  // Pitcher
      {1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1},  // Smartphone
      {1, 1, 1, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0},  // Sponge
  }};

  static bool is_valid(std::size_t object, std::size_t affordance) {
    return object < kObjects && affordance < kAffordances && valid[object][affordance];
  }

  static std::optional<std::size_t> object_index(std::string_view name) { return find(objects, name); }
  static std::optional<std::size_t> affordance_index(std::string_view name) { return find(affordances, name); }

  /// All valid (object, affordance) pairs, object-major.
  static std::vector<std::pair<std::size_t, std::size_t>> combinations() {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t o = 0; o < kObjects; ++o)
      for (std::size_t a = 0; a < kAffordances; ++a)
        if (valid[o][a]) out.emplace_back(o, a);
    return out;
  }

  static std::size_t row_sum(std::size_t o) {
    std::size_t n = 0;
    for (bool v : valid.at(o)) n += v;
    return n;
  }
  static std::size_t column_sum(std::size_t a) {
    std::size_t n = 0;
    for (const auto& row : valid) n += row.at(a);
    return n;
  }

 private:
  template <std::size_t N>
  static std::optional<std::size_t> find(const std::array<std::string_view, N>& names, std::string_view s) {
    for (std::size_t i = 0; i < N; ++i)
      if (names[i] == s) return i;
    return std::nullopt;
  }
};

}  // namespace sorec
