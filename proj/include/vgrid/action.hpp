#pragma once

#include <cstdint>
#include <vector>

#include "vgrid/errors.hpp"

namespace vgrid {

/// On-off capacitor commitment. Bit k of the index is capacitor k, so the
/// index runs over [0, 2^{N_a}) and enumerates the whole action space.
struct Action {
  std::vector<std::uint8_t> y;

  Action() = default;
  explicit Action(std::vector<std::uint8_t> bits) : y(std::move(bits)) {}

  static Action all_off(int n_caps) {
    return Action(std::vector<std::uint8_t>(n_caps, 0));
  }

  static Action from_index(int index, int n_caps) {
    if (n_caps < 0 || n_caps >= 31)
      throw ValidationError("action: capacitor count out of range");
    if (index < 0 || index >= (1 << n_caps))
      throw ValidationError("action: index out of range");
    Action a;
    a.y.resize(n_caps);
    for (int k = 0; k < n_caps; ++k) a.y[k] = (index >> k) & 1;
    return a;
  }

  int index() const {
    int idx = 0;
    for (size_t k = 0; k < y.size(); ++k)
      if (y[k]) idx |= 1 << k;
    return idx;
  }

  int size() const { return static_cast<int>(y.size()); }

  bool operator==(const Action& other) const { return y == other.y; }
};

inline int action_space_size(int n_caps) {
  if (n_caps < 0 || n_caps >= 31)
    throw ValidationError("action: capacitor count out of range");
  return 1 << n_caps;
}

}  // namespace vgrid
