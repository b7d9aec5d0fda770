// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

#include "siaf/error.hpp"
#include "siaf/tensor.hpp"

namespace siaf {

/// Leaky integrate-and-fire parameters in the layer's accumulator scale.
/// Leak is an arithmetic right shift (leak_shift = 2 is lambda = 0.25);
/// firing resets the membrane to zero.
struct LifParams {
  std::int32_t threshold = 1;
  std::uint32_t leak_shift = 2;

  void validate() const {
    if (threshold <= 0) throw ConfigError("LIF threshold must be > 0, got " + std::to_string(threshold));
    if (leak_shift > 31) throw ConfigError("LIF leak_shift must be < 32");
  }

  friend bool operator==(const LifParams&, const LifParams&) = default;
};

/// Integer threshold for theta = 0.5 at accumulator scale 2^scale_exp.
inline std::int32_t half_threshold_for_scale(std::int32_t scale_exp) {
  if (scale_exp >= 0) return 1;
  if (scale_exp < -31) throw ConfigError("accumulator scale too small for threshold");
  return static_cast<std::int32_t>(std::int64_t{1} << (-scale_exp - 1));
}

struct LifStep {
  bool spike = false;
  std::int32_t potential = 0;  // integrated value compared with the threshold
  std::int32_t carry = 0;      // state handed to the next step (0 after a spike)
};

/// One neuron update. `carry` is the post-reset state of the previous step.
inline LifStep lif_step(std::int32_t carry, std::int32_t current, const LifParams& p) {
  const std::int64_t u = static_cast<std::int64_t>(carry >> p.leak_shift) + current;
  LifStep s;
  s.potential = checked_i32(u, "LIF membrane");
  s.spike = s.potential >= p.threshold;
  s.carry = s.spike ? 0 : s.potential;
  return s;
}

struct LifResult {
  SpikeTensor spikes;
  AccTensor final_membrane;  // post-reset state after the last step
};

/// Sequential LIF over the leading time dimension of `currents`. Each element
/// evolves independently from a zero membrane.
inline LifResult lif_seq(const AccTensor& currents, const LifParams& p) {
  p.validate();
  const Shape& shape = currents.shape();
  if (shape.empty() || !valid_time_steps(shape[0])) {
    throw ShapeError("lif_seq needs a leading time dimension of 1, 2 or 4, got " + shape_str(shape));
  }
  const std::uint32_t steps = shape[0];
  const std::size_t n = currents.size() / steps;
  Shape mshape(shape.begin() + 1, shape.end());
  LifResult r{SpikeTensor(shape), AccTensor(mshape, currents.scale_exp())};
  auto in = currents.data();
  auto mem = r.final_membrane.mutable_data();
  for (std::size_t i = 0; i < n; ++i) {
    std::int32_t carry = 0;
    for (std::uint32_t t = 0; t < steps; ++t) {
      const LifStep s = lif_step(carry, in[t * n + i], p);
      if (s.spike) r.spikes.set_flat(t * n + i, true);
      carry = s.carry;
    }
    mem[i] = carry;
  }
  return r;
}

}  // namespace siaf
