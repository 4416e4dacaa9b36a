#pragma once

// Fixed renders compared byte-for-byte against tests/golden.
// Set ABM_UPDATE_GOLDEN=1 to rewrite the committed files.

#include <cstdlib>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "abm/adjoint.hpp"
#include "abm/backmap.hpp"
#include "abm/random.hpp"
#include "abm/render.hpp"

namespace abm::test {

struct GoldenRender {
  std::string file;
  Image image;
};

inline Tensor<float> golden_input(std::uint64_t seed) {
  Rng rng(seed);
  Tensor<float> x(Shape{8, 8, 3});
  for (float& v : x.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return x;
}

inline std::vector<GoldenRender> golden_renders() {
  const auto net = build_tiny<float>({8, 8, 3}, 10, 2024);
  const auto x = golden_input(7);
  auto shifted = x;
  Rng rng(8);
  for (float& v : shifted.data()) v += static_cast<float>(rng.uniform(-0.5, 0.5));
  const auto tr = trace(net, x);
  const auto tr_shifted = trace(net, shifted);

  std::vector<Hypersurface<float>> strides;
  for (long s = 0; s < 64; ++s) strides.push_back(rm4(net, tr, 1, 0, 0, s));
  std::vector<Hypersurface<float>> channels;
  for (long j = 0; j < 4; ++j)
    for (long i = 0; i < 4; ++i) channels.push_back(rm3(net, tr, 1, j, i));
  std::vector<Hypersurface<float>> classes;
  for (long k = 0; k < 10; ++k) classes.push_back(rm0(net, tr, k));

  return {
      {"tiny_rm4_conv1_0_0.png", tile_strides(strides, 8)},
      {"tiny_rm3_conv1.png", tile_channels(channels)},
      {"tiny_rm0_fc.png", class_grid(classes)},
      {"tiny_rm3_conv1_difference.png", difference_image(rm3(net, tr, 1, 0, 0), rm3(net, tr_shifted, 1, 0, 0))},
  };
}

inline bool updating_goldens() {
  const char* flag = std::getenv("ABM_UPDATE_GOLDEN");
  return flag != nullptr && std::string(flag) == "1";
}

}  // namespace abm::test
