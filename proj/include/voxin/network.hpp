#pragma once

#include <optional>
#include <variant>
#include <vector>

#include "voxin/common.hpp"

namespace vx {

enum class Activation : unsigned char { identity, relu };

// How a pooling layer is realized: plain pooling subsamples (extent must be
// divisible by the window); fragment pooling keeps every window offset as an
// extra batch entry (extent+1 must be divisible) so the sliding-window output
// stays dense.
enum class PoolMode : unsigned char { plain, fragments };

struct ConvSpec {
  i64 features_out = 1;
  vec3 kernel;
  Activation act = Activation::identity;
};

struct PoolSpec {
  vec3 window;
  std::optional<PoolMode> forced_mode;  // pinned in the network file; planner decides otherwise
};

using LayerSpec = std::variant<ConvSpec, PoolSpec>;

struct NetworkSpec {
  i64 features_in = 1;
  std::vector<LayerSpec> layers;

  i64 conv_count() const {
    i64 c = 0;
    for (const auto& l : layers) c += std::holds_alternative<ConvSpec>(l) ? 1 : 0;
    return c;
  }
  i64 pool_count() const { return static_cast<i64>(layers.size()) - conv_count(); }

  // feature maps entering layer `at` (layers.size() gives the network output count)
  i64 features_entering(std::size_t at) const {
    i64 f = features_in;
    for (std::size_t l = 0; l < at && l < layers.size(); ++l)
      if (const auto* c = std::get_if<ConvSpec>(&layers[l])) f = c->features_out;
    return f;
  }
  i64 features_out() const { return features_entering(layers.size()); }

  void validate() const {
    require(features_in > 0, "NetworkSpec: features_in must be positive");
    require(!layers.empty(), "NetworkSpec: at least one layer required");
    for (const auto& l : layers) {
      if (const auto* c = std::get_if<ConvSpec>(&l)) {
        require(c->features_out > 0, "NetworkSpec: conv features_out must be positive");
        require(c->kernel.all_positive(), "NetworkSpec: conv kernel extents must be positive");
      } else {
        const auto& p = std::get<PoolSpec>(l);
        require(p.window.all_positive(), "NetworkSpec: pool window extents must be positive");
      }
    }
  }
};

}  // namespace vx
