#pragma once

#include "sketchfill/image.hpp"

namespace sketchfill {

enum class ReferenceSource { external, self_reference };

/// Exemplar image x_r, already squashed to the encoder's square input size.
struct ReferenceImage {
  Image pixels;
  ReferenceSource source = ReferenceSource::external;
};

/// Bilinear resize to target x target (aspect not preserved).
ReferenceImage resize_reference(const Image& x, int target,
                                ReferenceSource source = ReferenceSource::external);

}  // namespace sketchfill
